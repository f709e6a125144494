#include "hbmc/dataset.hpp"

#include <fstream>

namespace hbmc {

int HierarchicalDataset::observed_count(int m) const {
    if (mask.empty()) return groups[m].rows();
    int c = 0;
    for (uint8_t v : mask[m]) c += (v != 0);
    return c;
}

long HierarchicalDataset::total_rows() const {
    long n = 0;
    for (const Mat& g : groups) n += g.rows();
    return n;
}

void HierarchicalDataset::validate() const {
    if (groups.empty()) throw StructuralError("dataset: no groups");
    int d = groups.front().cols();
    if (d <= 0) throw StructuralError("dataset: zero feature dimension");
    for (size_t m = 0; m < groups.size(); ++m) {
        const Mat& g = groups[m];
        if (g.rows() <= 0)
            throw StructuralError("dataset: group " + std::to_string(m) + " is empty");
        if (g.cols() != d)
            throw StructuralError("dataset: group " + std::to_string(m) +
                                  " feature dimension mismatch");
        if (!all_finite(g.flat()))
            throw NumericalError("dataset: non-finite value in group " + std::to_string(m));
    }
    if (!mask.empty()) {
        if (mask.size() != groups.size())
            throw StructuralError("dataset: mask group count mismatch");
        for (size_t m = 0; m < mask.size(); ++m) {
            if (static_cast<int>(mask[m].size()) != groups[m].rows())
                throw StructuralError("dataset: mask length mismatch in group " +
                                      std::to_string(m));
            int obs = 0;
            for (uint8_t v : mask[m]) {
                if (v > 1)
                    throw StructuralError("dataset: mask entries must be 0 or 1");
                obs += v;
            }
            if (obs == 0)
                throw StructuralError("dataset: group " + std::to_string(m) +
                                      " has no observed rows");
        }
    }
}

nlohmann::json dataset_to_json(const HierarchicalDataset& d) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["meta"] = {{"family", d.meta.family},
                 {"model_index", d.meta.model_index},
                 {"seed", d.meta.seed}};
    nlohmann::json groups = nlohmann::json::array();
    for (const Mat& g : d.groups) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < g.rows(); ++r)
            rows.push_back(std::vector<double>(g.row(r), g.row(r) + g.cols()));
        groups.push_back(std::move(rows));
    }
    j["groups"] = std::move(groups);
    if (d.has_mask()) {
        nlohmann::json mask = nlohmann::json::array();
        for (const auto& mrow : d.mask) mask.push_back(std::vector<int>(mrow.begin(), mrow.end()));
        j["mask"] = std::move(mask);
    }
    return j;
}

HierarchicalDataset dataset_from_json(const nlohmann::json& j) {
    HierarchicalDataset d;
    try {
        if (j.contains("meta")) {
            const auto& m = j.at("meta");
            d.meta.family = m.value("family", "");
            d.meta.model_index = m.value("model_index", -1);
            d.meta.seed = m.value("seed", uint64_t{0});
        }
        const auto& groups = j.at("groups");
        for (const auto& rows : groups) {
            if (rows.empty()) throw StructuralError("dataset json: empty group");
            int cols = static_cast<int>(rows.front().size());
            Mat g(static_cast<int>(rows.size()), cols);
            for (int r = 0; r < g.rows(); ++r) {
                const auto& row = rows.at(r);
                if (static_cast<int>(row.size()) != cols)
                    throw StructuralError("dataset json: ragged rows within a group");
                for (int c = 0; c < cols; ++c) g(r, c) = row.at(c).get<double>();
            }
            d.groups.push_back(std::move(g));
        }
        if (j.contains("mask")) {
            for (const auto& mrow : j.at("mask")) {
                std::vector<uint8_t> mv;
                for (const auto& v : mrow) mv.push_back(static_cast<uint8_t>(v.get<int>()));
                d.mask.push_back(std::move(mv));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("dataset json: ") + e.what());
    }
    d.validate();
    return d;
}

void save_dataset(const std::string& path, const HierarchicalDataset& d) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << dataset_to_json(d).dump() << "\n";
}

HierarchicalDataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("dataset json parse: ") + e.what());
    }
    return dataset_from_json(j);
}

}  // namespace hbmc
