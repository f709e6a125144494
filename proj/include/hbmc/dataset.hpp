#pragma once

#include <string>
#include <vector>

#include "hbmc/common.hpp"

#include "json.hpp"

namespace hbmc {

// One simulated or observed dataset: M groups of exchangeable rows
// (group m holds N_m rows of feature_dim columns). An optional mask marks
// rows as observed (1) or missing (0); absent mask means fully observed.
struct HierarchicalDataset {
    struct Meta {
        std::string family;
        int model_index = -1;  // -1 when the generating model is unknown
        uint64_t seed = 0;
    };

    Meta meta;
    std::vector<Mat> groups;
    std::vector<std::vector<uint8_t>> mask;  // empty, or one vector per group

    int num_groups() const { return static_cast<int>(groups.size()); }
    int feature_dim() const { return groups.empty() ? 0 : groups.front().cols(); }
    bool has_mask() const { return !mask.empty(); }

    // Rows of group m that enter pooling.
    int observed_count(int m) const;
    long total_rows() const;

    // Throws StructuralError on shape violations, NumericalError on non-finite
    // entries. Every group must keep at least one observed row.
    void validate() const;
};

nlohmann::json dataset_to_json(const HierarchicalDataset& d);
HierarchicalDataset dataset_from_json(const nlohmann::json& j);

void save_dataset(const std::string& path, const HierarchicalDataset& d);
HierarchicalDataset load_dataset(const std::string& path);

}  // namespace hbmc
