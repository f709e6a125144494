#include "hbmc/params.hpp"

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace hbmc {

const char* activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "linear";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw ConfigError("unknown activation: " + s);
}

int NetworkParams::add_layer(int out, int in, Activation act) {
    if (out <= 0 || in <= 0) throw StructuralError("add_layer: non-positive dimension");
    int k = static_cast<int>(layers.size());
    layers.push_back({out, in, act});
    w_off.push_back(values.size());
    values.resize(values.size() + static_cast<size_t>(out) * in, 0.0);
    b_off.push_back(values.size());
    values.resize(values.size() + out, 0.0);
    return k;
}

void NetworkParams::validate() const {
    if (layers.size() != w_off.size() || layers.size() != b_off.size())
        throw StructuralError("params: offset tables out of sync");
    size_t expect = 0;
    for (size_t k = 0; k < layers.size(); ++k) {
        if (w_off[k] != expect) throw StructuralError("params: bad weight offset");
        expect += static_cast<size_t>(layers[k].out) * layers[k].in;
        if (b_off[k] != expect) throw StructuralError("params: bad bias offset");
        expect += layers[k].out;
    }
    if (expect != values.size()) throw StructuralError("params: value count mismatch");
    if (!all_finite(values)) throw NumericalError("params: non-finite parameter value");
}

void MlpView::check_chain(const NetworkParams& p) const {
    if (count <= 0 || first < 0 || first + count > static_cast<int>(p.layers.size()))
        throw StructuralError("mlp view out of range");
    for (int k = first; k + 1 < first + count; ++k)
        if (p.layers[k].out != p.layers[k + 1].in)
            throw StructuralError("mlp view: layer dimension chain broken at layer " +
                                  std::to_string(k));
}

void init_he_uniform(NetworkParams& p, Rng& rng) {
    // Zero biases would make the whole net positively homogeneous (no bias
    // anywhere to break scale), leaving relu units whose input cone falls in
    // their negative half-space permanently dead. A small positive bias lets
    // any near-zero input activate every unit at least once.
    for (size_t k = 0; k < p.layers.size(); ++k) {
        double limit = std::sqrt(6.0 / p.layers[k].in);
        for (double& v : p.w(k)) v = rng.uniform(-limit, limit);
        for (double& v : p.b(k)) v = 0.01;
    }
}

OptState OptState::zeros_for(const NetworkParams& p) {
    OptState s;
    s.m.assign(p.total_count(), 0.0);
    s.v.assign(p.total_count(), 0.0);
    return s;
}

void adam_step(NetworkParams& p, OptState& s, std::span<const double> grad, double lr,
               double beta1, double beta2, double eps) {
    if (grad.size() != p.total_count() || s.m.size() != grad.size() || s.v.size() != grad.size())
        throw StructuralError("adam_step: size mismatch");
    s.step += 1;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
    for (size_t i = 0; i < grad.size(); ++i) {
        double g = grad[i];
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
        p.values[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
    }
    if (!all_finite(p.values)) throw NumericalError("adam_step: parameters became non-finite");
}

void rmsprop_step(NetworkParams& p, OptState& s, std::span<const double> grad, double lr,
                  double decay, double eps) {
    if (grad.size() != p.total_count() || s.v.size() != grad.size())
        throw StructuralError("rmsprop_step: size mismatch");
    s.step += 1;
    for (size_t i = 0; i < grad.size(); ++i) {
        double g = grad[i];
        s.v[i] = decay * s.v[i] + (1.0 - decay) * g * g;
        p.values[i] -= lr * g / (std::sqrt(s.v[i]) + eps);
    }
    if (!all_finite(p.values)) throw NumericalError("rmsprop_step: parameters became non-finite");
}

double cosine_lr(double initial_lr, long step, long total_steps) {
    if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be > 0");
    // cos(pi) lands an ulp off -1 through libm, which would leave a ~1e-20
    // residue at the horizon; pin the endpoint so "decayed to zero" is literal.
    if (step >= total_steps) return 0.0;
    long t = std::max(step, 0l);
    return initial_lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(t) / total_steps));
}

namespace {

void write_blob(std::ofstream& f, std::span<const double> v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_blob(std::ifstream& f, size_t count) {
    std::vector<double> v(count);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw StructuralError("checkpoint blob truncated");
    return v;
}

std::string basename_of(const std::string& path) {
    size_t pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

void save_checkpoint(const std::string& prefix, const NetworkParams& p,
                     const nlohmann::json& extra, const OptState* opt) {
    p.validate();
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "checkpoint";
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerShape& l : p.layers)
        layers.push_back({{"out", l.out}, {"in", l.in}, {"act", activation_name(l.act)}});
    j["layers"] = std::move(layers);
    j["param_count"] = p.total_count();
    nlohmann::json sections = nlohmann::json::array();
    sections.push_back({{"name", "params"}, {"count", p.total_count()}});
    if (opt) {
        sections.push_back({{"name", "opt_m"}, {"count", opt->m.size()}});
        sections.push_back({{"name", "opt_v"}, {"count", opt->v.size()}});
        j["opt_step"] = opt->step;
    }
    j["blob"] = {{"file", basename_of(prefix) + ".bin"},
                 {"byte_order", "little"},
                 {"dtype", "float64"},
                 {"sections", std::move(sections)}};
    if (!extra.is_null()) j["extra"] = extra;

    std::ofstream jf(prefix + ".json");
    if (!jf) throw ConfigError("cannot write checkpoint manifest: " + prefix + ".json");
    jf << j.dump(2) << "\n";

    std::ofstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw ConfigError("cannot write checkpoint blob: " + prefix + ".bin");
    write_blob(bf, p.values);
    if (opt) {
        write_blob(bf, opt->m);
        write_blob(bf, opt->v);
    }
}

Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw ConfigError("cannot open checkpoint manifest: " + prefix + ".json");
    nlohmann::json j;
    try {
        jf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("checkpoint manifest parse: ") + e.what());
    }

    Checkpoint ck;
    ck.manifest = j;
    try {
        if (j.value("kind", "") != "checkpoint")
            throw StructuralError("not a checkpoint manifest: " + prefix + ".json");
        for (const auto& l : j.at("layers"))
            ck.params.add_layer(l.at("out").get<int>(), l.at("in").get<int>(),
                                activation_from_name(l.at("act").get<std::string>()));
        if (j.at("param_count").get<size_t>() != ck.params.total_count())
            throw StructuralError("checkpoint param_count disagrees with layer shapes");
        if (j.at("blob").at("byte_order").get<std::string>() != "little" ||
            j.at("blob").at("dtype").get<std::string>() != "float64")
            throw StructuralError("unsupported checkpoint blob encoding");

        std::ifstream bf(prefix + ".bin", std::ios::binary);
        if (!bf) throw ConfigError("cannot open checkpoint blob: " + prefix + ".bin");
        bool have_opt = false;
        for (const auto& sec : j.at("blob").at("sections")) {
            std::string name = sec.at("name").get<std::string>();
            size_t count = sec.at("count").get<size_t>();
            if (name == "params") {
                if (count != ck.params.total_count())
                    throw StructuralError("checkpoint params section has wrong count");
                ck.params.values = read_blob(bf, count);
            } else if (name == "opt_m" || name == "opt_v") {
                if (!have_opt) {
                    ck.opt = OptState{};
                    ck.opt->step = j.value("opt_step", 0l);
                    have_opt = true;
                }
                (name == "opt_m" ? ck.opt->m : ck.opt->v) = read_blob(bf, count);
            } else {
                throw StructuralError("unknown checkpoint section: " + name);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("checkpoint manifest: ") + e.what());
    }
    ck.params.validate();
    return ck;
}

}  // namespace hbmc
