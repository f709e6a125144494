#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbmc/common.hpp"
#include "hbmc/rng.hpp"

#include "json.hpp"

namespace hbmc {

enum class Activation { linear, relu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct LayerShape {
    int out = 0;
    int in = 0;
    Activation act = Activation::linear;
};

// Flat parameter storage for a whole network. Layer k occupies
// [w_off[k], w_off[k] + out*in) for the weight matrix (row-major, out x in)
// followed by [b_off[k], b_off[k] + out) for the bias. Keeping everything in
// one vector makes the optimizers and checkpointing trivial.
struct NetworkParams {
    std::vector<LayerShape> layers;
    std::vector<double> values;
    std::vector<size_t> w_off, b_off;

    int add_layer(int out, int in, Activation act);

    size_t total_count() const { return values.size(); }

    std::span<double> w(int k) {
        return {values.data() + w_off[k], static_cast<size_t>(layers[k].out) * layers[k].in};
    }
    std::span<const double> w(int k) const {
        return {values.data() + w_off[k], static_cast<size_t>(layers[k].out) * layers[k].in};
    }
    std::span<double> b(int k) {
        return {values.data() + b_off[k], static_cast<size_t>(layers[k].out)};
    }
    std::span<const double> b(int k) const {
        return {values.data() + b_off[k], static_cast<size_t>(layers[k].out)};
    }

    void validate() const;
};

// Contiguous run of layers forming one MLP inside a NetworkParams.
struct MlpView {
    int first = 0;
    int count = 0;

    int in_dim(const NetworkParams& p) const { return p.layers[first].in; }
    int out_dim(const NetworkParams& p) const { return p.layers[first + count - 1].out; }
    void check_chain(const NetworkParams& p) const;
};

// He-uniform fan-in initialization: W ~ U(-sqrt(6/in), sqrt(6/in)), b = 0.01
// (small positive so no relu unit starts dead for every input).
void init_he_uniform(NetworkParams& p, Rng& rng);

struct OptState {
    std::vector<double> m;  // first moments (Adam only)
    std::vector<double> v;  // second moments
    long step = 0;

    static OptState zeros_for(const NetworkParams& p);
};

void adam_step(NetworkParams& p, OptState& s, std::span<const double> grad, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

void rmsprop_step(NetworkParams& p, OptState& s, std::span<const double> grad, double lr,
                  double decay = 0.9, double eps = 1e-8);

// Cosine decay from initial_lr to 0 over total_steps; flat 0 afterwards.
double cosine_lr(double initial_lr, long step, long total_steps);

// Checkpoints are a JSON manifest (<prefix>.json) plus a little-endian float64
// blob (<prefix>.bin) holding the parameter vector and optionally the
// optimizer moments, in the order declared by the manifest's sections.
struct Checkpoint {
    NetworkParams params;
    nlohmann::json manifest;
    std::optional<OptState> opt;
};

void save_checkpoint(const std::string& prefix, const NetworkParams& p,
                     const nlohmann::json& extra, const OptState* opt = nullptr);
Checkpoint load_checkpoint(const std::string& prefix);

}  // namespace hbmc
