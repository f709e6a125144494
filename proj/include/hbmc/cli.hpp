#pragma once

#include "hbmc/oracle.hpp"
#include "hbmc/trainer.hpp"

namespace hbmc {

// Everything a training run needs, loadable from a JSON config file. Command
// line flags override individual keys after the file is read.
struct RunConfig {
    std::string experiment = "run";
    std::vector<std::string> models = {"normal-M1", "normal-M2"};
    SummaryConfig summary;
    TrainingConfig training;
    QuadratureConfig quadrature;
    std::string out_dir = "out/train";
    int jobs = 0;  // 0 = HBMC_JOBS env, then hardware

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
};

// Checkpoint plus the network rebuilt from its embedded description.
struct LoadedNet {
    SummaryNet net;
    NetworkParams params;
    std::vector<std::string> models;
    nlohmann::json manifest;
};
LoadedNet load_network(const std::string& checkpoint_prefix);

struct SimulateArgs {
    std::string family = "normal-M1";
    int count = 1;
    SizeDist groups{25, 25}, obs{25, 25};
    uint64_t seed = 0;
    std::string out_dir = "out/simulate";
    int jobs = 0;
};
int cmd_simulate(const SimulateArgs& a);

struct TrainOptions {
    std::string pretrained;  // checkpoint prefix to fine-tune from
    std::string store_dir;   // offline regime: load the dataset store from here
    int store_per_model = 0;  // offline regime: or simulate this many per model
    bool save_store = false;  // keep a simulated store under the run directory
};
int cmd_train(const RunConfig& run, const TrainOptions& opt);

struct ValidateArgs {
    std::string checkpoint;
    std::vector<std::string> models;  // empty = the checkpoint's model set
    int sets = 100;
    int repetitions = 1;
    std::vector<int> grid_m, grid_n;  // empty = single cell {groups} x {obs}
    int groups = 25, obs = 25;
    int bins = 10;
    uint64_t seed = 0;
    std::string out_dir = "out/validate";
    int jobs = 0;
};
int cmd_validate(const ValidateArgs& a);

struct CompareArgs {
    std::string checkpoint;
    std::vector<std::string> dataset_files;
    int reference = 0;  // model index the Bayes factor columns are relative to
    std::string out_dir = "out/compare";
};
int cmd_compare(const CompareArgs& a);

struct OracleArgs {
    std::vector<std::string> dataset_files;
    QuadratureConfig quadrature;
    std::string checkpoint;  // optional; adds network columns and a scatter CSV
    std::string out_dir = "out/oracle";
};
int cmd_oracle(const OracleArgs& a);

struct PerturbArgs {
    std::string checkpoint;
    std::string dataset_file;
    std::string mode = "mask-sweep";  // bootstrap-groups | leave-one-group-out | mask-sweep
    int reps = 100;
    uint64_t seed = 0;
    std::string out_dir = "out/perturb";
    int jobs = 0;
};
int cmd_perturb(const PerturbArgs& a);

// Copy of `data` with round(fraction * N_m) rows per group masked out (capped
// so at least one row stays observed). fraction = 0 returns the input
// unchanged. Used by the mask-sweep mode and its tests.
HierarchicalDataset mask_fraction(const HierarchicalDataset& data, double fraction, Rng& rng);

}  // namespace hbmc
