#include <cstdio>

#include "CLI11.hpp"
#include "hbmc/cli.hpp"

namespace {

// Applies a flag only when the user actually passed it, so config-file values
// survive untouched otherwise.
template <typename T>
void maybe(CLI::App* cmd, const char* flag, T& dst, const T& src) {
    if (cmd->count(flag)) dst = src;
}

void lohi(const std::vector<int>& v, hbmc::SizeDist& dst) {
    if (v.empty()) return;
    dst.lo = v.front();
    dst.hi = v.back();
}

int run(int argc, char** argv) {
    CLI::App app{"Hierarchical Bayesian model comparison via amortized neural classifiers"};
    app.require_subcommand(1);
    int rc = 0;

    // --- simulate ---------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Draw datasets from one model family");
    hbmc::SimulateArgs sa;
    std::vector<int> sim_groups, sim_obs;
    sim->add_option("--family", sa.family, "model family")->capture_default_str();
    sim->add_option("--count", sa.count, "number of datasets")->capture_default_str();
    sim->add_option("--groups", sim_groups, "groups per dataset (one value or lo hi)")
        ->expected(1, 2);
    sim->add_option("--obs", sim_obs, "rows per group (one value or lo hi)")->expected(1, 2);
    sim->add_option("--seed", sa.seed, "master seed")->capture_default_str();
    sim->add_option("--out", sa.out_dir, "output directory")->capture_default_str();
    sim->add_option("--jobs", sa.jobs, "worker cap (0 = auto)");
    sim->callback([&] {
        lohi(sim_groups, sa.groups);
        lohi(sim_obs, sa.obs);
        rc = hbmc::cmd_simulate(sa);
    });

    // --- train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a model-comparison network");
    std::string tr_config;
    hbmc::TrainOptions topt;
    std::vector<std::string> tr_models;
    std::vector<int> tr_groups, tr_obs;
    std::string tr_out, tr_optimizer, tr_regime;
    long tr_steps = 0, tr_val_every = 0, tr_ck_every = 0, tr_sched = 0;
    int tr_epochs = 0, tr_batch = 0, tr_val_sets = 0, tr_jobs = 0;
    double tr_lr = 0.0, tr_mask_mean = 0.0, tr_mask_sd = 0.0;
    uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config, "JSON run config");
    tr->add_option("--models", tr_models, "model family names")->expected(-2);
    tr->add_option("--out", tr_out, "run directory");
    tr->add_option("--seed", tr_seed, "master seed");
    tr->add_option("--jobs", tr_jobs, "worker cap (0 = auto)");
    tr->add_option("--steps", tr_steps, "online training steps");
    tr->add_option("--epochs", tr_epochs, "offline training epochs");
    tr->add_option("--batch", tr_batch, "batch size");
    tr->add_option("--lr", tr_lr, "initial learning rate");
    tr->add_option("--schedule-total", tr_sched, "cosine schedule horizon");
    tr->add_option("--optimizer", tr_optimizer, "adam or rmsprop");
    tr->add_option("--regime", tr_regime, "online or offline");
    tr->add_option("--groups", tr_groups, "groups per dataset (one value or lo hi)")
        ->expected(1, 2);
    tr->add_option("--obs", tr_obs, "rows per group (one value or lo hi)")->expected(1, 2);
    tr->add_option("--mask-mean", tr_mask_mean, "mean masked rows per group (enables masking)");
    tr->add_option("--mask-sd", tr_mask_sd, "sd of masked rows per group");
    tr->add_option("--val-sets", tr_val_sets, "validation datasets");
    tr->add_option("--val-every", tr_val_every, "validation cadence in steps");
    tr->add_option("--checkpoint-every", tr_ck_every, "checkpoint cadence in steps");
    tr->add_option("--pretrained", topt.pretrained, "checkpoint prefix to fine-tune from");
    tr->add_option("--store", topt.store_dir, "offline dataset store directory");
    tr->add_option("--store-per-model", topt.store_per_model,
                   "simulate an offline store with this many sets per model");
    tr->add_flag("--save-store", topt.save_store, "write the simulated store to the run dir");
    tr->callback([&] {
        hbmc::RunConfig run = hbmc::RunConfig::load(tr_config);
        maybe(tr, "--models", run.models, tr_models);
        maybe(tr, "--out", run.out_dir, tr_out);
        maybe(tr, "--seed", run.training.seed, tr_seed);
        maybe(tr, "--jobs", run.jobs, tr_jobs);
        maybe(tr, "--steps", run.training.steps, tr_steps);
        maybe(tr, "--epochs", run.training.epochs, tr_epochs);
        maybe(tr, "--batch", run.training.batch_size, tr_batch);
        maybe(tr, "--lr", run.training.initial_lr, tr_lr);
        maybe(tr, "--schedule-total", run.training.schedule_total, tr_sched);
        if (tr->count("--optimizer"))
            run.training.optimizer = hbmc::optimizer_from_name(tr_optimizer);
        if (tr->count("--regime")) run.training.regime = hbmc::regime_from_name(tr_regime);
        if (tr->count("--groups")) lohi(tr_groups, run.training.m_sizes);
        if (tr->count("--obs")) lohi(tr_obs, run.training.n_sizes);
        if (tr->count("--mask-mean") || tr->count("--mask-sd")) {
            hbmc::MaskAugment m = run.training.mask.value_or(hbmc::MaskAugment{});
            maybe(tr, "--mask-mean", m.mean, tr_mask_mean);
            maybe(tr, "--mask-sd", m.sd, tr_mask_sd);
            run.training.mask = m;
        }
        maybe(tr, "--val-sets", run.training.val_sets, tr_val_sets);
        maybe(tr, "--val-every", run.training.val_every, tr_val_every);
        maybe(tr, "--checkpoint-every", run.training.checkpoint_every, tr_ck_every);
        rc = hbmc::cmd_train(run, topt);
    });

    // --- validate ---------------------------------------------------------
    auto* va = app.add_subcommand("validate", "Evaluate a checkpoint on held-out simulations");
    hbmc::ValidateArgs vva;
    va->add_option("--checkpoint", vva.checkpoint, "checkpoint prefix")->required();
    va->add_option("--models", vva.models, "override the checkpoint's model set")->expected(-2);
    va->add_option("--sets", vva.sets, "datasets per repetition")->capture_default_str();
    va->add_option("--repetitions", vva.repetitions, "independent repetitions")
        ->capture_default_str();
    va->add_option("--grid-m", vva.grid_m, "group-count grid values");
    va->add_option("--grid-n", vva.grid_n, "rows-per-group grid values");
    va->add_option("--groups", vva.groups, "groups per dataset")->capture_default_str();
    va->add_option("--obs", vva.obs, "rows per group")->capture_default_str();
    va->add_option("--bins", vva.bins, "calibration bins")->capture_default_str();
    va->add_option("--seed", vva.seed, "master seed")->capture_default_str();
    va->add_option("--out", vva.out_dir, "output directory")->capture_default_str();
    va->add_option("--jobs", vva.jobs, "worker cap (0 = auto)");
    va->callback([&] { rc = hbmc::cmd_validate(vva); });

    // --- compare ----------------------------------------------------------
    auto* co = app.add_subcommand("compare", "Posterior probabilities and Bayes factors");
    hbmc::CompareArgs ca;
    co->add_option("--checkpoint", ca.checkpoint, "checkpoint prefix")->required();
    co->add_option("datasets", ca.dataset_files, "dataset JSON files")->required();
    co->add_option("--ref", ca.reference, "reference model index for Bayes factor columns")
        ->capture_default_str();
    co->add_option("--out", ca.out_dir, "output directory")->capture_default_str();
    co->callback([&] { rc = hbmc::cmd_compare(ca); });

    // --- oracle -----------------------------------------------------------
    auto* orc = app.add_subcommand(
        "oracle", "Quadrature marginal likelihoods for the hierarchical normal pair");
    hbmc::OracleArgs oa;
    bool no_check = false;
    orc->add_option("datasets", oa.dataset_files, "dataset JSON files")->required();
    orc->add_option("--checkpoint", oa.checkpoint,
                    "optional checkpoint to compare the network against");
    orc->add_option("--nodes", oa.quadrature.nodes, "quadrature nodes per axis")
        ->capture_default_str();
    orc->add_option("--prior-mass", oa.quadrature.prior_mass, "prior mass inside the bounds")
        ->capture_default_str();
    orc->add_option("--stability-tol", oa.quadrature.stability_tol,
                    "node-doubling tolerance in nats")
        ->capture_default_str();
    orc->add_flag("--no-stability-check", no_check, "skip the node-doubling check");
    orc->add_option("--out", oa.out_dir, "output directory")->capture_default_str();
    orc->callback([&] {
        oa.quadrature.check_stability = !no_check;
        rc = hbmc::cmd_oracle(oa);
    });

    // --- perturb ----------------------------------------------------------
    auto* pe = app.add_subcommand("perturb", "Robustness of PMPs under data perturbations");
    hbmc::PerturbArgs pa;
    pe->add_option("--checkpoint", pa.checkpoint, "checkpoint prefix")->required();
    pe->add_option("--dataset", pa.dataset_file, "dataset JSON file")->required();
    pe->add_option("--mode", pa.mode, "bootstrap-groups | leave-one-group-out | mask-sweep")
        ->capture_default_str();
    pe->add_option("--reps", pa.reps, "repetitions per setting")->capture_default_str();
    pe->add_option("--seed", pa.seed, "master seed")->capture_default_str();
    pe->add_option("--out", pa.out_dir, "output directory")->capture_default_str();
    pe->add_option("--jobs", pa.jobs, "worker cap (0 = auto)");
    pe->callback([&] { rc = hbmc::cmd_perturb(pa); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hbmc::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const hbmc::StructuralError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const hbmc::AccuracyError& e) {
        std::fprintf(stderr, "accuracy failure: %s\n", e.what());
        return 4;
    } catch (const hbmc::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const hbmc::DomainError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
