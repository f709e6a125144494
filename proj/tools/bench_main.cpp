// Timing harness for the kernels that matter: forward passes (reference
// matrix path vs the transposed fast-weight path), batch gradients (serial vs
// OpenMP), simulation, prediction, and the oracle quadrature. Also reports
// the max deviation between the serial and parallel results, which should be
// exactly zero for the gradient path.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hbmc/oracle.hpp"
#include "hbmc/parallel.hpp"
#include "hbmc/trainer.hpp"

using namespace hbmc;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <typename Fn>
double time_ms(int reps, Fn&& fn) {
    double t0 = now_ms();
    for (int r = 0; r < reps; ++r) fn();
    return (now_ms() - t0) / reps;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel timings: serial reference vs parallel/fast paths"};
    int jobs = 0, batch = 32, reps = 5, groups = 25, obs = 25;
    uint64_t seed = 7;
    app.add_option("--jobs", jobs, "worker cap (0 = auto)");
    app.add_option("--batch", batch, "gradient batch size")->capture_default_str();
    app.add_option("--reps", reps, "timing repetitions")->capture_default_str();
    app.add_option("--groups", groups, "groups per dataset")->capture_default_str();
    app.add_option("--obs", obs, "rows per group")->capture_default_str();
    app.add_option("--seed", seed, "master seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        jobs = resolve_jobs(jobs);
        std::vector<std::string> names{"normal-M1", "normal-M2"};
        std::vector<ModelSpec> model_set = model_set_from_names(names);
        NetworkParams params;
        SummaryNet net = SummaryNet::build(1, 2, SummaryConfig{}, params);
        Rng init = Rng::substream(seed, {1});
        init_he_uniform(params, init);
        FastWeights fw;
        fw.build(params);
        std::printf("network: %zu layers, %zu parameters; jobs=%d\n", params.layers.size(),
                    params.total_count(), jobs);

        TrainingConfig tc;
        tc.batch_size = batch;
        tc.m_sizes = {groups, groups};
        tc.n_sizes = {obs, obs};
        tc.seed = seed;

        // Simulation: one training batch, serial vs parallel.
        double sim_serial = time_ms(reps, [&] { sample_training_batch(model_set, tc, 0, 1); });
        double sim_par = time_ms(reps, [&] { sample_training_batch(model_set, tc, 0, jobs); });
        std::printf("simulate batch (%d sets):   serial %8.2f ms   parallel %8.2f ms   x%.2f\n",
                    batch, sim_serial, sim_par, sim_serial / sim_par);

        LabeledBatch b = sample_training_batch(model_set, tc, 0, jobs);

        // Forward pass: reference matrix path vs fast-weight tape path.
        double fwd_ref = time_ms(reps, [&] {
            for (const auto& d : b.datasets) net.classify(params, d);
        });
        double fwd_fast = time_ms(reps, [&] {
            for (const auto& d : b.datasets) net.classify_fast(params, fw, d);
        });
        double max_dev = 0.0;
        for (const auto& d : b.datasets) {
            PmpVector a = net.classify(params, d);
            PmpVector c = net.classify_fast(params, fw, d);
            for (int j = 0; j < a.size(); ++j) max_dev = std::max(max_dev, std::abs(a[j] - c[j]));
        }
        std::printf("forward (%d sets):          reference %5.2f ms   fast %10.2f ms   x%.2f   max dev %.3g\n",
                    batch, fwd_ref, fwd_fast, fwd_ref / fwd_fast, max_dev);

        // Batch gradient: serial reference vs the OpenMP path.
        std::vector<double> g1(params.total_count()), g2(params.total_count());
        double grad_serial = time_ms(reps, [&] {
            std::fill(g1.begin(), g1.end(), 0.0);
            batch_gradient_serial(net, params, fw, b, g1);
        });
        double grad_par = time_ms(reps, [&] {
            std::fill(g2.begin(), g2.end(), 0.0);
            batch_gradient(net, params, fw, b, g2, jobs);
        });
        double gdev = 0.0;
        for (size_t i = 0; i < g1.size(); ++i) gdev = std::max(gdev, std::abs(g1[i] - g2[i]));
        std::printf("batch gradient (%d sets):   serial %8.2f ms   parallel %8.2f ms   x%.2f   max dev %.3g\n",
                    batch, grad_serial, grad_par, grad_serial / grad_par, gdev);

        // Prediction over a held-out corpus.
        double pred_serial =
            time_ms(reps, [&] { predict_corpus(net, params, b.datasets, b.labels, 1); });
        double pred_par =
            time_ms(reps, [&] { predict_corpus(net, params, b.datasets, b.labels, jobs); });
        std::printf("predict corpus (%d sets):   serial %8.2f ms   parallel %8.2f ms   x%.2f\n",
                    batch, pred_serial, pred_par, pred_serial / pred_par);

        // Oracle quadrature on one dataset (includes the node-doubling check).
        QuadratureConfig qc;
        double quad = time_ms(reps, [&] {
            log_marginal_normal(b.datasets.front(), Family::normal_m1, qc);
            log_marginal_normal(b.datasets.front(), Family::normal_m2, qc);
        });
        std::printf("oracle quadrature (1 set):  %8.2f ms (both models, %d nodes)\n", quad,
                    qc.nodes);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bench failed: %s\n", e.what());
        return 1;
    }
}
