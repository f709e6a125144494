#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "hbmc/parallel.hpp"
#include "hbmc/trainer.hpp"
#include "test_util.hpp"

using namespace hbmc;

namespace {

SummaryConfig tiny_config() {
    SummaryConfig cfg;
    cfg.hidden = 16;
    cfg.eq_out1 = 8;
    cfg.eq_out2 = 8;
    cfg.group_dim = 8;
    cfg.summary_dim = 12;
    cfg.head_hidden = 12;
    return cfg;
}

std::vector<ModelSpec> normal_pair() {
    return {ModelSpec::make(Family::normal_m1), ModelSpec::make(Family::normal_m2)};
}

bool datasets_identical(const HierarchicalDataset& a, const HierarchicalDataset& b) {
    if (a.num_groups() != b.num_groups() || a.mask != b.mask) return false;
    for (int m = 0; m < a.num_groups(); ++m) {
        if (a.groups[m].rows() != b.groups[m].rows()) return false;
        if (a.groups[m].cols() != b.groups[m].cols()) return false;
        auto fa = a.groups[m].flat(), fb = b.groups[m].flat();
        if (!std::equal(fa.begin(), fa.end(), fb.begin())) return false;
    }
    return true;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("optimizer and regime names round trip") {
    CHECK(optimizer_from_name(optimizer_name(OptimizerTag::adam)) == OptimizerTag::adam);
    CHECK(optimizer_from_name(optimizer_name(OptimizerTag::rmsprop)) == OptimizerTag::rmsprop);
    CHECK_THROWS_AS(optimizer_from_name("sgd"), ConfigError);
    CHECK(regime_from_name(regime_name(Regime::online)) == Regime::online);
    CHECK(regime_from_name(regime_name(Regime::offline)) == Regime::offline);
    CHECK_THROWS_AS(regime_from_name("streaming"), ConfigError);
}

TEST_CASE("training configuration validates and round trips through json") {
    TrainingConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    cfg.steps = 1200;
    cfg.optimizer = OptimizerTag::rmsprop;
    cfg.initial_lr = 2.5e-4;
    cfg.m_sizes = {1, 100};
    cfg.n_sizes = {5, 50};
    cfg.mask = MaskAugment{5.0, 2.0};
    cfg.seed = 42;
    cfg.val_sets = 100;
    cfg.val_every = 50;
    TrainingConfig back = TrainingConfig::from_json(cfg.to_json());
    CHECK(back.steps == 1200);
    CHECK(back.optimizer == OptimizerTag::rmsprop);
    CHECK(back.initial_lr == 2.5e-4);
    CHECK(back.m_sizes.lo == 1);
    CHECK(back.m_sizes.hi == 100);
    CHECK(back.n_sizes.lo == 5);
    CHECK(back.n_sizes.hi == 50);
    REQUIRE(back.mask.has_value());
    CHECK(back.mask->mean == 5.0);
    CHECK(back.mask->sd == 2.0);
    CHECK(back.seed == 42);
    CHECK(back.val_every == 50);

    TrainingConfig plain;
    CHECK(!TrainingConfig::from_json(plain.to_json()).mask.has_value());

    auto broken = [](auto mutate) {
        TrainingConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    broken([](TrainingConfig& c) { c.batch_size = 0; });
    broken([](TrainingConfig& c) { c.initial_lr = 0.0; });
    broken([](TrainingConfig& c) { c.steps = -1; });
    broken([](TrainingConfig& c) { c.m_sizes = {0, 5}; });
    broken([](TrainingConfig& c) { c.n_sizes = {3, 2}; });
    broken([](TrainingConfig& c) { c.mask = MaskAugment{-1.0, 0.0}; });
}

TEST_CASE("log loss values, floor, and one-hot encoding") {
    PmpVector pmp;
    pmp.p = {0.25, 0.75};
    CHECK(log_loss(pmp, 1) == doctest::Approx(-std::log(0.75)).epsilon(1e-15));
    CHECK(log_loss(pmp, 0) == doctest::Approx(-std::log(0.25)).epsilon(1e-15));
    std::vector<double> oh = {0.0, 1.0};
    CHECK(log_loss(pmp, oh) == log_loss(pmp, 1));

    PmpVector hard;
    hard.p = {1.0, 0.0};
    CHECK(log_loss(hard, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK(log_loss(hard, 0) == 0.0);

    CHECK_THROWS_AS(log_loss(pmp, 2), StructuralError);
    CHECK_THROWS_AS(log_loss(pmp, -1), StructuralError);
    std::vector<double> short_oh = {1.0};
    CHECK_THROWS_AS(log_loss(pmp, short_oh), StructuralError);

    LabeledBatch batch;
    batch.num_models = 3;
    batch.labels = {0, 2, 1};
    Mat enc = batch.one_hot();
    REQUIRE(enc.rows() == 3);
    REQUIRE(enc.cols() == 3);
    for (int b = 0; b < 3; ++b)
        for (int j = 0; j < 3; ++j)
            CHECK(enc(b, j) == (j == batch.labels[b] ? 1.0 : 0.0));
}

TEST_CASE("training batches are labeled and sized as configured") {
    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 64;
    cfg.m_sizes = {3, 3};
    cfg.n_sizes = {4, 4};
    cfg.seed = 7;

    long count0 = 0, total = 0;
    for (long step = 0; step < 8; ++step) {
        LabeledBatch batch = sample_training_batch(set, cfg, step, 2);
        REQUIRE(batch.datasets.size() == 64);
        REQUIRE(batch.labels.size() == 64);
        CHECK(batch.num_models == 2);
        for (size_t b = 0; b < batch.datasets.size(); ++b) {
            const HierarchicalDataset& d = batch.datasets[b];
            CHECK(d.num_groups() == 3);
            for (const Mat& g : d.groups) CHECK(g.rows() == 4);
            CHECK(d.meta.model_index == batch.labels[b]);
            CHECK(!d.has_mask());
            count0 += batch.labels[b] == 0;
            ++total;
        }
    }
    double freq = static_cast<double>(count0) / total;
    CHECK(freq > 0.42);
    CHECK(freq < 0.58);

    std::vector<ModelSpec> single = {ModelSpec::make(Family::normal_m1)};
    CHECK_THROWS_AS(sample_training_batch(single, cfg, 0, 1), ConfigError);
}

TEST_CASE("variable size ranges are fully explored") {
    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 32;
    cfg.m_sizes = {1, 6};
    cfg.n_sizes = {1, 9};
    cfg.seed = 8;

    std::vector<long> m_seen(7, 0), n_seen(10, 0);
    for (long step = 0; step < 16; ++step) {
        LabeledBatch batch = sample_training_batch(set, cfg, step, 2);
        for (const HierarchicalDataset& d : batch.datasets) {
            REQUIRE(d.num_groups() >= 1);
            REQUIRE(d.num_groups() <= 6);
            ++m_seen[d.num_groups()];
            for (const Mat& g : d.groups) {
                REQUIRE(g.rows() >= 1);
                REQUIRE(g.rows() <= 9);
                ++n_seen[g.rows()];
            }
        }
    }
    for (int m = 1; m <= 6; ++m) CHECK(m_seen[m] > 0);
    for (int n = 1; n <= 9; ++n) CHECK(n_seen[n] > 0);
}

TEST_CASE("worker count does not change the sampled batch") {
    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 16;
    cfg.m_sizes = {2, 4};
    cfg.n_sizes = {1, 6};
    cfg.seed = 9;
    LabeledBatch serial = sample_training_batch(set, cfg, 3, 1);
    LabeledBatch threaded = sample_training_batch(set, cfg, 3, 4);
    REQUIRE(serial.datasets.size() == threaded.datasets.size());
    CHECK(serial.labels == threaded.labels);
    for (size_t b = 0; b < serial.datasets.size(); ++b)
        CHECK(datasets_identical(serial.datasets[b], threaded.datasets[b]));

    // A different step index must give different data.
    LabeledBatch other = sample_training_batch(set, cfg, 4, 1);
    bool all_same = true;
    for (size_t b = 0; b < serial.datasets.size(); ++b)
        all_same = all_same && datasets_identical(serial.datasets[b], other.datasets[b]);
    CHECK(!all_same);
}

TEST_CASE("missingness masks the requested count and nothing else") {
    Rng data_rng(70);
    std::vector<int> ns(4, 6);
    HierarchicalDataset d =
        simulate(ModelSpec::make(Family::normal_m2), 4, ns, data_rng);

    Rng rng(71);
    HierarchicalDataset masked = apply_missingness(d, 2.0, 0.0, rng);
    REQUIRE(masked.has_mask());
    for (int m = 0; m < 4; ++m) {
        int zeros = 0;
        for (int r = 0; r < 6; ++r) {
            if (masked.mask[m][r] == 0) {
                ++zeros;
                CHECK(masked.groups[m](r, 0) == 0.0);
            } else {
                CHECK(masked.groups[m](r, 0) == d.groups[m](r, 0));
            }
        }
        CHECK(zeros == 2);
        CHECK(masked.observed_count(m) == 4);
    }

    // Requests beyond the group size stop one short of masking everything.
    Rng rng2(72);
    HierarchicalDataset capped = apply_missingness(d, 50.0, 0.0, rng2);
    for (int m = 0; m < 4; ++m) CHECK(capped.observed_count(m) == 1);

    // Single-row groups are never masked.
    Rng data2(73);
    std::vector<int> ones(3, 1);
    HierarchicalDataset tiny = simulate(ModelSpec::make(Family::normal_m1), 3, ones, data2);
    Rng rng3(74);
    HierarchicalDataset tiny_masked = apply_missingness(tiny, 3.0, 1.0, rng3);
    for (int m = 0; m < 3; ++m) {
        CHECK(tiny_masked.observed_count(m) == 1);
        CHECK(tiny_masked.groups[m](0, 0) == tiny.groups[m](0, 0));
    }
}

TEST_CASE("stochastic mask counts follow the configured mean") {
    Rng data_rng(75);
    std::vector<int> ns(1, 20);
    HierarchicalDataset d = simulate(ModelSpec::make(Family::normal_m1), 1, ns, data_rng);

    Rng rng(76);
    long total = 0;
    const int reps = 3000;
    for (int rep = 0; rep < reps; ++rep) {
        HierarchicalDataset m = apply_missingness(d, 5.0, 1.0, rng);
        total += 20 - m.observed_count(0);
    }
    CHECK(static_cast<double>(total) / reps == doctest::Approx(5.0).epsilon(0.02));
}

TEST_CASE("batch augmentation masks when configured") {
    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 8;
    cfg.m_sizes = {2, 2};
    cfg.n_sizes = {5, 5};
    cfg.mask = MaskAugment{2.0, 0.0};
    cfg.seed = 10;
    LabeledBatch batch = sample_training_batch(set, cfg, 0, 1);
    for (const HierarchicalDataset& d : batch.datasets) {
        REQUIRE(d.has_mask());
        for (int m = 0; m < d.num_groups(); ++m) CHECK(d.observed_count(m) == 3);
    }
}

TEST_CASE("serial and parallel batch gradients agree bitwise") {
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(77);
    net.init_params(p, rng);
    FastWeights fw;
    fw.build(p);

    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 6;
    cfg.m_sizes = {3, 3};
    cfg.n_sizes = {4, 4};
    cfg.seed = 11;
    LabeledBatch batch = sample_training_batch(set, cfg, 0, 1);

    std::vector<double> g1(p.total_count(), 0.0), g4(p.total_count(), 0.0);
    double l1 = batch_gradient_serial(net, p, fw, batch, g1);
    double l4 = batch_gradient(net, p, fw, batch, g4, 4);
    CHECK(l1 == l4);
    CHECK(g1 == g4);

    std::vector<double> wrong(p.total_count() - 1, 0.0);
    CHECK_THROWS_AS(batch_gradient_serial(net, p, fw, batch, wrong), StructuralError);
    LabeledBatch empty;
    CHECK_THROWS_AS(batch_gradient(net, p, fw, empty, g1, 2), StructuralError);
}

TEST_CASE("training runs are reproducible across worker counts") {
    auto set = normal_pair();
    auto run = [&](int jobs) {
        NetworkParams p;
        SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
        Rng rng(78);
        net.init_params(p, rng);
        TrainingConfig cfg;
        cfg.batch_size = 4;
        cfg.steps = 5;
        cfg.m_sizes = {2, 2};
        cfg.n_sizes = {3, 3};
        cfg.seed = 12;
        cfg.val_sets = 8;
        cfg.val_every = 2;
        cfg.jobs = jobs;
        TrainResult r = train(set, net, p, cfg);
        return std::pair{p.values, r};
    };
    auto [params1, res1] = run(1);
    auto [params2, res2] = run(3);
    CHECK(params1 == params2);
    CHECK(res1.steps_done == res2.steps_done);
    REQUIRE(res1.trace.size() == res2.trace.size());
    for (size_t i = 0; i < res1.trace.size(); ++i) {
        CHECK(res1.trace[i].step == res2.trace[i].step);
        CHECK(res1.trace[i].lr == res2.trace[i].lr);
        CHECK(res1.trace[i].train_loss == res2.trace[i].train_loss);
        bool nan1 = std::isnan(res1.trace[i].val_loss), nan2 = std::isnan(res2.trace[i].val_loss);
        CHECK(nan1 == nan2);
        if (!nan1) CHECK(res1.trace[i].val_loss == res2.trace[i].val_loss);
    }
    CHECK(res1.final_val_loss == res2.final_val_loss);

    // Validation rows appear exactly at the cadence.
    for (size_t i = 0; i < res1.trace.size(); ++i)
        CHECK(std::isfinite(res1.trace[i].val_loss) == ((i + 1) % 2 == 0 || i + 1 == 5));
}

TEST_CASE("zero steps leave the parameters untouched") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(79);
    net.init_params(p, rng);
    std::vector<double> before = p.values;

    TrainingConfig cfg;
    cfg.steps = 0;
    TrainResult r = train(set, net, p, cfg);
    CHECK(r.steps_done == 0);
    CHECK(r.trace.empty());
    CHECK(p.values == before);
}

TEST_CASE("offline training requires a store") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(80);
    net.init_params(p, rng);
    TrainingConfig cfg;
    cfg.regime = Regime::offline;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train(set, net, p, cfg), ConfigError);
}

TEST_CASE("loss traces serialize with schema and cadence gaps") {
    std::vector<TraceRow> trace = {{0, 5e-4, 0.7, std::numeric_limits<double>::quiet_NaN()},
                                   {1, 4e-4, 0.6, 0.65}};
    testutil::TempDir tmp("trace");
    write_trace_csv(tmp.file("trace.csv"), trace);
    auto lines = read_lines(tmp.file("trace.csv"));
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "# schema_version=1");
    CHECK(lines[1] == "step,lr,train_loss,val_loss");
    CHECK(lines[2].back() == ',');  // absent validation stays empty
    CHECK(lines[3].find("0.65") != std::string::npos);
    CHECK_THROWS_AS(write_trace_csv("/nonexistent/dir/trace.csv", trace), ConfigError);
}

TEST_CASE("offline stores round trip and balance labels") {
    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.m_sizes = {2, 2};
    cfg.n_sizes = {3, 3};
    OfflineStore store = build_offline_store(set, 5, cfg, 13, 2);
    REQUIRE(store.datasets.size() == 10);
    CHECK(store.num_models == 2);
    for (int i = 0; i < 10; ++i) {
        CHECK(store.labels[i] == i / 5);
        CHECK(store.datasets[i].meta.model_index == i / 5);
        CHECK(store.datasets[i].meta.seed != 0);
    }

    testutil::TempDir tmp("store");
    save_offline_store(tmp.file("data"), store);
    OfflineStore back = load_offline_store(tmp.file("data"));
    REQUIRE(back.datasets.size() == 10);
    CHECK(back.labels == store.labels);
    CHECK(back.num_models == 2);
    for (int i = 0; i < 10; ++i)
        CHECK(datasets_identical(back.datasets[i], store.datasets[i]));

    CHECK_THROWS_AS(load_offline_store(tmp.file("missing")), ConfigError);
    std::ofstream(tmp.file("data") + "/index.json") << "not json";
    CHECK_THROWS_AS(load_offline_store(tmp.file("data")), StructuralError);
    CHECK_THROWS_AS(build_offline_store(set, 0, cfg, 13, 1), ConfigError);
}

TEST_CASE("offline epochs cover the store in shuffled batches") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(81);
    net.init_params(p, rng);

    TrainingConfig cfg;
    cfg.regime = Regime::offline;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.m_sizes = {2, 2};
    cfg.n_sizes = {3, 3};
    cfg.seed = 14;
    OfflineStore store = build_offline_store(set, 5, cfg, 14, 1);

    TrainResult r = train(set, net, p, cfg, &store);
    // ceil(10 / 4) = 3 steps per epoch.
    CHECK(r.steps_done == 6);
    CHECK(r.trace.size() == 6);

    NetworkParams p2;
    SummaryNet net2 = SummaryNet::build(1, 2, tiny_config(), p2);
    Rng rng2(81);
    net2.init_params(p2, rng2);
    TrainResult r2 = train(set, net2, p2, cfg, &store);
    CHECK(p.values == p2.values);
    for (size_t i = 0; i < r.trace.size(); ++i)
        CHECK(r.trace[i].train_loss == r2.trace[i].train_loss);
}

TEST_CASE("checkpoints record parameters, optimizer state, and model names") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(82);
    net.init_params(p, rng);

    testutil::TempDir tmp("ckpt");
    TrainingConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 3;
    cfg.m_sizes = {2, 2};
    cfg.n_sizes = {3, 3};
    cfg.seed = 15;
    cfg.checkpoint_prefix = tmp.file("run");
    cfg.checkpoint_every = 2;
    train(set, net, p, cfg);

    REQUIRE(std::filesystem::exists(tmp.file("run") + ".json"));
    REQUIRE(std::filesystem::exists(tmp.file("run") + ".bin"));
    Checkpoint ck = load_checkpoint(tmp.file("run"));
    CHECK(ck.params.values == p.values);
    REQUIRE(ck.opt.has_value());
    CHECK(ck.opt->step == 3);
    REQUIRE(ck.manifest.contains("extra"));
    CHECK(ck.manifest["extra"]["models"] ==
          nlohmann::json::array({"normal-M1", "normal-M2"}));
}

TEST_CASE("prediction corpora match direct classification") {
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, tiny_config(), p);
    Rng rng(83);
    net.init_params(p, rng);

    auto set = normal_pair();
    TrainingConfig cfg;
    cfg.batch_size = 5;
    cfg.m_sizes = {2, 3};
    cfg.n_sizes = {2, 6};
    cfg.seed = 16;
    LabeledBatch batch = sample_training_batch(set, cfg, 0, 1);

    PredictionCorpus c = predict_corpus(net, p, batch.datasets, batch.labels, 2);
    REQUIRE(c.size() == 5);
    CHECK(c.labels == batch.labels);
    for (int s = 0; s < 5; ++s) {
        PmpVector direct = net.classify(p, batch.datasets[s]);
        for (int j = 0; j < 2; ++j) CHECK(c.preds(s, j) == direct[j]);
    }

    double expect = 0.0;
    for (int s = 0; s < 5; ++s) expect += log_loss(net.classify(p, batch.datasets[s]),
                                                   batch.labels[s]);
    CHECK(mean_log_loss(c) == doctest::Approx(expect / 5).epsilon(1e-12));

    std::vector<int> short_labels = {0};
    CHECK_THROWS_AS(predict_corpus(net, p, batch.datasets, short_labels, 1), StructuralError);
}

TEST_SUITE("slow") {

TEST_CASE("online training separates the hierarchical normal models") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, SummaryConfig{}, p);
    Rng rng(84);
    net.init_params(p, rng);

    TrainingConfig cfg;
    cfg.batch_size = 32;
    cfg.steps = 2000;
    cfg.m_sizes = {25, 25};
    cfg.n_sizes = {25, 25};
    cfg.seed = 17;
    cfg.val_sets = 300;
    cfg.jobs = resolve_jobs(0);
    TrainResult r = train(set, net, p, cfg);

    // Anything at or above log 2 would mean the network learned nothing
    // beyond the label frequencies.
    CHECK(r.final_val_loss < std::log(2.0));

    double early = r.trace.front().train_loss;
    double late = 0.0;
    for (size_t i = r.trace.size() - 100; i < r.trace.size(); ++i)
        late += r.trace[i].train_loss;
    late /= 100;
    CHECK(late < early);
}

TEST_CASE("offline training reaches the same regime as online") {
    auto set = normal_pair();
    NetworkParams p;
    SummaryNet net = SummaryNet::build(1, 2, SummaryConfig{}, p);
    Rng rng(85);
    net.init_params(p, rng);

    TrainingConfig cfg;
    cfg.regime = Regime::offline;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.m_sizes = {25, 25};
    cfg.n_sizes = {25, 25};
    cfg.seed = 18;
    cfg.val_sets = 300;
    cfg.jobs = resolve_jobs(0);
    OfflineStore store = build_offline_store(set, 250, cfg, 18, cfg.jobs);
    TrainResult r = train(set, net, p, cfg, &store);
    CHECK(r.final_val_loss < std::log(2.0));
}

}  // TEST_SUITE("slow")
