#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "fedfd/checkpoint.hpp"
#include "fedfd/federation.hpp"
#include "fedfd/rng.hpp"

using namespace fedfd;

namespace {

struct Bench {
    LabeledDataset train;
    LabeledDataset test;
    Matrix distill_inputs;
    std::vector<ClientState> clients;
    ScalableModel global;
};

Bench make_bench(std::size_t n_clients, Method method_unused = Method::FedFd,
                 std::uint64_t seed = 5) {
    (void)method_unused;
    Bench b;
    LabeledDataset all = gen_synthetic(3, 80, 6, 0.5, seed);
    // hold out 10% of training rows as the unlabeled distillation split
    const std::size_t distill_n = all.size() / 10;
    Shard distill_idx, train_idx;
    for (std::size_t i = 0; i < all.size(); ++i)
        (i < distill_n ? distill_idx : train_idx).push_back(i);
    b.distill_inputs = gather_rows(all.inputs, distill_idx);
    b.train.inputs = gather_rows(all.inputs, train_idx);
    b.train.labels = gather_labels(all.labels, train_idx);
    b.train.classes = all.classes;
    b.test = gen_synthetic(3, 40, 6, 0.5, seed + 1);

    b.global = build_global(6, {10, 8}, 3, derive_seed(seed, {1u}));
    const LevelSchedule sched;
    const auto shards = dirichlet_partition(b.train, n_clients, 1.0, derive_seed(seed, {2u}));
    b.clients = assign_clients(LevelSchedule::parse_labels("a-d-g"), shards,
                               b.global.feature_dim(), sched, seed);
    return b;
}

SimulationConfig quick_config(Method method, std::uint64_t seed = 5) {
    SimulationConfig cfg;
    cfg.participation = 0.5;
    cfg.local_epochs = 1;
    cfg.batch_size = 16;
    cfg.local_lr = 0.02;
    cfg.distill_lr = 0.02;
    cfg.method = method;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST(SampleClients, DeterministicAndFullRatio) {
    const auto all = sample_clients(7, 1.0, 3, 11);
    ASSERT_EQ(all.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(all[i], i);

    const auto a = sample_clients(20, 0.4, 5, 42);
    const auto b = sample_clients(20, 0.4, 5, 42);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 8u);
    const auto c = sample_clients(20, 0.4, 6, 42);
    EXPECT_NE(a, c);  // different rounds decorrelate (overwhelmingly)

    EXPECT_THROW(sample_clients(5, 0.0, 0, 1), std::invalid_argument);
    EXPECT_THROW(sample_clients(5, 1.5, 0, 1), std::invalid_argument);
    EXPECT_EQ(sample_clients(5, 0.01, 0, 1).size(), 1u);  // floor of one client
}

TEST(SampleClients, FrequencyMatchesBinomialStatistics) {
    const std::size_t clients = 10, rounds = 10000;
    const double ratio = 0.4;
    std::vector<std::size_t> hits(clients, 0);
    for (std::size_t r = 0; r < rounds; ++r)
        for (std::size_t id : sample_clients(clients, ratio, r, 77)) ++hits[id];
    const double p = 4.0 / 10.0;  // max(1, round(r*K)) / K
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(rounds));
    for (std::size_t id = 0; id < clients; ++id) {
        const double freq = static_cast<double>(hits[id]) / static_cast<double>(rounds);
        EXPECT_NEAR(freq, p, 3.0 * sigma) << "client " << id;
    }
}

TEST(Evaluate, ConstantModelAndMemorizedSet) {
    LabeledDataset balanced = gen_synthetic(4, 25, 5, 0.4, 31);
    ScalableModel zero = build_global(5, {6}, 4, 32);
    for (auto& [name, m] : zero.params)
        for (double& x : m.data()) x = 0.0;
    // all-zero logits argmax to class 0 -> accuracy is the class-0 share
    EXPECT_DOUBLE_EQ(evaluate(zero, balanced), 0.25);

    // a model scored against its own predictions is perfect
    ScalableModel m = build_global(5, {6}, 4, 33);
    LabeledDataset memorized = balanced;
    const Matrix logits = m.forward_logits(balanced.inputs);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c)
            if (logits(r, c) > logits(r, best)) best = c;
        memorized.labels[r] = static_cast<int>(best);
    }
    EXPECT_DOUBLE_EQ(evaluate(m, memorized), 1.0);

    // naive per-sample loop oracle
    std::size_t correct = 0;
    for (std::size_t r = 0; r < balanced.size(); ++r) {
        Matrix one(1, 5);
        for (std::size_t j = 0; j < 5; ++j) one(0, j) = balanced.inputs(r, j);
        const Matrix lg = m.forward_logits(one);
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c)
            if (lg(0, c) > lg(0, best)) best = c;
        correct += best == static_cast<std::size_t>(balanced.labels[r]);
    }
    EXPECT_DOUBLE_EQ(evaluate(m, balanced),
                     static_cast<double>(correct) / static_cast<double>(balanced.size()));

    EXPECT_THROW(evaluate(m, LabeledDataset{}), std::invalid_argument);
}

TEST(EvaluateLocalMean, MeanOfMembers) {
    const LabeledDataset test = gen_synthetic(3, 30, 6, 0.5, 34);
    std::vector<ScalableModel> models;
    for (std::uint64_t s = 0; s < 5; ++s) models.push_back(build_global(6, {8, 5}, 3, 40 + s));
    double expect = 0.0;
    for (const auto& m : models) expect += evaluate(m, test);
    expect /= 5.0;
    EXPECT_NEAR(evaluate_local_mean(models, test), expect, 1e-15);

    const std::vector<ScalableModel> pair{models[0], models[0]};
    EXPECT_DOUBLE_EQ(evaluate_local_mean(pair, test), evaluate(models[0], test));
}

TEST(RunRound, FixedPointWithoutTrainingOrDistillation) {
    Bench b = make_bench(4);
    SimulationConfig cfg = quick_config(Method::HeteroflOnly);
    cfg.local_epochs = 0;
    FederatedSimulation sim(cfg, b.global, b.clients, b.train, b.distill_inputs, b.test);
    const RoundMetrics m = sim.run_round(0);
    for (const auto& [name, before] : b.global.params) {
        const Matrix& after = sim.global_model().params.at(name);
        for (std::size_t k = 0; k < before.size(); ++k)
            EXPECT_NEAR(after[k], before[k], 1e-14) << name;
    }
    EXPECT_EQ(m.distill_loss, 0.0);
    EXPECT_GE(m.global_acc, 0.0);
    EXPECT_LE(m.global_acc, 1.0);
}

TEST(RunRound, HeteroflOnlyEqualsZeroRateDistillation) {
    Bench b = make_bench(4);
    SimulationConfig plain = quick_config(Method::HeteroflOnly);
    SimulationConfig frozen = quick_config(Method::FedFd);
    frozen.distill_lr = 0.0;

    FederatedSimulation sim_plain(plain, b.global, b.clients, b.train, b.distill_inputs, b.test);
    FederatedSimulation sim_frozen(frozen, b.global, b.clients, b.train, b.distill_inputs, b.test);
    for (std::size_t r = 0; r < 2; ++r) {
        sim_plain.run_round(r);
        sim_frozen.run_round(r);
    }
    for (const auto& [name, a] : sim_plain.global_model().params) {
        const Matrix& f = sim_frozen.global_model().params.at(name);
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], f[k]) << name;
    }
}

TEST(RunRound, DeterministicMetricsStream) {
    for (Method method : {Method::FedFd, Method::LogitBaseline, Method::AblationNoGroup}) {
        Bench b1 = make_bench(4);
        Bench b2 = make_bench(4);
        FederatedSimulation s1(quick_config(method), b1.global, b1.clients, b1.train,
                               b1.distill_inputs, b1.test);
        FederatedSimulation s2(quick_config(method), b2.global, b2.clients, b2.train,
                               b2.distill_inputs, b2.test);
        for (std::size_t r = 0; r < 3; ++r) {
            RoundMetrics m1 = s1.run_round(r);
            RoundMetrics m2 = s2.run_round(r);
            m1.seconds = m2.seconds = 0.0;
            EXPECT_EQ(format_metrics_row(m1), format_metrics_row(m2));
        }
    }
}

TEST(RunRound, ProjectionCountEconomy) {
    // m - 1 trainable projections for m distinct levels (a-d-g -> 2), never
    // one per client
    Bench b = make_bench(6);
    FederatedSimulation sim(quick_config(Method::FedFd), b.global, b.clients, b.train,
                            b.distill_inputs, b.test);
    EXPECT_EQ(sim.projections().size(), 2u);
    sim.run_round(0);
    EXPECT_EQ(sim.projections().size(), 2u);
    EXPECT_TRUE(sim.client_projections().empty());

    // the per-client ablation does the opposite
    Bench b2 = make_bench(6);
    SimulationConfig cfg = quick_config(Method::AblationNoGroup);
    cfg.participation = 1.0;
    FederatedSimulation per_client(cfg, b2.global, b2.clients, b2.train, b2.distill_inputs,
                                   b2.test);
    EXPECT_TRUE(per_client.projections().empty());
    per_client.run_round(0);
    EXPECT_EQ(per_client.client_projections().size(), 6u);
}

TEST(RunRound, AblationLatticeRunsAndKeepsInvariants) {
    for (Method method : {Method::FedFd, Method::LogitBaseline, Method::HeteroflOnly,
                          Method::AblationNoOrtho, Method::AblationNoGroup}) {
        Bench b = make_bench(4);
        FederatedSimulation sim(quick_config(method), b.global, b.clients, b.train,
                                b.distill_inputs, b.test);
        const RoundMetrics m = sim.run_round(0);
        EXPECT_GE(m.global_acc, 0.0);
        EXPECT_LE(m.global_acc, 1.0);
        EXPECT_GE(m.local_acc_mean, 0.0);
        EXPECT_LE(m.local_acc_mean, 1.0);
        if (method == Method::FedFd || method == Method::AblationNoGroup)
            EXPECT_LE(m.ortho_residual, 1e-9);
    }
}

TEST(AssignClients, RoundRobinLevels) {
    const LevelSchedule sched;
    const std::vector<Shard> shards(7, Shard{0});
    const auto clients =
        assign_clients(LevelSchedule::parse_labels("a-d-g"), shards, 10, sched, 3);
    ASSERT_EQ(clients.size(), 7u);
    EXPECT_EQ(clients[0].level.label, 'a');
    EXPECT_EQ(clients[1].level.label, 'd');
    EXPECT_EQ(clients[2].level.label, 'g');
    EXPECT_EQ(clients[3].level.label, 'a');
    EXPECT_EQ(clients[6].level.label, 'a');
}

TEST(MetricsRow, NineSignificantDigits) {
    RoundMetrics m;
    m.round = 12;
    m.global_acc = 1.0 / 3.0;
    m.local_acc_mean = 0.25;
    m.distill_loss = 1.23456789e-4;
    m.ortho_residual = 9.87654321e-13;
    m.seconds = 0.0;
    EXPECT_EQ(format_metrics_row(m), "12,0.333333333,0.25,0.000123456789,9.87654321e-13,0");
}

TEST(Checkpoint, RoundTripPreservesModelAndProjections) {
    Bench b = make_bench(4);
    FederatedSimulation sim(quick_config(Method::FedFd), b.global, b.clients, b.train,
                            b.distill_inputs, b.test);
    sim.run_round(0);

    std::vector<ArchitectureLevel> levels;
    const LevelSchedule sched;
    for (char l : {'a', 'd', 'g'}) levels.push_back(sched.level(l, b.global.feature_dim()));

    const auto path = (std::filesystem::temp_directory_path() / "fedfd_ckpt.json").string();
    save_checkpoint(path, sim.global_model(), levels, sim.projections());
    const Checkpoint back = load_checkpoint(path);

    EXPECT_EQ(back.model.topo.input_dim, sim.global_model().topo.input_dim);
    EXPECT_EQ(back.model.topo.widths, sim.global_model().topo.widths);
    EXPECT_EQ(back.model.topo.classes, sim.global_model().topo.classes);
    for (const auto& [name, m] : sim.global_model().params) {
        const Matrix& o = back.model.params.at(name);
        ASSERT_TRUE(m.same_shape(o)) << name;
        for (std::size_t k = 0; k < m.size(); ++k) EXPECT_EQ(m[k], o[k]) << name;
    }
    ASSERT_EQ(back.projections.size(), sim.projections().size());
    for (const auto& [dim, layer] : sim.projections()) {
        const ProjectionLayer& o = back.projections.at(dim);
        EXPECT_EQ(o.free_params(), layer.free_params());
        EXPECT_EQ(o.kind(), layer.kind());
    }
    ASSERT_EQ(back.levels.size(), 3u);
    EXPECT_EQ(back.levels[1].label, 'd');
    std::filesystem::remove(path);
}
