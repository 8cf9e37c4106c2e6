#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedfd/data.hpp"
#include "fedfd/models.hpp"
#include "fedfd/rng.hpp"
#include "support/oracles.hpp"

using namespace fedfd;

namespace {

bool bit_identical(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, m] : a) {
        const Matrix& o = b.at(name);
        if (!m.same_shape(o)) return false;
        for (std::size_t k = 0; k < m.size(); ++k)
            if (m[k] != o[k]) return false;
    }
    return true;
}

Matrix random_inputs(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = rng.uniform(-1.5, 1.5);
    return m;
}

}  // namespace

TEST(LevelSchedule, FractionsAndFeatureDims) {
    const LevelSchedule sched;
    EXPECT_DOUBLE_EQ(sched.fraction('a'), 1.0);
    EXPECT_NEAR(sched.fraction('b'), 0.9, 1e-12);
    EXPECT_NEAR(sched.fraction('j'), 0.1, 1e-12);
    EXPECT_THROW(sched.fraction('k'), std::invalid_argument);

    // feature_dim strictly monotone in the fraction for the default widths
    std::size_t prev = 0;
    for (char label = 'j'; label >= 'a'; --label) {
        const ArchitectureLevel lv = sched.level(label, 20);
        EXPECT_GT(lv.feature_dim, prev) << label;
        prev = lv.feature_dim;
    }
    EXPECT_EQ(sched.level('a', 20).feature_dim, 20u);
}

TEST(LevelSchedule, ParseLabels) {
    const auto labels = LevelSchedule::parse_labels("a-d-g");
    ASSERT_EQ(labels.size(), 3u);
    EXPECT_EQ(labels[0], 'a');
    EXPECT_EQ(labels[2], 'g');
    EXPECT_THROW(LevelSchedule::parse_labels("a-z"), std::invalid_argument);
    EXPECT_THROW(LevelSchedule::parse_labels(""), std::invalid_argument);
}

TEST(BuildGlobal, ShapesAndDeterminism) {
    const ScalableModel m = build_global(10, {16, 8}, 4, 99);
    EXPECT_EQ(m.params.at("layer0.weight").rows(), 10u);
    EXPECT_EQ(m.params.at("layer0.weight").cols(), 16u);
    EXPECT_EQ(m.params.at("layer1.weight").rows(), 16u);
    EXPECT_EQ(m.params.at("layer1.weight").cols(), 8u);
    EXPECT_EQ(m.params.at("head.weight").rows(), 8u);
    EXPECT_EQ(m.params.at("head.weight").cols(), 4u);
    EXPECT_EQ(m.params.at("head.bias").cols(), 4u);
    EXPECT_EQ(m.level.label, 'a');

    const ScalableModel again = build_global(10, {16, 8}, 4, 99);
    EXPECT_TRUE(bit_identical(m.params, again.params));
    const ScalableModel other = build_global(10, {16, 8}, 4, 100);
    EXPECT_FALSE(bit_identical(m.params, other.params));

    EXPECT_THROW(build_global(10, {}, 4, 1), std::invalid_argument);
    EXPECT_THROW(build_global(10, {16, 0}, 4, 1), std::invalid_argument);
}

TEST(BuildGlobal, InitializationVariance) {
    // uniform(-L, L) has variance L^2 / 3; check the empirical variance of a
    // layer with ~10^4 entries stays within 20%
    const ScalableModel m = build_global(100, {100}, 2, 7);
    const Matrix& w = m.params.at("layer0.weight");
    ASSERT_EQ(w.size(), 10000u);
    double mean = 0.0;
    for (double x : w.data()) mean += x;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double x : w.data()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(w.size());
    const double limit = std::sqrt(6.0 / 200.0);
    const double expect = limit * limit / 3.0;
    EXPECT_NEAR(var, expect, 0.2 * expect);

    for (std::size_t j = 0; j < 100; ++j) EXPECT_EQ(m.params.at("layer0.bias")(0, j), 0.0);
}

TEST(Slice, IdentityAndShapeArithmetic) {
    const LevelSchedule sched;
    const ScalableModel m = build_global(6, {16, 8}, 3, 5);

    const ScalableModel same = slice(m, m.level);
    EXPECT_TRUE(bit_identical(m.params, same.params));

    const ScalableModel half = slice(m, ArchitectureLevel{'f', 0.5, 4});
    EXPECT_EQ(half.topo.widths, (std::vector<std::size_t>{8, 4}));
    EXPECT_EQ(half.params.at("layer0.weight").cols(), 8u);
    EXPECT_EQ(half.params.at("layer1.weight").rows(), 8u);
    EXPECT_EQ(half.params.at("layer1.weight").cols(), 4u);
    EXPECT_EQ(half.params.at("head.weight").rows(), 4u);
    EXPECT_EQ(half.params.at("head.weight").cols(), 3u);

    // slicing copies
    ScalableModel copy = slice(m, ArchitectureLevel{'f', 0.5, 4});
    copy.params.at("layer0.weight")(0, 0) += 1.0;
    EXPECT_NE(copy.params.at("layer0.weight")(0, 0), m.params.at("layer0.weight")(0, 0));

    EXPECT_THROW(slice(m, ArchitectureLevel{'z', 0.0, 0}), std::invalid_argument);
    EXPECT_THROW(slice(m, ArchitectureLevel{'z', 1.5, 0}), std::invalid_argument);
}

TEST(Slice, SlicingIsPurelyStructural) {
    // a model rebuilt from the sliced arrays forwards identically: the slice
    // carries no hidden state
    const LevelSchedule sched;
    const ScalableModel m = build_global(6, {12, 8}, 3, 44);
    const ScalableModel sliced = slice(m, sched.level('d', m.feature_dim()));
    ScalableModel rebuilt;
    rebuilt.topo = sliced.topo;
    rebuilt.level = sliced.level;
    for (const auto& [name, mat] : sliced.params) rebuilt.params.add(name, mat);
    Rng rng(45);
    const Matrix x = random_inputs(5, 6, rng);
    const Matrix a = sliced.forward_logits(x);
    const Matrix b = rebuilt.forward_logits(x);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
}

TEST(Slice, NestedFractionsCompose) {
    // ceil-exact nesting: r1 = 0.5 then 0.5 again equals r2 = 0.25 directly
    const ScalableModel m = build_global(6, {16, 8}, 3, 6);
    const ScalableModel inner = slice(m, ArchitectureLevel{'f', 0.5, 4});
    const ScalableModel twice = slice(inner, ArchitectureLevel{'f', 0.5, 2});
    const ScalableModel direct = slice(m, ArchitectureLevel{'i', 0.25, 2});
    EXPECT_TRUE(bit_identical(twice.params, direct.params));
}

TEST(Slice, NestingInvariantAcrossLevels) {
    // the level-q slice of the model equals the level-q block of the level-p
    // slice, coordinate for coordinate, for q narrower than p
    const LevelSchedule sched;
    const ScalableModel m = build_global(7, {10, 5}, 4, 11);
    for (char p : {'a', 'c', 'e'}) {
        for (char q : {'e', 'g', 'j'}) {
            if (q <= p) continue;
            const ArchitectureLevel lp = sched.level(p, m.feature_dim());
            const ArchitectureLevel lq = sched.level(q, m.feature_dim());
            const ScalableModel via_p = slice(m, lp);
            const ParameterSet direct = slice(m, lq).params;
            const ParameterSet nested =
                take_leading(via_p.params, slice_shapes(m.topo, lq));
            EXPECT_TRUE(bit_identical(direct, nested)) << p << "->" << q;
        }
    }
}

TEST(ForwardFeatures, ZeroModelAndBatchIndependence) {
    ScalableModel m = build_global(4, {6, 3}, 2, 3);
    for (auto& [name, mat] : m.params)
        for (double& x : mat.data()) x = 0.0;
    Rng rng(31);
    const Matrix x = random_inputs(5, 4, rng);
    const Matrix f = m.forward_features(x);
    EXPECT_EQ(f.cols(), 3u);
    for (double v : f.data()) EXPECT_EQ(v, 0.0);

    const ScalableModel rm = build_global(4, {6, 3}, 2, 4);
    const Matrix batch = random_inputs(8, 4, rng);
    const Matrix all = rm.forward_features(batch);
    for (std::size_t r = 0; r < 8; ++r) {
        Matrix one(1, 4);
        for (std::size_t j = 0; j < 4; ++j) one(0, j) = batch(r, j);
        const Matrix single = rm.forward_features(one);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(single(0, j), all(r, j), 1e-12);
    }

    EXPECT_THROW(rm.forward_features(Matrix(2, 7)), std::invalid_argument);
}

TEST(ForwardFeatures, MatchesNaiveChain) {
    Rng rng(32);
    const ScalableModel m = build_global(5, {7, 4}, 3, 8);
    const Matrix x = random_inputs(6, 5, rng);
    const Matrix got = m.forward_features(x);
    const Matrix expect = oracle::forward_chain_naive(
        x, {m.params.at("layer0.weight"), m.params.at("layer1.weight")},
        {m.params.at("layer0.bias"), m.params.at("layer1.bias")}, true);
    ASSERT_TRUE(got.same_shape(expect));
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-10);
}

TEST(ForwardFeatures, OutputDimMatchesLevelFeatureDim) {
    const LevelSchedule sched;
    const ScalableModel m = build_global(5, {12, 9}, 3, 9);
    Rng rng(33);
    const Matrix x = random_inputs(2, 5, rng);
    for (char label = 'a'; label <= 'j'; ++label) {
        const ArchitectureLevel lv = sched.level(label, m.feature_dim());
        const ScalableModel s = slice(m, lv);
        EXPECT_EQ(s.forward_features(x).cols(), lv.feature_dim) << label;
    }
}

TEST(ForwardLogits, HeadBehaviour) {
    Rng rng(34);
    ScalableModel m = build_global(4, {5}, 3, 12);
    const Matrix x = random_inputs(6, 4, rng);

    ScalableModel zero_head = m;
    for (double& v : zero_head.params.at("head.weight").data()) v = 0.0;
    const Matrix zl = zero_head.forward_logits(x);
    for (double v : zl.data()) EXPECT_EQ(v, 0.0);

    // logits equal features * head + bias against the naive oracle
    const Matrix feats = m.forward_features(x);
    const Matrix logits = m.forward_logits(x);
    const Matrix expect = oracle::forward_chain_naive(
        feats, {m.params.at("head.weight")}, {m.params.at("head.bias")}, false);
    for (std::size_t k = 0; k < logits.size(); ++k) EXPECT_NEAR(logits[k], expect[k], 1e-10);

    // argmax invariant under joint positive scaling of head weight and bias
    ScalableModel scaled = m;
    for (double& v : scaled.params.at("head.weight").data()) v *= 3.7;
    for (double& v : scaled.params.at("head.bias").data()) v *= 3.7;
    const Matrix sl = scaled.forward_logits(x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::size_t am1 = 0, am2 = 0;
        for (std::size_t c = 1; c < 3; ++c) {
            if (logits(r, c) > logits(r, am1)) am1 = c;
            if (sl(r, c) > sl(r, am2)) am2 = c;
        }
        EXPECT_EQ(am1, am2);
    }
}

TEST(LocalTrain, ZeroLearningRateIsNoOp) {
    const LabeledDataset data = gen_synthetic(2, 30, 4, 0.5, 21);
    Shard shard(data.size());
    for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;

    ScalableModel m = build_global(4, {6, 3}, 2, 17);
    const ScalableModel before = m;
    TrainOptions opt;
    opt.epochs = 2;
    opt.lr = 0.0;
    opt.weight_decay = 0.0;
    opt.batch_size = 8;
    local_train(m, data, shard, opt, 5);
    EXPECT_TRUE(bit_identical(m.params, before.params));

    EXPECT_THROW(local_train(m, data, {}, opt, 5), std::invalid_argument);
}

TEST(LocalTrain, Deterministic) {
    const LabeledDataset data = gen_synthetic(3, 40, 5, 0.6, 22);
    Shard shard(data.size());
    for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;
    TrainOptions opt;
    opt.epochs = 3;
    opt.lr = 0.05;
    opt.batch_size = 16;

    ScalableModel a = build_global(5, {8, 4}, 3, 17);
    ScalableModel b = build_global(5, {8, 4}, 3, 17);
    const auto la = local_train(a, data, shard, opt, 77);
    const auto lb = local_train(b, data, shard, opt, 77);
    EXPECT_TRUE(bit_identical(a.params, b.params));
    EXPECT_EQ(la, lb);
}

TEST(LocalTrain, SeparableBlobsReachHighAccuracy) {
    const LabeledDataset data = gen_synthetic(2, 100, 4, 0.25, 23);
    Shard shard(data.size());
    for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;

    ScalableModel m = build_global(4, {8, 4}, 2, 29);
    TrainOptions opt;
    opt.epochs = 10;
    opt.lr = 0.1;
    opt.weight_decay = 0.0;
    opt.batch_size = 16;
    const auto trace = local_train(m, data, shard, opt, 31);
    EXPECT_EQ(trace.size(), 10u);
    EXPECT_LT(trace.back(), trace.front());

    const Matrix logits = m.forward_logits(data.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        const std::size_t pred = logits(r, 0) >= logits(r, 1) ? 0 : 1;
        correct += pred == static_cast<std::size_t>(data.labels[r]);
    }
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(data.size()), 0.99);
}

TEST(LocalTrain, OneStepMatchesFiniteDifferenceUpdate) {
    // single sample, batch 1, one epoch: w' = w - lr * (fd_grad + wd * w)
    const double lr = 0.01, wd = 1e-3;
    const LabeledDataset data = gen_synthetic(2, 1, 3, 0.2, 25);
    const Shard shard{0};

    ScalableModel m = build_global(3, {4}, 2, 41);
    const ScalableModel start = m;

    TrainOptions opt;
    opt.epochs = 1;
    opt.lr = lr;
    opt.weight_decay = wd;
    opt.batch_size = 1;
    local_train(m, data, shard, opt, 1);

    const std::vector<double> row{data.inputs(0, 0), data.inputs(0, 1), data.inputs(0, 2)};
    const auto loss_at = [&](const ScalableModel& model) {
        const Matrix logits = model.forward_logits(data.inputs);
        std::vector<double> lrow(logits.cols());
        for (std::size_t j = 0; j < logits.cols(); ++j) lrow[j] = logits(0, j);
        return cross_entropy(lrow, static_cast<std::size_t>(data.labels[0]));
    };

    const double eps = 1e-6;
    for (const auto& [name, w0] : start.params) {
        const Matrix& updated = m.params.at(name);
        for (std::size_t k = 0; k < w0.size(); ++k) {
            ScalableModel probe = start;
            probe.params.at(name)[k] = w0[k] + eps;
            const double up = loss_at(probe);
            probe.params.at(name)[k] = w0[k] - eps;
            const double down = loss_at(probe);
            const double fd = (up - down) / (2.0 * eps);
            const double expect = w0[k] - lr * (fd + wd * w0[k]);
            EXPECT_NEAR(updated[k], expect, 1e-8) << name << "[" << k << "]";
        }
    }
}
