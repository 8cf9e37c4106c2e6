#ifndef FEDFD_CHECK_HPP
#define FEDFD_CHECK_HPP

// Self-contained invariant suite behind the `check` CLI verb: every numeric
// guarantee the simulator depends on, re-verified in-process against direct
// reference computations.

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "fedfd/aggregation.hpp"
#include "fedfd/autodiff.hpp"
#include "fedfd/data.hpp"
#include "fedfd/distillation.hpp"
#include "fedfd/federation.hpp"
#include "fedfd/models.hpp"
#include "fedfd/numerics.hpp"
#include "fedfd/rng.hpp"

namespace fedfd {

struct CheckOptions {
    std::string filter;  // substring match on "module.name"; empty keeps all
    int taylor_order = kDefaultTaylorOrder;
};

struct CheckResult {
    std::string module;
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace checks {

inline Matrix random_skew(std::size_t dim, Rng& rng) {
    std::vector<double> a(skew_param_count(dim));
    for (double& x : a) x = rng.gaussian();
    return skew_from_params(a, dim);
}

inline long double det_recursive(const std::vector<std::vector<long double>>& m) {
    const std::size_t n = m.size();
    if (n == 1) return m[0][0];
    long double det = 0.0L;
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<std::vector<long double>> minor(n - 1, std::vector<long double>(n - 1));
        for (std::size_t i = 1; i < n; ++i) {
            std::size_t mc = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != c) minor[i - 1][mc++] = m[i][j];
        }
        det += (c % 2 == 0 ? 1.0L : -1.0L) * m[0][c] * det_recursive(minor);
    }
    return det;
}

inline CheckResult orthogonality(int order) {
    Rng rng(0xC0DE1);
    double worst = 0.0;
    for (std::size_t dim : {4u, 8u, 16u, 32u})
        for (int trial = 0; trial < 25; ++trial)
            worst = std::max(worst,
                             orthogonality_residual(matrix_exp(random_skew(dim, rng), order)));
    char detail[96];
    std::snprintf(detail, sizeof detail, "max ||exp(W)exp(W)^T - I||_F = %.3g over 100 draws",
                  worst);
    return {"numerics", "orthogonality", worst <= 1e-10, detail};
}

inline CheckResult determinant(int order) {
    Rng rng(0xC0DE2);
    double worst = 0.0;
    for (std::size_t dim : {2u, 3u, 4u, 5u, 6u}) {
        const Matrix r = matrix_exp(random_skew(dim, rng), order);
        std::vector<std::vector<long double>> m(dim, std::vector<long double>(dim));
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) m[i][j] = r(i, j);
        worst = std::max(worst, std::fabs(static_cast<double>(det_recursive(m)) - 1.0));
    }
    char detail[64];
    std::snprintf(detail, sizeof detail, "max |det - 1| = %.3g", worst);
    return {"numerics", "determinant", worst <= 1e-8, detail};
}

inline CheckResult gradients(int order) {
    Rng rng(0xC0DE3);
    double worst = 0.0;

    {  // cross-entropy through a 2-layer model; biases offset so no relu
       // pre-activation sits inside the finite-difference probe of the kink
        ScalableModel m = build_global(4, {5, 3}, 3, 0xBEEF);
        for (auto& [name, mat] : m.params)
            if (name.find("bias") != std::string::npos)
                for (double& v : mat.data()) v = 0.05;
        Matrix x(6, 4);
        for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
        const std::vector<int> y{0, 2, 1, 0, 1, 2};
        std::vector<Matrix> params;
        for (const auto& [name, mat] : m.params) params.push_back(mat);
        worst = std::max(worst, grad_check(
                                    [&](GradTape& t, const std::vector<Value>& p) {
                                        Value h = t.constant(x);
                                        h = t.relu(t.add_rowvec(t.matmul(h, p[3]), p[2]));
                                        h = t.relu(t.add_rowvec(t.matmul(h, p[5]), p[4]));
                                        return t.cross_entropy_mean(
                                            t.add_rowvec(t.matmul(h, p[1]), p[0]), y);
                                    },
                                    params));
    }

    {  // alignment loss through projection and matrix exponential (D <= 10)
        const std::size_t src = 8, dst = 5;
        Matrix z(6, src), teacher(6, dst);
        for (double& v : z.data()) v = rng.uniform(-1.0, 1.0);
        for (double& v : teacher.data()) v = rng.uniform(-1.0, 1.0);
        Matrix a(1, skew_param_count(src));
        for (double& v : a.data()) v = rng.gaussian(0.0, 0.5);
        for (KlDirection dir : {KlDirection::StudentFirst, KlDirection::TeacherFirst})
            worst = std::max(
                worst, grad_check(
                           [&](GradTape& t, const std::vector<Value>& p) {
                               Value m = t.take_rows(t.matrix_exp(t.skew(p[0], src), order), dst);
                               return detail::alignment_term(t, t.constant(z), m, teacher, 1.0,
                                                             dir);
                           },
                           {a}));
    }

    {  // logit-baseline KL over the full model
        ScalableModel m = build_global(3, {4}, 3, 0xF00D);
        for (auto& [name, mat] : m.params)
            if (name.find("bias") != std::string::npos)
                for (double& v : mat.data()) v = 0.05;
        Matrix x(5, 3), teacher(5, 3);
        for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
        for (double& v : teacher.data()) v = rng.uniform(-1.0, 1.0);
        const Matrix pt = softmax_rows(teacher, 1.0);
        const Matrix lpt = log_softmax_rows(teacher, 1.0);
        std::vector<Matrix> params;
        for (const auto& [name, mat] : m.params) params.push_back(mat);
        worst = std::max(worst, grad_check(
                                    [&](GradTape& t, const std::vector<Value>& p) {
                                        Value h = t.relu(
                                            t.add_rowvec(t.matmul(t.constant(x), p[3]), p[2]));
                                        Value logits = t.add_rowvec(t.matmul(h, p[1]), p[0]);
                                        return t.kl_rows_mean(t.constant(pt), t.constant(lpt),
                                                              t.log_softmax_rows(logits, 1.0));
                                    },
                                    params));
    }

    char detail[64];
    std::snprintf(detail, sizeof detail, "max relative error = %.3g", worst);
    return {"numerics", "gradients", worst <= 1e-4, detail};
}

inline CheckResult softmax_and_kl() {
    Rng rng(0xC0DE4);
    double worst_shift = 0.0, worst_kl = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(5), shifted(5), p(5), q(5);
        const double c = rng.uniform(-30.0, 30.0);
        double sp = 0.0, sq = 0.0;
        for (int i = 0; i < 5; ++i) {
            v[i] = rng.uniform(-4.0, 4.0);
            shifted[i] = v[i] + c;
            p[i] = rng.uniform(0.05, 1.0);
            q[i] = rng.uniform(0.05, 1.0);
            sp += p[i];
            sq += q[i];
        }
        const double tau = rng.uniform(0.3, 2.0);
        const auto s1 = softmax_t(v, tau);
        const auto s2 = softmax_t(shifted, tau);
        for (int i = 0; i < 5; ++i) worst_shift = std::max(worst_shift, std::fabs(s1[i] - s2[i]));
        for (int i = 0; i < 5; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        worst_kl = std::min(worst_kl, kl_div(p, q));
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "shift drift %.3g, min KL %.3g", worst_shift, worst_kl);
    return {"numerics", "softmax_kl", worst_shift <= 1e-12 && worst_kl >= -1e-9, detail};
}

inline CheckResult model_nesting() {
    const LevelSchedule sched;
    const ScalableModel m = build_global(7, {10, 6}, 4, 0xAB1E);
    bool ok = true;
    for (char p : {'a', 'c', 'e'}) {
        for (char q : {'e', 'g', 'j'}) {
            if (q <= p) continue;
            const ScalableModel via_p = slice(m, sched.level(p, m.feature_dim()));
            const ParameterSet direct = slice(m, sched.level(q, m.feature_dim())).params;
            const ParameterSet nested =
                take_leading(via_p.params, slice_shapes(m.topo, sched.level(q, m.feature_dim())));
            for (const auto& [name, mat] : direct) {
                const Matrix& o = nested.at(name);
                for (std::size_t k = 0; k < mat.size(); ++k) ok = ok && mat[k] == o[k];
            }
        }
    }
    return {"models", "nesting", ok, "level-q slice equals level-q block of level-p slice"};
}

inline CheckResult aggregation_oracle() {
    const LevelSchedule sched;
    Rng rng(0xC0DE5);
    double worst = 0.0;
    bool convex_ok = true;
    for (int trial = 0; trial < 40; ++trial) {
        const ScalableModel global =
            build_global(2 + rng.below(3), {2 + rng.below(7), 1 + rng.below(8)}, 2,
                         0x100 + trial);
        const std::vector<char> pool{'a', 'd', 'g'};
        std::vector<ClientUpdate> updates;
        const std::size_t n = 1 + rng.below(5);
        for (std::size_t i = 0; i < n; ++i) {
            ClientUpdate u;
            u.client_id = i;
            u.level = sched.level(pool[rng.below(3)], global.feature_dim());
            u.sample_count = 1 + rng.below(9);
            ScalableModel s = slice(global, u.level);
            for (auto& [name, mat] : s.params)
                for (double& x : mat.data()) x = rng.uniform(-2.0, 2.0);
            u.params = std::move(s.params);
            updates.push_back(std::move(u));
        }
        const Weighting w = trial % 2 == 0 ? Weighting::Uniform : Weighting::Sample;
        const ParameterSet got = hetero_aggregate(global.params, updates, global.topo, w);
        // direct per-coordinate covering mean
        for (const auto& [name, g] : global.params) {
            const Matrix& merged = got.at(name);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    long double num = 0.0L, den = 0.0L;
                    double lo = 1e300, hi = -1e300;
                    for (const ClientUpdate& u : updates) {
                        const Shape s = slice_shapes(global.topo, u.level).at(name);
                        if (i < s.rows && j < s.cols) {
                            const long double wt =
                                w == Weighting::Uniform
                                    ? 1.0L
                                    : static_cast<long double>(u.sample_count);
                            num += wt * static_cast<long double>(u.params.at(name)(i, j));
                            den += wt;
                            lo = std::min(lo, u.params.at(name)(i, j));
                            hi = std::max(hi, u.params.at(name)(i, j));
                        }
                    }
                    const double expect =
                        den > 0.0L ? static_cast<double>(num / den) : g(i, j);
                    worst = std::max(worst, std::fabs(merged(i, j) - expect));
                    if (den > 0.0L)
                        convex_ok = convex_ok && merged(i, j) >= lo - 1e-12 &&
                                    merged(i, j) <= hi + 1e-12;
                }
        }
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "max deviation from covering mean = %.3g", worst);
    return {"aggregation", "covering_mean", worst <= 1e-12 && convex_ok, detail};
}

inline CheckResult projection_manifold(int order) {
    ScalableModel global = build_global(4, {8, 6}, 3, 0xCAFE);
    Rng rng(0xC0DE6);
    std::map<std::size_t, ProjectionLayer> projections;
    projections.emplace(4u, ProjectionLayer(4, 6, ProjectionLayer::Kind::Orthogonal, order));
    projections.emplace(2u, ProjectionLayer(2, 6, ProjectionLayer::Kind::Orthogonal, order));
    double worst = 0.0;
    for (int step = 0; step < 50; ++step) {
        Matrix x(8, 4), t4(8, 4), t2(8, 2);
        for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
        for (double& v : t4.data()) v = rng.uniform(-1.0, 1.0);
        for (double& v : t2.data()) v = rng.uniform(-1.0, 1.0);
        std::vector<FeatureGroup> groups{FeatureGroup{4, 1, t4}, FeatureGroup{2, 1, t2}};
        distill_step(global, projections, groups, DistillBatch{x}, 0.1, 1.0,
                     KlDirection::StudentFirst);
        for (const auto& [dim, layer] : projections) worst = std::max(worst, layer.residual());
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "max residual after 50 steps = %.3g", worst);
    return {"distillation", "projection_manifold", worst <= 1e-9, detail};
}

inline CheckResult partition_properties() {
    const LabeledDataset data = gen_synthetic(4, 100, 4, 0.5, 0xDA7A);
    bool ok = true;
    for (int trial = 0; trial < 10; ++trial) {
        const auto shards = dirichlet_partition(data, 1 + trial, 0.5, trial);
        std::vector<bool> seen(data.size(), false);
        std::size_t total = 0;
        for (const Shard& s : shards) {
            ok = ok && !s.empty();
            total += s.size();
            for (std::size_t i : s) {
                ok = ok && !seen[i];
                seen[i] = true;
            }
        }
        ok = ok && total == data.size();
    }
    // entropy monotone over the alpha grid
    const auto entropy = [&](double alpha) {
        double mean = 0.0;
        for (int s = 0; s < 20; ++s) {
            const auto shards = dirichlet_partition(data, 8, alpha, 500 + s);
            double h_total = 0.0;
            for (const Shard& shard : shards) {
                std::vector<double> counts(data.classes, 0.0);
                for (std::size_t i : shard) counts[data.labels[i]] += 1.0;
                double h = 0.0;
                for (double c : counts)
                    if (c > 0.0) {
                        const double q = c / static_cast<double>(shard.size());
                        h -= q * std::log(q);
                    }
                h_total += h;
            }
            mean += h_total / static_cast<double>(shards.size());
        }
        return mean / 20.0;
    };
    const double h01 = entropy(0.1), h1 = entropy(1.0), h10 = entropy(10.0);
    const bool monotone = h01 <= h1 && h1 <= h10;
    char detail[96];
    std::snprintf(detail, sizeof detail, "entropy(0.1)=%.3f <= entropy(1)=%.3f <= entropy(10)=%.3f",
                  h01, h1, h10);
    return {"data", "partition", ok && monotone, detail};
}

}  // namespace checks

inline std::vector<CheckResult> run_checks(const CheckOptions& opt = {}) {
    std::vector<CheckResult> all;
    all.push_back(checks::orthogonality(opt.taylor_order));
    all.push_back(checks::determinant(opt.taylor_order));
    all.push_back(checks::gradients(opt.taylor_order));
    all.push_back(checks::softmax_and_kl());
    all.push_back(checks::model_nesting());
    all.push_back(checks::aggregation_oracle());
    all.push_back(checks::projection_manifold(opt.taylor_order));
    all.push_back(checks::partition_properties());
    if (!opt.filter.empty()) {
        std::vector<CheckResult> kept;
        for (CheckResult& r : all)
            if ((r.module + "." + r.name).find(opt.filter) != std::string::npos)
                kept.push_back(std::move(r));
        return kept;
    }
    return all;
}

inline int print_check_report(const std::vector<CheckResult>& results) {
    int failures = 0;
    for (const CheckResult& r : results) {
        std::printf("[%s] %s.%s  %s\n", r.passed ? "PASS" : "FAIL", r.module.c_str(),
                    r.name.c_str(), r.detail.c_str());
        failures += r.passed ? 0 : 1;
    }
    std::printf("%zu checks, %d failed\n", results.size(), failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace fedfd

#endif  // FEDFD_CHECK_HPP
