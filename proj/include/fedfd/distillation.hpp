#ifndef FEDFD_DISTILLATION_HPP
#define FEDFD_DISTILLATION_HPP

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedfd/autodiff.hpp"
#include "fedfd/matrix.hpp"
#include "fedfd/models.hpp"
#include "fedfd/numerics.hpp"

namespace fedfd {

// Which side of the alignment KL carries the student projection.
enum class KlDirection { StudentFirst, TeacherFirst };

// Per-architecture aggregate of teacher features over one distillation batch.
struct FeatureGroup {
    std::size_t feature_dim = 0;
    std::size_t member_count = 0;
    Matrix aggregated_features;  // batch x feature_dim
};

struct DistillBatch {
    Matrix inputs;  // batch x input_dim
};

// Trainable map from the global feature space (dim D) onto a client
// architecture's feature space (dim d <= D).
//
// The orthogonal kind keeps the strict-upper-triangle parameters of a
// skew-symmetric W and caches M = first d rows of exp(W); rows of M are
// orthonormal by construction, so updates on the free parameters can never
// leave the manifold. The dense kind trains M directly with no constraint
// (the "-w/o orthogonal projection" ablation) from the same truncated-identity
// start.
class ProjectionLayer {
public:
    enum class Kind { Orthogonal, Dense };

    ProjectionLayer(std::size_t target_dim, std::size_t source_dim,
                    Kind kind = Kind::Orthogonal, int taylor_order = kDefaultTaylorOrder)
        : target_(target_dim), source_(source_dim), kind_(kind), order_(taylor_order) {
        if (target_ == 0 || target_ > source_)
            throw std::invalid_argument("ProjectionLayer: need 0 < target_dim <= source_dim");
        if (kind_ == Kind::Orthogonal) {
            free_params_.assign(skew_param_count(source_), 0.0);
        } else {
            free_params_.assign(target_ * source_, 0.0);
            for (std::size_t i = 0; i < target_; ++i) free_params_[i * source_ + i] = 1.0;
        }
        refresh();
    }

    std::size_t target_dim() const { return target_; }
    std::size_t source_dim() const { return source_; }
    Kind kind() const { return kind_; }
    int taylor_order() const { return order_; }

    const std::vector<double>& free_params() const { return free_params_; }

    void set_free_params(std::vector<double> p) {
        if (p.size() != free_params_.size())
            throw std::invalid_argument("ProjectionLayer: expected " +
                                        std::to_string(free_params_.size()) + " parameters");
        free_params_ = std::move(p);
        refresh();
    }

    // M_d, target_dim x source_dim
    const Matrix& map() const { return map_; }

    void refresh() {
        if (kind_ == Kind::Orthogonal) {
            map_ = take_rows(matrix_exp(skew_from_params(free_params_, source_), order_), target_);
        } else {
            map_ = Matrix(target_, source_, free_params_);
        }
    }

    double residual() const { return orthogonality_residual(map_); }

private:
    std::size_t target_;
    std::size_t source_;
    Kind kind_;
    int order_;
    std::vector<double> free_params_;
    Matrix map_;
};

// z (batch x D) -> z * M^T (batch x d)
inline Matrix project(const ProjectionLayer& layer, const Matrix& z) {
    if (z.cols() != layer.source_dim())
        throw std::invalid_argument("project: input has " + std::to_string(z.cols()) +
                                    " columns, layer expects " +
                                    std::to_string(layer.source_dim()));
    return matmul_nt(z, layer.map());
}

// Unweighted per-level mean of client feature batches, one group per distinct
// level present, ordered by descending feature dimension.
inline std::vector<FeatureGroup> group_features(
    const std::vector<std::pair<ArchitectureLevel, Matrix>>& client_features) {
    std::map<std::size_t, FeatureGroup> by_dim;
    for (const auto& [level, features] : client_features) {
        if (features.cols() != level.feature_dim)
            throw std::invalid_argument("group_features: feature width " +
                                        std::to_string(features.cols()) + " != level dim " +
                                        std::to_string(level.feature_dim));
        auto it = by_dim.find(level.feature_dim);
        if (it == by_dim.end()) {
            FeatureGroup g;
            g.feature_dim = level.feature_dim;
            g.member_count = 1;
            g.aggregated_features = features;
            by_dim.emplace(level.feature_dim, std::move(g));
        } else {
            FeatureGroup& g = it->second;
            require_same_shape(g.aggregated_features, features, "group_features");
            for (std::size_t k = 0; k < features.size(); ++k)
                g.aggregated_features[k] += features[k];
            ++g.member_count;
        }
    }
    std::vector<FeatureGroup> groups;
    for (auto it = by_dim.rbegin(); it != by_dim.rend(); ++it) {
        FeatureGroup g = std::move(it->second);
        const double inv = 1.0 / static_cast<double>(g.member_count);
        for (double& x : g.aggregated_features.data()) x *= inv;
        groups.push_back(std::move(g));
    }
    return groups;
}

namespace detail {

struct StagedProjection {
    ProjectionLayer* layer = nullptr;
    Value free_params;
    Value map;
};

inline StagedProjection stage_projection(GradTape& tape, ProjectionLayer& layer) {
    StagedProjection sp;
    sp.layer = &layer;
    if (layer.kind() == ProjectionLayer::Kind::Orthogonal) {
        sp.free_params = tape.param(Matrix(1, layer.free_params().size(), layer.free_params()));
        Value w = tape.skew(sp.free_params, layer.source_dim());
        sp.map = tape.take_rows(tape.matrix_exp(w, layer.taylor_order()), layer.target_dim());
    } else {
        sp.free_params =
            tape.param(Matrix(layer.target_dim(), layer.source_dim(), layer.free_params()));
        sp.map = sp.free_params;
    }
    return sp;
}

// Mean-over-batch KL between softmax_t of the projected student features and
// softmax_t of the teacher aggregate, argument order per `dir`.
inline Value alignment_term(GradTape& tape, Value student_features, Value map,
                            const Matrix& teacher, double tau, KlDirection dir) {
    Value s = tape.matmul_nt(student_features, map);
    if (dir == KlDirection::StudentFirst) {
        Value p = tape.softmax_rows(s, tau);
        Value lp = tape.log_softmax_rows(s, tau);
        Value lq = tape.constant(log_softmax_rows(teacher, tau));
        return tape.kl_rows_mean(p, lp, lq);
    }
    Value pt = tape.constant(softmax_rows(teacher, tau));
    Value lpt = tape.constant(log_softmax_rows(teacher, tau));
    Value lq = tape.log_softmax_rows(s, tau);
    return tape.kl_rows_mean(pt, lpt, lq);
}

}  // namespace detail

// One alignment pairing: a teacher aggregate and the projection trained for
// it. Built by distill_step from the dim-keyed projection table, or directly
// by the per-client ablation path.
struct AlignmentTarget {
    const Matrix* teacher = nullptr;
    ProjectionLayer* layer = nullptr;
};

namespace detail {

// Builds the alignment objective: the mean over targets of the
// per-target batch KL. Returns an invalid Value when there is nothing to
// align.
inline Value build_alignment_loss(GradTape& tape, Value student_features,
                                  const std::vector<AlignmentTarget>& targets,
                                  std::vector<StagedProjection>& staged, double tau,
                                  KlDirection dir) {
    Value total;
    for (const AlignmentTarget& t : targets) {
        StagedProjection sp = stage_projection(tape, *t.layer);
        Value term = alignment_term(tape, student_features, sp.map, *t.teacher, tau, dir);
        staged.push_back(sp);
        total = total.valid() ? tape.add(total, term) : term;
    }
    if (!total.valid()) return total;
    return tape.scale(total, 1.0 / static_cast<double>(targets.size()));
}

inline std::vector<AlignmentTarget> match_groups(
    const std::vector<FeatureGroup>& groups, std::map<std::size_t, ProjectionLayer>& projections,
    std::size_t global_feature_dim) {
    if (groups.empty()) throw std::invalid_argument("distill: no feature groups");
    std::vector<AlignmentTarget> targets;
    for (const FeatureGroup& g : groups) {
        auto it = projections.find(g.feature_dim);
        if (it != projections.end()) {
            targets.push_back({&g.aggregated_features, &it->second});
        } else if (g.feature_dim != global_feature_dim) {
            throw std::invalid_argument("distill: missing projection for feature dim " +
                                        std::to_string(g.feature_dim));
        }
        // the top group (d equal to the global feature dim) aligns through the
        // identity and trains no projection
    }
    return targets;
}

}  // namespace detail

// Ensemble feature-alignment loss of the current global extractor against the
// per-architecture teacher aggregates: (1 / #projected groups) * sum of
// mean-batch KL terms. The top group needs no projection and adds no term.
// Evaluated with plain matrix arithmetic; distill_step's tape value must agree.
inline double distill_loss(const ScalableModel& global,
                           const std::map<std::size_t, ProjectionLayer>& projections,
                           const std::vector<FeatureGroup>& groups, const DistillBatch& batch,
                           double tau, KlDirection dir) {
    if (batch.inputs.rows() == 0) throw std::invalid_argument("distill_loss: empty batch");
    if (groups.empty()) throw std::invalid_argument("distill_loss: no feature groups");
    const Matrix z = global.forward_features(batch.inputs);
    double total = 0.0;
    std::size_t terms = 0;
    for (const FeatureGroup& g : groups) {
        auto it = projections.find(g.feature_dim);
        if (it == projections.end()) {
            if (g.feature_dim != global.feature_dim())
                throw std::invalid_argument("distill_loss: missing projection for feature dim " +
                                            std::to_string(g.feature_dim));
            continue;
        }
        const Matrix s = project(it->second, z);
        require_same_shape(s, g.aggregated_features, "distill_loss");
        const Matrix& first = dir == KlDirection::StudentFirst ? s : g.aggregated_features;
        const Matrix& second = dir == KlDirection::StudentFirst ? g.aggregated_features : s;
        const Matrix p = softmax_rows(first, tau);
        const Matrix lp = log_softmax_rows(first, tau);
        const Matrix lq = log_softmax_rows(second, tau);
        double kl = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) kl += p[k] * (lp[k] - lq[k]);
        total += kl / static_cast<double>(p.rows());
        ++terms;
    }
    return terms == 0 ? 0.0 : total / static_cast<double>(terms);
}

struct DistillStepResult {
    double loss = 0.0;
};

// One SGD step of the alignment loss with respect to the global extractor and
// every matched projection's free parameters; gradients flow through the
// matrix exponential, and orthogonal layers are refreshed from their updated
// parameters so the manifold constraint survives by construction. The
// classifier head is untouched.
inline DistillStepResult distill_step(ScalableModel& global,
                                      std::map<std::size_t, ProjectionLayer>& projections,
                                      const std::vector<FeatureGroup>& groups,
                                      const DistillBatch& batch, double lr, double tau,
                                      KlDirection dir) {
    if (batch.inputs.rows() == 0) throw std::invalid_argument("distill_step: empty batch");
    auto targets = detail::match_groups(groups, projections, global.feature_dim());
    if (targets.empty()) return {0.0};

    GradTape tape;
    TapeModel tm = stage_on_tape(tape, global, true, false);
    Value z = features_on_tape(tape, tm, tape.constant(batch.inputs));
    std::vector<detail::StagedProjection> staged;
    Value loss = detail::build_alignment_loss(tape, z, targets, staged, tau, dir);
    tape.backward(loss);

    apply_sgd_step(global, tape, tm, lr, 0.0, false);
    for (detail::StagedProjection& sp : staged) {
        const Matrix g = tape.grad(sp.free_params);
        std::vector<double> p = sp.layer->free_params();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
        sp.layer->set_free_params(std::move(p));
    }
    return {tape.value(loss)(0, 0)};
}

// Per-client alignment used by the "-w/o feature alignment" ablation: one
// projection per client, teachers not grouped.
inline DistillStepResult distill_step_targets(ScalableModel& global,
                                              std::vector<AlignmentTarget>& targets,
                                              const DistillBatch& batch, double lr, double tau,
                                              KlDirection dir) {
    if (batch.inputs.rows() == 0)
        throw std::invalid_argument("distill_step_targets: empty batch");
    if (targets.empty()) return {0.0};
    GradTape tape;
    TapeModel tm = stage_on_tape(tape, global, true, false);
    Value z = features_on_tape(tape, tm, tape.constant(batch.inputs));
    std::vector<detail::StagedProjection> staged;
    Value loss = detail::build_alignment_loss(tape, z, targets, staged, tau, dir);
    tape.backward(loss);
    apply_sgd_step(global, tape, tm, lr, 0.0, false);
    for (detail::StagedProjection& sp : staged) {
        const Matrix g = tape.grad(sp.free_params);
        std::vector<double> p = sp.layer->free_params();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
        sp.layer->set_free_params(std::move(p));
    }
    return {tape.value(loss)(0, 0)};
}

// Logit-ensemble baseline: teacher is the unweighted mean of client logits;
// one SGD step of mean KL(softmax_t(teacher) || softmax_t(global logits))
// over the full global model.
inline DistillStepResult logit_ensemble_distill_step(
    ScalableModel& global, const std::vector<std::pair<ArchitectureLevel, Matrix>>& client_logits,
    const DistillBatch& batch, double lr, double tau) {
    if (batch.inputs.rows() == 0)
        throw std::invalid_argument("logit_ensemble_distill_step: empty batch");
    if (client_logits.empty())
        throw std::invalid_argument("logit_ensemble_distill_step: no client logits");
    Matrix teacher(client_logits.front().second.rows(), client_logits.front().second.cols());
    for (const auto& [level, logits] : client_logits) {
        require_same_shape(logits, teacher, "logit_ensemble_distill_step");
        for (std::size_t k = 0; k < teacher.size(); ++k) teacher[k] += logits[k];
    }
    const double inv = 1.0 / static_cast<double>(client_logits.size());
    for (double& x : teacher.data()) x *= inv;

    GradTape tape;
    TapeModel tm = stage_on_tape(tape, global, true, true);
    Value logits = logits_on_tape(tape, tm, tape.constant(batch.inputs));
    Value pt = tape.constant(softmax_rows(teacher, tau));
    Value lpt = tape.constant(log_softmax_rows(teacher, tau));
    Value lq = tape.log_softmax_rows(logits, tau);
    Value loss = tape.kl_rows_mean(pt, lpt, lq);
    tape.backward(loss);
    apply_sgd_step(global, tape, tm, lr, 0.0, true);
    return {tape.value(loss)(0, 0)};
}

}  // namespace fedfd

#endif  // FEDFD_DISTILLATION_HPP
