#ifndef FEDFD_FEDERATION_HPP
#define FEDFD_FEDERATION_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedfd/aggregation.hpp"
#include "fedfd/data.hpp"
#include "fedfd/distillation.hpp"
#include "fedfd/models.hpp"
#include "fedfd/rng.hpp"

namespace fedfd {

enum class Method { FedFd, LogitBaseline, HeteroflOnly, AblationNoOrtho, AblationNoGroup };

struct ClientState {
    std::size_t client_id = 0;
    ArchitectureLevel level;
    Shard shard;  // indices into the training set; disjoint across clients
    std::uint64_t seed = 0;
};

struct RoundMetrics {
    std::size_t round = 0;
    double global_acc = 0.0;
    double local_acc_mean = 0.0;
    double distill_loss = 0.0;
    double ortho_residual = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "round,global_acc,local_acc_mean,distill_loss,ortho_residual,seconds";

inline std::string format_metrics_row(const RoundMetrics& m) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", m.round, m.global_acc,
                  m.local_acc_mean, m.distill_loss, m.ortho_residual, m.seconds);
    return buf;
}

// Deterministic uniform sample without replacement of max(1, round(ratio * K))
// client ids; the same (seed, round) always selects the same subset.
inline std::vector<std::size_t> sample_clients(std::size_t total, double ratio, std::size_t round,
                                               std::uint64_t seed) {
    if (!(ratio > 0.0) || ratio > 1.0)
        throw std::invalid_argument("sample_clients: ratio must lie in (0,1]");
    if (total == 0) throw std::invalid_argument("sample_clients: no clients");
    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total))));
    std::vector<std::size_t> ids(total);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x5E1Cu, round}));
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(want);
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Fraction of argmax-correct predictions (ties resolve to the lowest index).
inline double evaluate(const ScalableModel& model, const LabeledDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    const Matrix logits = model.forward_logits(test.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(r, c) > logits(r, best)) best = c;
        correct += best == static_cast<std::size_t>(test.labels[r]);
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double evaluate_local_mean(const std::vector<ScalableModel>& models,
                                  const LabeledDataset& test) {
    if (models.empty()) throw std::invalid_argument("evaluate_local_mean: no models");
    double total = 0.0;
    for (const ScalableModel& m : models) total += evaluate(m, test);
    return total / static_cast<double>(models.size());
}

struct SimulationConfig {
    double participation = 0.4;
    std::size_t local_epochs = 10;
    std::size_t batch_size = 64;
    double local_lr = 0.001;
    double distill_lr = 0.01;
    std::size_t distill_epochs = 1;
    double weight_decay = 1e-4;
    Method method = Method::FedFd;
    double tau = 1.0;
    KlDirection kl_direction = KlDirection::StudentFirst;
    Weighting weighting = Weighting::Uniform;
    int taylor_order = kDefaultTaylorOrder;
    std::uint64_t seed = 1;
};

// One server plus its client population. Owns the global model, the per-level
// projection layers, and (for the per-client ablation) the per-client layers.
// Everything a round touches is derived from the master seed, so a fixed
// configuration replays bit-identically.
class FederatedSimulation {
public:
    FederatedSimulation(SimulationConfig config, ScalableModel global,
                        std::vector<ClientState> clients, LabeledDataset train,
                        Matrix distill_inputs, LabeledDataset test)
        : cfg_(std::move(config)),
          global_(std::move(global)),
          clients_(std::move(clients)),
          train_(std::move(train)),
          distill_inputs_(std::move(distill_inputs)),
          test_(std::move(test)) {
        if (clients_.empty()) throw std::invalid_argument("FederatedSimulation: no clients");
        if (needs_level_projections()) {
            const ProjectionLayer::Kind kind = cfg_.method == Method::AblationNoOrtho
                                                   ? ProjectionLayer::Kind::Dense
                                                   : ProjectionLayer::Kind::Orthogonal;
            for (const ClientState& c : clients_) {
                const std::size_t dim = c.level.feature_dim;
                if (dim != global_.feature_dim() && !projections_.count(dim))
                    projections_.emplace(
                        dim, ProjectionLayer(dim, global_.feature_dim(), kind, cfg_.taylor_order));
            }
        }
    }

    const ScalableModel& global_model() const { return global_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    const std::map<std::size_t, ProjectionLayer>& projections() const { return projections_; }
    const std::map<std::size_t, ProjectionLayer>& client_projections() const {
        return client_projections_;
    }

    std::map<std::size_t, ProjectionLayer>& mutable_projections() { return projections_; }

    RoundMetrics run_round(std::size_t round) {
        const auto t0 = std::chrono::steady_clock::now();
        RoundMetrics metrics;
        metrics.round = round;

        const auto selected =
            sample_clients(clients_.size(), cfg_.participation, round, cfg_.seed);

        // local phase: broadcast the level slice, train on the private shard
        std::vector<ScalableModel> local_models;
        std::vector<ClientUpdate> updates;
        local_models.reserve(selected.size());
        for (std::size_t id : selected) {
            const ClientState& c = clients_.at(id);
            ScalableModel model = broadcast(global_, c.level);
            TrainOptions opt;
            opt.epochs = cfg_.local_epochs;
            opt.lr = cfg_.local_lr;
            opt.weight_decay = cfg_.weight_decay;
            opt.batch_size = cfg_.batch_size;
            local_train(model, train_, c.shard, opt, derive_seed(cfg_.seed, {0x10CA1u, round, id}));
            ClientUpdate u;
            u.client_id = id;
            u.level = c.level;
            u.params = model.params;
            u.sample_count = c.shard.size();
            updates.push_back(std::move(u));
            local_models.push_back(std::move(model));
        }

        global_.params = hetero_aggregate(global_.params, updates, global_.topo, cfg_.weighting);

        // server-side distillation on the held-out inputs
        if (cfg_.method != Method::HeteroflOnly && distill_inputs_.rows() > 0)
            metrics.distill_loss = distill_phase(round, selected, local_models);

        metrics.ortho_residual = max_projection_residual();
        metrics.global_acc = evaluate(global_, test_);
        metrics.local_acc_mean = evaluate_local_mean(local_models, test_);
        metrics.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return metrics;
    }

private:
    bool needs_level_projections() const {
        return cfg_.method == Method::FedFd || cfg_.method == Method::AblationNoOrtho;
    }

    double max_projection_residual() const {
        double worst = 0.0;
        for (const auto& [dim, layer] : projections_) worst = std::max(worst, layer.residual());
        for (const auto& [id, layer] : client_projections_)
            worst = std::max(worst, layer.residual());
        return worst;
    }

    std::vector<Shard> distill_batches(std::size_t round) const {
        Shard order(distill_inputs_.rows());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::vector<Shard> batches;
        for (std::size_t epoch = 0; epoch < cfg_.distill_epochs; ++epoch) {
            Rng rng(derive_seed(cfg_.seed, {0xD157u, round, epoch}));
            Shard shuffled = order;
            rng.shuffle(shuffled);
            for (std::size_t start = 0; start < shuffled.size(); start += cfg_.batch_size) {
                const std::size_t stop = std::min(shuffled.size(), start + cfg_.batch_size);
                batches.emplace_back(shuffled.begin() + start, shuffled.begin() + stop);
            }
        }
        return batches;
    }

    double distill_phase(std::size_t round, const std::vector<std::size_t>& selected,
                         const std::vector<ScalableModel>& local_models) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (const Shard& batch_idx : distill_batches(round)) {
            const DistillBatch batch{gather_rows(distill_inputs_, batch_idx)};
            double loss = 0.0;
            switch (cfg_.method) {
                case Method::FedFd:
                case Method::AblationNoOrtho: {
                    std::vector<std::pair<ArchitectureLevel, Matrix>> features;
                    for (std::size_t i = 0; i < selected.size(); ++i)
                        features.emplace_back(clients_.at(selected[i]).level,
                                              local_models[i].forward_features(batch.inputs));
                    const auto groups = group_features(features);
                    loss = distill_step(global_, projections_, groups, batch, cfg_.distill_lr,
                                        cfg_.tau, cfg_.kl_direction)
                               .loss;
                    break;
                }
                case Method::AblationNoGroup: {
                    // one personalized projection per client, teachers ungrouped
                    std::vector<Matrix> teachers;
                    teachers.reserve(selected.size());
                    for (std::size_t i = 0; i < selected.size(); ++i)
                        teachers.push_back(local_models[i].forward_features(batch.inputs));
                    std::vector<AlignmentTarget> targets;
                    for (std::size_t i = 0; i < selected.size(); ++i) {
                        const std::size_t id = selected[i];
                        const std::size_t dim = clients_.at(id).level.feature_dim;
                        auto it = client_projections_.find(id);
                        if (it == client_projections_.end())
                            it = client_projections_
                                     .emplace(id, ProjectionLayer(dim, global_.feature_dim(),
                                                                  ProjectionLayer::Kind::Orthogonal,
                                                                  cfg_.taylor_order))
                                     .first;
                        targets.push_back({&teachers[i], &it->second});
                    }
                    loss = distill_step_targets(global_, targets, batch, cfg_.distill_lr,
                                                cfg_.tau, cfg_.kl_direction)
                               .loss;
                    break;
                }
                case Method::LogitBaseline: {
                    std::vector<std::pair<ArchitectureLevel, Matrix>> logits;
                    for (std::size_t i = 0; i < selected.size(); ++i)
                        logits.emplace_back(clients_.at(selected[i]).level,
                                            local_models[i].forward_logits(batch.inputs));
                    loss = logit_ensemble_distill_step(global_, logits, batch, cfg_.distill_lr,
                                                       cfg_.tau)
                               .loss;
                    break;
                }
                case Method::HeteroflOnly:
                    break;
            }
            loss_sum += loss;
            ++steps;
        }
        return steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
    }

    SimulationConfig cfg_;
    ScalableModel global_;
    std::vector<ClientState> clients_;
    LabeledDataset train_;
    Matrix distill_inputs_;
    LabeledDataset test_;
    std::map<std::size_t, ProjectionLayer> projections_;         // keyed by feature dim
    std::map<std::size_t, ProjectionLayer> client_projections_;  // keyed by client id
};

// Round-robin level assignment over the configured label list by client id.
inline std::vector<ClientState> assign_clients(const std::vector<char>& labels,
                                               const std::vector<Shard>& shards,
                                               std::size_t full_feature_width,
                                               const LevelSchedule& schedule,
                                               std::uint64_t seed) {
    std::vector<ClientState> clients;
    clients.reserve(shards.size());
    for (std::size_t id = 0; id < shards.size(); ++id) {
        ClientState c;
        c.client_id = id;
        c.level = schedule.level(labels[id % labels.size()], full_feature_width);
        c.shard = shards[id];
        c.seed = derive_seed(seed, {0xC11E7u, id});
        clients.push_back(std::move(c));
    }
    return clients;
}

}  // namespace fedfd

#endif  // FEDFD_FEDERATION_HPP
