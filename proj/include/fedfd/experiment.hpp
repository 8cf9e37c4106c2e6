#ifndef FEDFD_EXPERIMENT_HPP
#define FEDFD_EXPERIMENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfd/checkpoint.hpp"
#include "fedfd/config.hpp"
#include "fedfd/data.hpp"
#include "fedfd/federation.hpp"

namespace fedfd {

struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<RoundMetrics> metrics;
};

struct ExperimentResult {
    std::vector<SeedRun> runs;
    int exit_code = 0;
};

namespace detail {

struct PreparedData {
    LabeledDataset train;       // client pool, distillation split removed
    Matrix distill_inputs;      // labels discarded
    LabeledDataset test;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    PreparedData out;
    LabeledDataset full_train;
    if (cfg.dataset.type == DatasetSpec::Type::Synthetic) {
        const SyntheticSpec& s = cfg.dataset.synthetic;
        full_train = gen_synthetic(s.classes, s.train_per_class, s.input_dim, s.spread,
                                   derive_seed(seed, {0xDA7Au, 0}));
        out.test = gen_synthetic(s.classes, s.test_per_class, s.input_dim, s.spread,
                                 derive_seed(seed, {0xDA7Au, 1}));
    } else {
        full_train = load_idx(cfg.dataset.idx.train_images, cfg.dataset.idx.train_labels);
        out.test = load_idx(cfg.dataset.idx.test_images, cfg.dataset.idx.test_labels);
        if (out.test.classes < full_train.classes) out.test.classes = full_train.classes;
        else full_train.classes = out.test.classes;
    }

    // hold out the label-free distillation split from the head of a seeded
    // permutation of the training rows
    Shard perm(full_train.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0xDA7Au, 2}));
    rng.shuffle(perm);
    const auto distill_n =
        static_cast<std::size_t>(std::floor(cfg.distill_fraction * full_train.size()));
    const Shard distill_idx(perm.begin(), perm.begin() + distill_n);
    const Shard train_idx(perm.begin() + distill_n, perm.end());
    out.distill_inputs = gather_rows(full_train.inputs, distill_idx);
    out.train.inputs = gather_rows(full_train.inputs, train_idx);
    out.train.labels = gather_labels(full_train.labels, train_idx);
    out.train.classes = full_train.classes;
    return out;
}

inline SimulationConfig simulation_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    SimulationConfig sim;
    sim.participation = cfg.participation;
    sim.local_epochs = cfg.local_epochs;
    sim.batch_size = cfg.batch_size;
    sim.local_lr = cfg.local_lr;
    sim.distill_lr = cfg.distill_lr;
    sim.distill_epochs = cfg.distill_epochs;
    sim.weight_decay = cfg.weight_decay;
    sim.method = cfg.method;
    sim.tau = cfg.tau;
    sim.kl_direction = cfg.kl_direction;
    sim.weighting = cfg.weighting;
    sim.taylor_order = cfg.taylor_order;
    sim.seed = seed;
    return sim;
}

inline nlohmann::json summarize(const std::vector<SeedRun>& runs,
                                const std::vector<double>& targets) {
    nlohmann::json summary;
    std::vector<double> finals, bests, last10;
    for (const SeedRun& run : runs) {
        if (run.metrics.empty()) continue;
        finals.push_back(run.metrics.back().global_acc);
        double best = 0.0;
        for (const RoundMetrics& m : run.metrics) best = std::max(best, m.global_acc);
        bests.push_back(best);
        const std::size_t tail = std::min<std::size_t>(10, run.metrics.size());
        for (std::size_t i = run.metrics.size() - tail; i < run.metrics.size(); ++i)
            last10.push_back(run.metrics[i].global_acc);
    }
    const auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    if (finals.empty()) {
        summary["final_acc"] = nullptr;
        summary["best_acc"] = nullptr;
        summary["last10_mean"] = nullptr;
        summary["last10_std"] = nullptr;
    } else {
        summary["final_acc"] = mean(finals);
        summary["best_acc"] = mean(bests);
        const double m10 = mean(last10);
        double var = 0.0;
        for (double v : last10) var += (v - m10) * (v - m10);
        var /= static_cast<double>(last10.size());
        summary["last10_mean"] = m10;
        summary["last10_std"] = std::sqrt(var);
    }
    nlohmann::json rtt = nlohmann::json::object();
    for (double target : targets) {
        bool all_reached = !runs.empty();
        double total = 0.0;
        for (const SeedRun& run : runs) {
            bool reached = false;
            for (const RoundMetrics& m : run.metrics) {
                if (m.global_acc >= target) {
                    total += static_cast<double>(m.round + 1);  // rounds, 1-based
                    reached = true;
                    break;
                }
            }
            all_reached = all_reached && reached;
        }
        char key[32];
        std::snprintf(key, sizeof key, "%g", target);
        if (all_reached)
            rtt[key] = total / static_cast<double>(runs.size());
        else
            rtt[key] = nullptr;
    }
    summary["rounds_to_target"] = rtt;
    return summary;
}

}  // namespace detail

// Runs every configured seed, streaming one metrics CSV per seed so partial
// results survive a failed run. Returns the collected metrics; `quiet`
// suppresses the per-round progress lines.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool quiet = false) {
    validate(cfg);
    std::filesystem::create_directories(cfg.out_dir);

    const LevelSchedule schedule(cfg.level_decay);
    const std::vector<char> labels = LevelSchedule::parse_labels(cfg.levels);

    ExperimentResult result;
    for (std::uint64_t seed : cfg.seeds) {
        SeedRun run;
        run.seed = seed;
        const std::string csv_path =
            cfg.out_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("run: cannot open " + csv_path);
        csv << kMetricsCsvHeader << "\n";
        csv.flush();

        try {
            const detail::PreparedData data = detail::prepare_data(cfg, seed);
            ScalableModel global =
                build_global(data.train.inputs.cols(), cfg.hidden_widths,
                             static_cast<std::size_t>(data.train.classes),
                             derive_seed(seed, {0x90DE1u}), schedule);
            const auto shards =
                dirichlet_partition(data.train, cfg.clients, cfg.alpha,
                                    derive_seed(seed, {0x9A27u}));
            auto clients =
                assign_clients(labels, shards, global.feature_dim(), schedule, seed);

            std::vector<ArchitectureLevel> level_list;
            for (char l : labels) level_list.push_back(schedule.level(l, global.feature_dim()));

            FederatedSimulation sim(detail::simulation_config(cfg, seed), std::move(global),
                                    std::move(clients), data.train, data.distill_inputs,
                                    data.test);
            for (std::size_t round = 0; round < cfg.rounds; ++round) {
                RoundMetrics m = sim.run_round(round);
                run.metrics.push_back(m);
                if (!cfg.csv_wall_clock) m.seconds = 0.0;
                csv << format_metrics_row(m) << "\n";
                csv.flush();
                if (!quiet)
                    std::cerr << "seed " << seed << " round " << m.round << " global_acc "
                              << m.global_acc << " distill_loss " << m.distill_loss << "\n";
                if (cfg.checkpoint_every > 0 && (round + 1) % cfg.checkpoint_every == 0)
                    save_checkpoint(cfg.out_dir + "/checkpoint_seed" + std::to_string(seed) +
                                        "_round" + std::to_string(round + 1) + ".json",
                                    sim.global_model(), level_list, sim.projections());
            }
        } catch (const std::exception& e) {
            std::cerr << "run: seed " << seed << " failed: " << e.what() << "\n";
            result.runs.push_back(std::move(run));
            result.exit_code = 1;
            continue;
        }
        result.runs.push_back(std::move(run));
    }

    std::ofstream summary(cfg.out_dir + "/summary.json");
    summary << detail::summarize(result.runs, cfg.target_accuracies).dump(2) << "\n";
    return result;
}

}  // namespace fedfd

#endif  // FEDFD_EXPERIMENT_HPP
