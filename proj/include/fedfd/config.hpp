#ifndef FEDFD_CONFIG_HPP
#define FEDFD_CONFIG_HPP

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfd/distillation.hpp"
#include "fedfd/federation.hpp"
#include "fedfd/models.hpp"
#include "fedfd/numerics.hpp"

namespace fedfd {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SyntheticSpec {
    int classes = 4;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 250;
    std::size_t input_dim = 20;
    double spread = 0.6;
};

struct IdxSpec {
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
};

struct DatasetSpec {
    enum class Type { Synthetic, Idx };
    Type type = Type::Synthetic;
    SyntheticSpec synthetic;
    IdxSpec idx;
};

// Everything one experiment needs; defaults follow the reference protocol
// (K=20 clients at ratio 0.4, T=200 rounds, E=10 local epochs, batch 64,
// weight decay 1e-4, local lr 0.001, distill lr 0.01, level decay 10%).
struct ExperimentConfig {
    DatasetSpec dataset;
    std::size_t clients = 20;
    double participation = 0.4;
    std::size_t rounds = 200;
    std::size_t local_epochs = 10;
    std::size_t batch_size = 64;
    double local_lr = 0.001;
    double distill_lr = 0.01;
    std::size_t distill_epochs = 1;
    double weight_decay = 1e-4;
    double alpha = 1.0;
    std::string levels = "a-d-g";
    double level_decay = 0.10;
    Method method = Method::FedFd;
    double tau = 1.0;
    KlDirection kl_direction = KlDirection::StudentFirst;
    Weighting weighting = Weighting::Uniform;
    int taylor_order = kDefaultTaylorOrder;
    std::vector<std::uint64_t> seeds = {1};
    double distill_fraction = 0.10;
    std::vector<std::size_t> hidden_widths = {32, 16};
    std::vector<double> target_accuracies;
    std::size_t checkpoint_every = 0;
    std::string out_dir = "out";
    bool csv_wall_clock = false;
};

inline std::string method_to_string(Method m) {
    switch (m) {
        case Method::FedFd: return "fedfd";
        case Method::LogitBaseline: return "logit_baseline";
        case Method::HeteroflOnly: return "heterofl_only";
        case Method::AblationNoOrtho: return "ablation:no_ortho";
        case Method::AblationNoGroup: return "ablation:no_group";
    }
    return "fedfd";
}

inline Method method_from_string(const std::string& s) {
    if (s == "fedfd") return Method::FedFd;
    if (s == "logit_baseline") return Method::LogitBaseline;
    if (s == "heterofl_only") return Method::HeteroflOnly;
    if (s == "ablation:no_ortho") return Method::AblationNoOrtho;
    if (s == "ablation:no_group") return Method::AblationNoGroup;
    throw ConfigError("method: unknown value '" + s + "'");
}

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                               const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type");
    }
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json dataset;
    if (c.dataset.type == DatasetSpec::Type::Synthetic) {
        dataset = {{"type", "synthetic"},
                   {"classes", c.dataset.synthetic.classes},
                   {"train_per_class", c.dataset.synthetic.train_per_class},
                   {"test_per_class", c.dataset.synthetic.test_per_class},
                   {"input_dim", c.dataset.synthetic.input_dim},
                   {"spread", c.dataset.synthetic.spread}};
    } else {
        dataset = {{"type", "idx"},
                   {"train_images", c.dataset.idx.train_images},
                   {"train_labels", c.dataset.idx.train_labels},
                   {"test_images", c.dataset.idx.test_images},
                   {"test_labels", c.dataset.idx.test_labels}};
    }
    return {{"dataset", dataset},
            {"clients", c.clients},
            {"participation", c.participation},
            {"rounds", c.rounds},
            {"local_epochs", c.local_epochs},
            {"batch_size", c.batch_size},
            {"local_lr", c.local_lr},
            {"distill_lr", c.distill_lr},
            {"distill_epochs", c.distill_epochs},
            {"weight_decay", c.weight_decay},
            {"alpha", c.alpha},
            {"levels", c.levels},
            {"level_decay", c.level_decay},
            {"method", method_to_string(c.method)},
            {"tau", c.tau},
            {"kl_direction",
             c.kl_direction == KlDirection::StudentFirst ? "student_first" : "teacher_first"},
            {"weighting", c.weighting == Weighting::Uniform ? "uniform" : "sample"},
            {"taylor_order", c.taylor_order},
            {"seeds", c.seeds},
            {"distill_fraction", c.distill_fraction},
            {"hidden_widths", c.hidden_widths},
            {"target_accuracies", c.target_accuracies},
            {"checkpoint_every", c.checkpoint_every},
            {"out_dir", c.out_dir},
            {"csv_wall_clock", c.csv_wall_clock}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::require_known_keys(
        doc,
        {"dataset", "clients", "participation", "rounds", "local_epochs", "batch_size",
         "local_lr", "distill_lr", "distill_epochs", "weight_decay", "alpha", "levels",
         "level_decay", "method", "tau", "kl_direction", "weighting", "taylor_order", "seeds",
         "distill_fraction", "hidden_widths", "target_accuracies", "checkpoint_every", "out_dir",
         "csv_wall_clock"},
        "config");

    ExperimentConfig c;
    if (doc.contains("dataset")) {
        const nlohmann::json& d = doc.at("dataset");
        std::string type = "synthetic";
        detail::read_field(d, "type", type);
        if (type == "synthetic") {
            detail::require_known_keys(
                d, {"type", "classes", "train_per_class", "test_per_class", "input_dim", "spread"},
                "dataset");
            c.dataset.type = DatasetSpec::Type::Synthetic;
            detail::read_field(d, "classes", c.dataset.synthetic.classes);
            detail::read_field(d, "train_per_class", c.dataset.synthetic.train_per_class);
            detail::read_field(d, "test_per_class", c.dataset.synthetic.test_per_class);
            detail::read_field(d, "input_dim", c.dataset.synthetic.input_dim);
            detail::read_field(d, "spread", c.dataset.synthetic.spread);
        } else if (type == "idx") {
            detail::require_known_keys(
                d, {"type", "train_images", "train_labels", "test_images", "test_labels"},
                "dataset");
            c.dataset.type = DatasetSpec::Type::Idx;
            detail::read_field(d, "train_images", c.dataset.idx.train_images);
            detail::read_field(d, "train_labels", c.dataset.idx.train_labels);
            detail::read_field(d, "test_images", c.dataset.idx.test_images);
            detail::read_field(d, "test_labels", c.dataset.idx.test_labels);
            if (c.dataset.idx.train_images.empty() || c.dataset.idx.train_labels.empty() ||
                c.dataset.idx.test_images.empty() || c.dataset.idx.test_labels.empty())
                throw ConfigError("dataset: idx datasets need all four file paths");
        } else {
            throw ConfigError("dataset.type: must be 'synthetic' or 'idx'");
        }
    }
    detail::read_field(doc, "clients", c.clients);
    detail::read_field(doc, "participation", c.participation);
    detail::read_field(doc, "rounds", c.rounds);
    detail::read_field(doc, "local_epochs", c.local_epochs);
    detail::read_field(doc, "batch_size", c.batch_size);
    detail::read_field(doc, "local_lr", c.local_lr);
    detail::read_field(doc, "distill_lr", c.distill_lr);
    detail::read_field(doc, "distill_epochs", c.distill_epochs);
    detail::read_field(doc, "weight_decay", c.weight_decay);
    detail::read_field(doc, "alpha", c.alpha);
    detail::read_field(doc, "levels", c.levels);
    detail::read_field(doc, "level_decay", c.level_decay);
    if (doc.contains("method")) c.method = method_from_string(doc.at("method").get<std::string>());
    detail::read_field(doc, "tau", c.tau);
    if (doc.contains("kl_direction")) {
        const std::string s = doc.at("kl_direction").get<std::string>();
        if (s == "student_first")
            c.kl_direction = KlDirection::StudentFirst;
        else if (s == "teacher_first")
            c.kl_direction = KlDirection::TeacherFirst;
        else
            throw ConfigError("kl_direction: must be 'student_first' or 'teacher_first'");
    }
    if (doc.contains("weighting")) {
        const std::string s = doc.at("weighting").get<std::string>();
        if (s == "uniform")
            c.weighting = Weighting::Uniform;
        else if (s == "sample")
            c.weighting = Weighting::Sample;
        else
            throw ConfigError("weighting: must be 'uniform' or 'sample'");
    }
    detail::read_field(doc, "taylor_order", c.taylor_order);
    detail::read_field(doc, "seeds", c.seeds);
    detail::read_field(doc, "distill_fraction", c.distill_fraction);
    detail::read_field(doc, "hidden_widths", c.hidden_widths);
    detail::read_field(doc, "target_accuracies", c.target_accuracies);
    detail::read_field(doc, "checkpoint_every", c.checkpoint_every);
    detail::read_field(doc, "out_dir", c.out_dir);
    detail::read_field(doc, "csv_wall_clock", c.csv_wall_clock);
    return c;
}

inline void validate(const ExperimentConfig& c) {
    const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (c.clients == 0) fail("clients: must be positive");
    if (!(c.participation > 0.0) || c.participation > 1.0)
        fail("participation: must lie in (0,1]");
    if (c.batch_size == 0) fail("batch_size: must be positive");
    if (!(c.local_lr >= 0.0)) fail("local_lr: must be nonnegative");
    if (!(c.distill_lr >= 0.0)) fail("distill_lr: must be nonnegative");
    if (!(c.weight_decay >= 0.0)) fail("weight_decay: must be nonnegative");
    if (!(c.alpha > 0.0)) fail("alpha: must be positive");
    if (!(c.tau > 0.0)) fail("tau: must be positive");
    if (c.taylor_order < 1) fail("taylor_order: must be >= 1");
    if (c.seeds.empty()) fail("seeds: need at least one");
    if (!(c.distill_fraction >= 0.0) || c.distill_fraction >= 1.0)
        fail("distill_fraction: must lie in [0,1)");
    if (c.hidden_widths.empty()) fail("hidden_widths: must be nonempty");
    for (std::size_t w : c.hidden_widths)
        if (w == 0) fail("hidden_widths: zero width");
    try {
        const LevelSchedule schedule(c.level_decay);
        for (char label : LevelSchedule::parse_labels(c.levels)) schedule.fraction(label);
    } catch (const std::invalid_argument& e) {
        fail(std::string("levels: ") + e.what());
    }
    for (double t : c.target_accuracies)
        if (!(t > 0.0) || t > 1.0) fail("target_accuracies: must lie in (0,1]");
    if (c.dataset.type == DatasetSpec::Type::Synthetic) {
        if (c.dataset.synthetic.classes < 2) fail("dataset.classes: need at least 2");
        if (c.dataset.synthetic.train_per_class == 0) fail("dataset.train_per_class: positive");
        if (c.dataset.synthetic.test_per_class == 0) fail("dataset.test_per_class: positive");
        if (c.dataset.synthetic.input_dim < 2) fail("dataset.input_dim: need at least 2");
        if (c.dataset.synthetic.spread < 0.0) fail("dataset.spread: nonnegative");
    }
}

}  // namespace fedfd

#endif  // FEDFD_CONFIG_HPP
