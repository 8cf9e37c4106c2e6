#ifndef FEDFD_MODELS_HPP
#define FEDFD_MODELS_HPP

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfd/autodiff.hpp"
#include "fedfd/data.hpp"
#include "fedfd/matrix.hpp"
#include "fedfd/params.hpp"
#include "fedfd/rng.hpp"

namespace fedfd {

// One of the width-nested complexity levels 'a'..'j'. Level 'a' keeps every
// hidden unit; each following label drops `decay` of the full width.
struct ArchitectureLevel {
    char label = 'a';
    double width_fraction = 1.0;
    std::size_t feature_dim = 0;
};

inline std::size_t scaled_width(double fraction, std::size_t full) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(full)));
}

class LevelSchedule {
public:
    explicit LevelSchedule(double decay = 0.10) : decay_(decay) {
        if (!(decay > 0.0) || decay >= 1.0)
            throw std::invalid_argument("LevelSchedule: decay must lie in (0,1)");
    }

    double decay() const { return decay_; }

    double fraction(char label) const {
        if (label < 'a' || label > 'j')
            throw std::invalid_argument(std::string("LevelSchedule: unknown level '") + label +
                                        "'");
        const double f = 1.0 - decay_ * (label - 'a');
        if (!(f > 0.0))
            throw std::invalid_argument(std::string("LevelSchedule: level '") + label +
                                        "' has non-positive width fraction");
        return f;
    }

    ArchitectureLevel level(char label, std::size_t full_feature_width) const {
        const double f = fraction(label);
        return ArchitectureLevel{label, f, scaled_width(f, full_feature_width)};
    }

    // "a-d-g" -> {a, d, g}
    static std::vector<char> parse_labels(const std::string& list) {
        std::vector<char> out;
        for (char c : list) {
            if (c == '-' || c == ' ' || c == ',') continue;
            if (c < 'a' || c > 'j')
                throw std::invalid_argument(std::string("level list: unknown label '") + c + "'");
            out.push_back(c);
        }
        if (out.empty()) throw std::invalid_argument("level list: empty");
        return out;
    }

private:
    double decay_;
};

struct ModelTopology {
    std::size_t input_dim = 0;
    std::vector<std::size_t> widths;  // hidden widths; last one is the feature width
    std::size_t classes = 0;
};

inline std::string layer_weight_name(std::size_t i) { return "layer" + std::to_string(i) + ".weight"; }
inline std::string layer_bias_name(std::size_t i) { return "layer" + std::to_string(i) + ".bias"; }

// Feedforward classifier whose extractor widths nest across levels: the
// level-q arrays are the leading sub-blocks of the level-a arrays.
// Arrays: layer{i}.weight (in x out), layer{i}.bias (1 x out),
//         head.weight (feature_dim x classes), head.bias (1 x classes).
struct ScalableModel {
    ParameterSet params;
    ModelTopology topo;
    ArchitectureLevel level;

    std::size_t feature_dim() const { return topo.widths.back(); }

    Matrix forward_features(const Matrix& x) const {
        if (x.cols() != topo.input_dim)
            throw std::invalid_argument("forward_features: input width " +
                                        std::to_string(x.cols()) + " != " +
                                        std::to_string(topo.input_dim));
        Matrix h = x;
        for (std::size_t i = 0; i < topo.widths.size(); ++i) {
            Matrix z = matmul(h, params.at(layer_weight_name(i)));
            const Matrix& b = params.at(layer_bias_name(i));
            for (std::size_t r = 0; r < z.rows(); ++r)
                for (std::size_t c = 0; c < z.cols(); ++c) {
                    z(r, c) += b(0, c);
                    if (z(r, c) < 0.0) z(r, c) = 0.0;
                }
            h = std::move(z);
        }
        return h;
    }

    Matrix forward_logits(const Matrix& x) const {
        Matrix f = forward_features(x);
        Matrix z = matmul(f, params.at("head.weight"));
        const Matrix& b = params.at("head.bias");
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += b(0, c);
        return z;
    }
};

// Uniform(-L, L) with L = sqrt(6 / (fan_in + fan_out)); biases zero.
inline ScalableModel build_global(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                  std::size_t classes, std::uint64_t seed,
                                  const LevelSchedule& schedule = LevelSchedule()) {
    if (widths.empty()) throw std::invalid_argument("build_global: widths must be nonempty");
    for (std::size_t w : widths)
        if (w == 0) throw std::invalid_argument("build_global: zero layer width");
    if (input_dim == 0) throw std::invalid_argument("build_global: zero input dimension");
    if (classes < 2) throw std::invalid_argument("build_global: need at least 2 classes");

    ScalableModel m;
    m.topo = ModelTopology{input_dim, widths, classes};
    m.level = schedule.level('a', widths.back());

    Rng rng(derive_seed(seed, {0x1417u}));
    const auto init = [&rng](std::size_t fan_in, std::size_t fan_out, Matrix& w) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& x : w.data()) x = rng.uniform(-limit, limit);
    };

    std::size_t in = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        Matrix w(in, widths[i]);
        init(in, widths[i], w);
        m.params.add(layer_weight_name(i), std::move(w));
        m.params.add(layer_bias_name(i), Matrix(1, widths[i]));
        in = widths[i];
    }
    Matrix hw(widths.back(), classes);
    init(widths.back(), classes, hw);
    m.params.add("head.weight", std::move(hw));
    m.params.add("head.bias", Matrix(1, classes));
    return m;
}

// Shapes of the level slice of a model with the given topology: each hidden
// layer keeps its first ceil(r * n) output units and the matching inputs of
// the next layer; the head keeps the surviving feature rows.
inline ShapeMap slice_shapes(const ModelTopology& topo, const ArchitectureLevel& level) {
    ShapeMap shapes;
    std::size_t in = topo.input_dim;
    for (std::size_t i = 0; i < topo.widths.size(); ++i) {
        const std::size_t out = scaled_width(level.width_fraction, topo.widths[i]);
        shapes[layer_weight_name(i)] = Shape{in, out};
        shapes[layer_bias_name(i)] = Shape{1, out};
        in = out;
    }
    shapes["head.weight"] = Shape{in, topo.classes};
    shapes["head.bias"] = Shape{1, topo.classes};
    return shapes;
}

// Nested sub-model at `level`; values copied, never aliased.
inline ScalableModel slice(const ScalableModel& model, const ArchitectureLevel& level) {
    if (!(level.width_fraction > 0.0) || level.width_fraction > 1.0)
        throw std::invalid_argument("slice: width fraction must lie in (0,1]");
    ScalableModel out;
    out.level = level;
    out.topo.input_dim = model.topo.input_dim;
    out.topo.classes = model.topo.classes;
    for (std::size_t w : model.topo.widths)
        out.topo.widths.push_back(scaled_width(level.width_fraction, w));
    out.params = take_leading(model.params, slice_shapes(model.topo, level));
    return out;
}

// Parameters staged on a tape for training; map order mirrors ParameterSet.
struct TapeModel {
    std::vector<Value> layer_w;
    std::vector<Value> layer_b;
    Value head_w;
    Value head_b;

    std::vector<Value> extractor_values() const {
        std::vector<Value> all = layer_w;
        all.insert(all.end(), layer_b.begin(), layer_b.end());
        return all;
    }
    std::vector<Value> all_values() const {
        std::vector<Value> all = extractor_values();
        all.push_back(head_w);
        all.push_back(head_b);
        return all;
    }
};

// `trainable_head` / `trainable_extractor` control which blocks become tape
// parameters; the rest are staged as constants and receive no gradient.
inline TapeModel stage_on_tape(GradTape& tape, const ScalableModel& m, bool trainable_extractor,
                               bool trainable_head) {
    TapeModel tm;
    const auto stage = [&tape](const Matrix& v, bool trainable) {
        return trainable ? tape.param(v) : tape.constant(v);
    };
    for (std::size_t i = 0; i < m.topo.widths.size(); ++i) {
        tm.layer_w.push_back(stage(m.params.at(layer_weight_name(i)), trainable_extractor));
        tm.layer_b.push_back(stage(m.params.at(layer_bias_name(i)), trainable_extractor));
    }
    tm.head_w = stage(m.params.at("head.weight"), trainable_head);
    tm.head_b = stage(m.params.at("head.bias"), trainable_head);
    return tm;
}

inline Value features_on_tape(GradTape& tape, const TapeModel& tm, Value x) {
    Value h = x;
    for (std::size_t i = 0; i < tm.layer_w.size(); ++i)
        h = tape.relu(tape.add_rowvec(tape.matmul(h, tm.layer_w[i]), tm.layer_b[i]));
    return h;
}

inline Value logits_on_tape(GradTape& tape, const TapeModel& tm, Value x) {
    return tape.add_rowvec(tape.matmul(features_on_tape(tape, tm, x), tm.head_w), tm.head_b);
}

// Writes updated tape values back after an SGD step.
inline void apply_sgd_step(ScalableModel& m, GradTape& tape, const TapeModel& tm, double lr,
                           double weight_decay, bool include_head) {
    const auto update = [&](const std::string& name, Value v) {
        Matrix& w = m.params.at(name);
        const Matrix g = tape.grad(v);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * (g[k] + weight_decay * w[k]);
    };
    for (std::size_t i = 0; i < tm.layer_w.size(); ++i) {
        update(layer_weight_name(i), tm.layer_w[i]);
        update(layer_bias_name(i), tm.layer_b[i]);
    }
    if (include_head) {
        update("head.weight", tm.head_w);
        update("head.bias", tm.head_b);
    }
}

struct TrainOptions {
    std::size_t epochs = 10;
    double lr = 0.001;
    double weight_decay = 1e-4;
    std::size_t batch_size = 64;
};

// Seeded mini-batch SGD on cross-entropy with L2 weight decay folded into the
// update (w -= lr * (g + wd * w)). Returns the per-epoch mean batch loss.
inline std::vector<double> local_train(ScalableModel& m, const LabeledDataset& data,
                                       const Shard& shard, const TrainOptions& opt,
                                       std::uint64_t seed) {
    if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
    if (opt.batch_size == 0) throw std::invalid_argument("local_train: zero batch size");

    std::vector<double> epoch_losses;
    Shard order = shard;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng rng(derive_seed(seed, {0x7EA1u, epoch}));
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t stop = std::min(order.size(), start + opt.batch_size);
            const Shard batch_idx(order.begin() + start, order.begin() + stop);
            const Matrix x = gather_rows(data.inputs, batch_idx);
            const std::vector<int> y = gather_labels(data.labels, batch_idx);

            GradTape tape;
            TapeModel tm = stage_on_tape(tape, m, true, true);
            Value loss = tape.cross_entropy_mean(logits_on_tape(tape, tm, tape.constant(x)), y);
            tape.backward(loss);
            apply_sgd_step(m, tape, tm, opt.lr, opt.weight_decay, true);
            loss_sum += tape.value(loss)(0, 0);
            ++batches;
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
    return epoch_losses;
}

}  // namespace fedfd

#endif  // FEDFD_MODELS_HPP
