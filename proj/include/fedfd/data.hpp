#ifndef FEDFD_DATA_HPP
#define FEDFD_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfd/matrix.hpp"
#include "fedfd/rng.hpp"

namespace fedfd {

struct LabeledDataset {
    Matrix inputs;            // N x input_dim
    std::vector<int> labels;  // length N, values < classes
    int classes = 0;

    std::size_t size() const { return labels.size(); }

    void validate() const {
        if (labels.empty() || inputs.rows() != labels.size())
            throw std::invalid_argument("LabeledDataset: inputs/labels size mismatch or empty");
        for (int y : labels)
            if (y < 0 || y >= classes)
                throw std::invalid_argument("LabeledDataset: label out of range");
    }
};

using Shard = std::vector<std::size_t>;

// Rows of `data.inputs` selected by index.
inline Matrix gather_rows(const Matrix& m, const Shard& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(idx[i], j);
    return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& labels, const Shard& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

// Seeded Gaussian blobs. Class centers sit on scaled coordinate axes when they
// fit inside the input dimension, otherwise on a circle in the first two
// coordinates; isotropic noise `spread` around each center.
inline LabeledDataset gen_synthetic(int classes, std::size_t per_class, std::size_t input_dim,
                                    double spread, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("gen_synthetic: need at least 2 classes");
    if (per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be >= 1");
    if (input_dim < 2) throw std::invalid_argument("gen_synthetic: input_dim must be >= 2");
    if (spread < 0.0) throw std::invalid_argument("gen_synthetic: spread must be nonnegative");

    constexpr double kCenterScale = 2.0;
    std::vector<std::vector<double>> centers(classes, std::vector<double>(input_dim, 0.0));
    for (int c = 0; c < classes; ++c) {
        if (static_cast<std::size_t>(classes) <= input_dim) {
            centers[c][c] = kCenterScale;
        } else {
            const double angle = 2.0 * 3.14159265358979323846 * c / classes;
            centers[c][0] = kCenterScale * std::cos(angle);
            centers[c][1] = kCenterScale * std::sin(angle);
        }
    }

    const std::size_t n = static_cast<std::size_t>(classes) * per_class;
    LabeledDataset ds;
    ds.inputs = Matrix(n, input_dim);
    ds.labels.resize(n);
    ds.classes = classes;
    Rng rng(derive_seed(seed, {0x5D47Au}));
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            ds.labels[row] = c;
            for (std::size_t j = 0; j < input_dim; ++j)
                ds.inputs(row, j) = centers[c][j] + spread * rng.gaussian();
        }
    }
    // deterministic shuffle so class blocks do not line up with batch order
    Shard perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, {0x5D47Bu}));
    shuffle_rng.shuffle(perm);
    LabeledDataset shuffled;
    shuffled.inputs = gather_rows(ds.inputs, perm);
    shuffled.labels = gather_labels(ds.labels, perm);
    shuffled.classes = classes;
    return shuffled;
}

// Class-wise Dirichlet split: for each class, proportions over the K clients
// are drawn from Dir(alpha) and that class's indices are cut by cumulative
// rounding. Shards are disjoint and exhaustive; empty shards are repaired by
// moving one sample from the largest shard.
inline std::vector<Shard> dirichlet_partition(const LabeledDataset& data, std::size_t clients,
                                              double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
    if (clients < 1) throw std::invalid_argument("dirichlet_partition: need at least one client");
    if (clients > data.size())
        throw std::invalid_argument("dirichlet_partition: more clients than samples");

    std::vector<Shard> shards(clients);
    Rng rng(derive_seed(seed, {0xD1A1u}));
    for (int c = 0; c < data.classes; ++c) {
        Shard class_idx;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == c) class_idx.push_back(i);
        if (class_idx.empty()) continue;

        std::vector<double> p(clients);
        double total = 0.0;
        for (double& x : p) {
            x = rng.gamma(alpha);
            total += x;
        }
        for (double& x : p) x /= total;

        const std::size_t n = class_idx.size();
        double cum = 0.0;
        std::size_t prev = 0;
        for (std::size_t k = 0; k < clients; ++k) {
            cum += p[k];
            std::size_t bound = (k + 1 == clients)
                                    ? n
                                    : static_cast<std::size_t>(std::llround(cum * n));
            bound = std::min(bound, n);
            bound = std::max(bound, prev);
            for (std::size_t i = prev; i < bound; ++i) shards[k].push_back(class_idx[i]);
            prev = bound;
        }
    }

    // repair empty shards so every client stays trainable
    for (std::size_t k = 0; k < clients; ++k) {
        if (!shards[k].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t j = 1; j < clients; ++j)
            if (shards[j].size() > shards[donor].size()) donor = j;
        if (shards[donor].size() <= 1)
            throw std::invalid_argument("dirichlet_partition: cannot repair empty shard");
        shards[k].push_back(shards[donor].back());
        shards[donor].pop_back();
    }
    return shards;
}

namespace detail {

inline std::uint32_t read_u32_be(std::ifstream& in, const std::string& file, const char* field) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("load_idx: " + file + ": truncated " + field);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

inline void write_u32_be(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Big-endian IDX pair: images magic 0x00000803 (count, rows, cols, u8 pixels),
// labels magic 0x00000801 (count, u8 labels). Pixels land in [0,1] float64.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("load_idx: cannot open images file " + images_path);
    const std::uint32_t img_magic = detail::read_u32_be(img, images_path, "magic");
    if (img_magic != 0x00000803u)
        throw std::runtime_error("load_idx: " + images_path + ": bad images magic " +
                                 std::to_string(img_magic));
    const std::uint32_t count = detail::read_u32_be(img, images_path, "count");
    const std::uint32_t rows = detail::read_u32_be(img, images_path, "rows");
    const std::uint32_t cols = detail::read_u32_be(img, images_path, "cols");

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("load_idx: cannot open labels file " + labels_path);
    const std::uint32_t lab_magic = detail::read_u32_be(lab, labels_path, "magic");
    if (lab_magic != 0x00000801u)
        throw std::runtime_error("load_idx: " + labels_path + ": bad labels magic " +
                                 std::to_string(lab_magic));
    const std::uint32_t lab_count = detail::read_u32_be(lab, labels_path, "count");
    if (lab_count != count)
        throw std::runtime_error("load_idx: count mismatch: " + std::to_string(count) +
                                 " images vs " + std::to_string(lab_count) + " labels");
    if (count == 0) throw std::runtime_error("load_idx: empty dataset");

    const std::size_t dim = std::size_t{rows} * cols;
    LabeledDataset ds;
    ds.inputs = Matrix(count, dim);
    ds.labels.resize(count);

    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!img) throw std::runtime_error("load_idx: " + images_path + ": truncated pixels");
        for (std::size_t j = 0; j < dim; ++j) ds.inputs(i, j) = buf[j] / 255.0;
    }
    std::vector<unsigned char> lbuf(count);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(count));
    if (!lab) throw std::runtime_error("load_idx: " + labels_path + ": truncated labels");
    int max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        ds.labels[i] = lbuf[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    return ds;
}

// Inverse of load_idx for fixtures; inputs must be in [0,1] and are quantized
// to u8. Image geometry is written as (dim x 1).
inline void save_idx(const LabeledDataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("save_idx: cannot open " + images_path);
    detail::write_u32_be(img, 0x00000803u);
    detail::write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
    detail::write_u32_be(img, static_cast<std::uint32_t>(ds.inputs.cols()));
    detail::write_u32_be(img, 1u);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.inputs.cols(); ++j) {
            const double v = ds.inputs(i, j);
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("save_idx: pixel values must lie in [0,1]");
            const auto q = static_cast<unsigned char>(std::llround(v * 255.0));
            img.write(reinterpret_cast<const char*>(&q), 1);
        }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("save_idx: cannot open " + labels_path);
    detail::write_u32_be(lab, 0x00000801u);
    detail::write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) {
        const auto b = static_cast<unsigned char>(y);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

}  // namespace fedfd

#endif  // FEDFD_DATA_HPP
