#ifndef FEDFD_AGGREGATION_HPP
#define FEDFD_AGGREGATION_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfd/matrix.hpp"
#include "fedfd/models.hpp"
#include "fedfd/params.hpp"

namespace fedfd {

enum class Weighting { Uniform, Sample };

struct ClientUpdate {
    std::size_t client_id = 0;
    ArchitectureLevel level;
    ParameterSet params;  // shapes are exactly the level's slice of the global
    std::size_t sample_count = 0;
};

// Sample-weighted coordinate mean over same-level updates.
inline ParameterSet fedavg(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
    std::size_t total = 0;
    for (const ClientUpdate& u : updates) {
        if (u.level.label != updates.front().level.label ||
            u.level.width_fraction != updates.front().level.width_fraction)
            throw std::invalid_argument("fedavg: mixed levels");
        total += u.sample_count;
    }
    if (total == 0) throw std::invalid_argument("fedavg: total sample count is zero");

    ParameterSet out;
    for (const auto& [name, first] : updates.front().params) {
        Matrix acc(first.rows(), first.cols());
        for (const ClientUpdate& u : updates) {
            const Matrix& m = u.params.at(name);
            require_same_shape(m, acc, "fedavg");
            const double w = static_cast<double>(u.sample_count) / static_cast<double>(total);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * m[k];
        }
        out.add(name, std::move(acc));
    }
    return out;
}

// Nested aggregation: every global coordinate becomes the (uniform or
// sample-weighted) mean over exactly the clients whose slice contains it;
// coordinates covered by no client keep their previous value.
inline ParameterSet hetero_aggregate(const ParameterSet& global,
                                     const std::vector<ClientUpdate>& updates,
                                     const ModelTopology& topo,
                                     Weighting weighting = Weighting::Uniform) {
    for (const ClientUpdate& u : updates) {
        const ShapeMap expect = slice_shapes(topo, u.level);
        if (u.params.size() != expect.size())
            throw std::invalid_argument("hetero_aggregate: client " +
                                        std::to_string(u.client_id) + " array count mismatch");
        for (const auto& [name, shape] : expect) {
            const Matrix& m = u.params.at(name);
            if (m.rows() != shape.rows || m.cols() != shape.cols)
                throw std::invalid_argument("hetero_aggregate: client " +
                                            std::to_string(u.client_id) + " shape mismatch on " +
                                            name);
        }
        if (weighting == Weighting::Sample && u.sample_count == 0)
            throw std::invalid_argument("hetero_aggregate: zero sample count under sample weighting");
    }

    ParameterSet out;
    for (const auto& [name, g] : global) {
        Matrix sum(g.rows(), g.cols());
        Matrix weight(g.rows(), g.cols());
        for (const ClientUpdate& u : updates) {
            const Matrix& m = u.params.at(name);
            const double w = weighting == Weighting::Uniform
                                 ? 1.0
                                 : static_cast<double>(u.sample_count);
            for (std::size_t i = 0; i < m.rows(); ++i)
                for (std::size_t j = 0; j < m.cols(); ++j) {
                    sum(i, j) += w * m(i, j);
                    weight(i, j) += w;
                }
        }
        Matrix merged = g;
        for (std::size_t k = 0; k < merged.size(); ++k)
            if (weight[k] > 0.0) merged[k] = sum[k] / weight[k];
        out.add(name, std::move(merged));
    }
    return out;
}

// The nested sub-model the client will train.
inline ScalableModel broadcast(const ScalableModel& global, const ArchitectureLevel& level) {
    return slice(global, level);
}

}  // namespace fedfd

#endif  // FEDFD_AGGREGATION_HPP
