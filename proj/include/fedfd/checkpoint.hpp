#ifndef FEDFD_CHECKPOINT_HPP
#define FEDFD_CHECKPOINT_HPP

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfd/distillation.hpp"
#include "fedfd/models.hpp"
#include "fedfd/params.hpp"

namespace fedfd {

// Checkpoint document:
//   {"schema": 1,
//    "levels": [{"label": "a", "width_fraction": 1.0, "feature_dim": 16}, ...],
//    "arrays": {name: {"shape": [rows, cols], "data": [row-major float64]}},
//    "projections": {dim: {"free_params": [...], "kind": ..., "target_dim": ...}}}
// nlohmann serialization round-trips float64 exactly.

inline nlohmann::json checkpoint_to_json(const ScalableModel& model,
                                         const std::vector<ArchitectureLevel>& levels,
                                         const std::map<std::size_t, ProjectionLayer>& projections) {
    nlohmann::json doc;
    doc["schema"] = 1;
    doc["levels"] = nlohmann::json::array();
    for (const ArchitectureLevel& lv : levels)
        doc["levels"].push_back({{"label", std::string(1, lv.label)},
                                 {"width_fraction", lv.width_fraction},
                                 {"feature_dim", lv.feature_dim}});
    doc["arrays"] = nlohmann::json::object();
    for (const auto& [name, m] : model.params)
        doc["arrays"][name] = {{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
    doc["projections"] = nlohmann::json::object();
    for (const auto& [dim, layer] : projections)
        doc["projections"][std::to_string(dim)] = {
            {"free_params", layer.free_params()},
            {"kind", layer.kind() == ProjectionLayer::Kind::Orthogonal ? "orthogonal" : "dense"},
            {"target_dim", layer.target_dim()}};
    return doc;
}

struct Checkpoint {
    ScalableModel model;
    std::vector<ArchitectureLevel> levels;
    std::map<std::size_t, ProjectionLayer> projections;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
    if (!doc.contains("schema") || doc.at("schema").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported schema");
    Checkpoint out;
    for (const auto& lv : doc.at("levels")) {
        ArchitectureLevel level;
        level.label = lv.at("label").get<std::string>().at(0);
        level.width_fraction = lv.at("width_fraction").get<double>();
        level.feature_dim = lv.at("feature_dim").get<std::size_t>();
        out.levels.push_back(level);
    }
    for (const auto& [name, entry] : doc.at("arrays").items()) {
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw std::runtime_error("checkpoint: bad shape for " + name);
        auto data = entry.at("data").get<std::vector<double>>();
        out.model.params.add(name, Matrix(shape[0], shape[1], std::move(data)));
    }

    // topology from array shapes: layer{i}.weight chains input_dim -> widths
    out.model.topo.input_dim = out.model.params.at(layer_weight_name(0)).rows();
    for (std::size_t i = 0; out.model.params.has(layer_weight_name(i)); ++i)
        out.model.topo.widths.push_back(out.model.params.at(layer_weight_name(i)).cols());
    out.model.topo.classes = out.model.params.at("head.weight").cols();
    out.model.level = ArchitectureLevel{'a', 1.0, out.model.topo.widths.back()};
    for (const ArchitectureLevel& lv : out.levels)
        if (lv.width_fraction > out.model.level.width_fraction ||
            (lv.width_fraction == 1.0 && lv.label == 'a'))
            out.model.level = lv;

    if (doc.contains("projections")) {
        for (const auto& [key, entry] : doc.at("projections").items()) {
            const auto dim = static_cast<std::size_t>(std::stoul(key));
            const auto kind = entry.value("kind", std::string("orthogonal")) == "dense"
                                  ? ProjectionLayer::Kind::Dense
                                  : ProjectionLayer::Kind::Orthogonal;
            const std::size_t target = entry.value("target_dim", dim);
            ProjectionLayer layer(target, out.model.feature_dim(), kind);
            layer.set_free_params(entry.at("free_params").get<std::vector<double>>());
            out.projections.emplace(dim, std::move(layer));
        }
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const ScalableModel& model,
                            const std::vector<ArchitectureLevel>& levels,
                            const std::map<std::size_t, ProjectionLayer>& projections) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << checkpoint_to_json(model, levels, projections).dump();
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json doc;
    in >> doc;
    return checkpoint_from_json(doc);
}

}  // namespace fedfd

#endif  // FEDFD_CHECKPOINT_HPP
