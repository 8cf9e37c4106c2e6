#ifndef FEDFD_PARAMS_HPP
#define FEDFD_PARAMS_HPP

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "fedfd/matrix.hpp"

namespace fedfd {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool operator==(const Shape&) const = default;
};

using ShapeMap = std::map<std::string, Shape>;

// Named dense arrays of one model. Iteration order is the (deterministic)
// lexicographic name order.
class ParameterSet {
public:
    void add(const std::string& name, Matrix m) {
        if (arrays_.count(name)) throw std::invalid_argument("ParameterSet: duplicate " + name);
        arrays_.emplace(name, std::move(m));
    }

    Matrix& at(const std::string& name) {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw std::invalid_argument("ParameterSet: missing " + name);
        return it->second;
    }
    const Matrix& at(const std::string& name) const {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw std::invalid_argument("ParameterSet: missing " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return arrays_.count(name) > 0; }
    std::size_t size() const { return arrays_.size(); }

    auto begin() { return arrays_.begin(); }
    auto end() { return arrays_.end(); }
    auto begin() const { return arrays_.begin(); }
    auto end() const { return arrays_.end(); }

    ShapeMap shapes() const {
        ShapeMap s;
        for (const auto& [name, m] : arrays_) s[name] = Shape{m.rows(), m.cols()};
        return s;
    }

    std::size_t coordinate_count() const {
        std::size_t n = 0;
        for (const auto& [name, m] : arrays_) n += m.size();
        return n;
    }

private:
    std::map<std::string, Matrix> arrays_;
};

// Leading sub-blocks per the shape map; values copied. Every requested shape
// must name an existing array and fit inside it.
inline ParameterSet take_leading(const ParameterSet& full, const ShapeMap& shapes) {
    ParameterSet out;
    for (const auto& [name, shape] : shapes) {
        const Matrix& src = full.at(name);
        if (shape.rows > src.rows() || shape.cols > src.cols())
            throw std::invalid_argument("take_leading: " + name + " block exceeds source");
        out.add(name, take_block(src, shape.rows, shape.cols));
    }
    return out;
}

}  // namespace fedfd

#endif  // FEDFD_PARAMS_HPP
