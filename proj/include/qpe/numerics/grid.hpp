#pragma once
#include <cstddef>
#include <string>
#include <vector>

#include "qpe/errors.hpp"

namespace qpe::numerics {

// One-dimensional grid with strictly increasing nodes. Uniform factory is the
// common case; non-uniform construction is validated.
class Grid1D {
public:
    Grid1D() = default;

    explicit Grid1D(std::vector<double> nodes) : nodes_(std::move(nodes)) {
        if (nodes_.size() < 16)
            throw ShapeError("Grid1D needs at least 16 nodes, got " +
                             std::to_string(nodes_.size()));
        for (std::size_t i = 1; i < nodes_.size(); ++i)
            if (!(nodes_[i] > nodes_[i - 1]))
                throw ShapeError("Grid1D nodes not strictly increasing at index " +
                                 std::to_string(i));
    }

    static Grid1D uniform(double a, double b, std::size_t n_nodes) {
        if (n_nodes < 16) throw ShapeError("Grid1D::uniform needs >= 16 nodes");
        if (!(b > a)) throw ShapeError("Grid1D::uniform needs b > a");
        std::vector<double> v(n_nodes);
        const double h = (b - a) / double(n_nodes - 1);
        for (std::size_t i = 0; i < n_nodes; ++i) v[i] = a + h * double(i);
        v.back() = b;
        return Grid1D(std::move(v), true);
    }

    std::size_t size() const { return nodes_.size(); }
    double operator[](std::size_t i) const { return nodes_[i]; }
    double front() const { return nodes_.front(); }
    double back() const { return nodes_.back(); }
    double spacing() const { return nodes_[1] - nodes_[0]; }
    const std::vector<double>& nodes() const { return nodes_; }

    // trapezoid quadrature of sampled values
    double integrate(const std::vector<double>& f) const {
        if (f.size() != nodes_.size())
            throw ShapeError("integrate: sample size mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < nodes_.size(); ++i)
            s += 0.5 * (f[i] + f[i + 1]) * (nodes_[i + 1] - nodes_[i]);
        return s;
    }

private:
    Grid1D(std::vector<double> nodes, bool) : nodes_(std::move(nodes)) {}
    std::vector<double> nodes_;
};

} // namespace qpe::numerics
