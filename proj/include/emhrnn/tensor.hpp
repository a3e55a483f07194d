// Dense double-precision tensors (rank 0..2) and trainable parameters.
#pragma once

#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "emhrnn/rng.hpp"

namespace emhrnn {

// Shapes are at most rank 2: vectors {n} and matrices {rows, cols}.
// Scalars are length-1 vectors.
struct Shape {
    std::uint32_t rank = 1;
    std::uint32_t dim[2] = {0, 0};

    static Shape vec(std::size_t n) {
        Shape s;
        s.rank = 1;
        s.dim[0] = static_cast<std::uint32_t>(n);
        return s;
    }
    static Shape mat(std::size_t rows, std::size_t cols) {
        Shape s;
        s.rank = 2;
        s.dim[0] = static_cast<std::uint32_t>(rows);
        s.dim[1] = static_cast<std::uint32_t>(cols);
        return s;
    }
    static Shape scalar() { return vec(1); }

    std::size_t size() const {
        return rank == 1 ? dim[0] : std::size_t(dim[0]) * dim[1];
    }
    std::size_t rows() const { return dim[0]; }
    std::size_t cols() const { return rank == 2 ? dim[1] : 1; }

    bool operator==(const Shape& o) const {
        return rank == o.rank && dim[0] == o.dim[0] &&
               (rank == 1 || dim[1] == o.dim[1]);
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        if (rank == 1) return "{" + std::to_string(dim[0]) + "}";
        return "{" + std::to_string(dim[0]) + "x" + std::to_string(dim[1]) + "}";
    }
};

inline void require_shape(const Shape& got, const Shape& want, const char* where) {
    if (got != want)
        throw std::invalid_argument(std::string(where) + ": shape mismatch, got " +
                                    got.str() + ", want " + want.str());
}

// Plain value tensor, row-major.
struct Tensor {
    Shape shape = Shape::vec(0);
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}
    Tensor(Shape s, std::vector<double> data) : shape(s), v(std::move(data)) {
        if (v.size() != shape.size())
            throw std::invalid_argument("Tensor: " + std::to_string(v.size()) +
                                        " values for shape " + shape.str());
    }
    static Tensor vec(std::vector<double> data) {
        Shape s = Shape::vec(data.size());
        return Tensor(s, std::move(data));
    }

    std::size_t size() const { return v.size(); }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
    // matrix element access
    double& at(std::size_t r, std::size_t c) { return v[r * shape.cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * shape.cols() + c]; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

// A trainable tensor: value plus persistent gradient accumulator. The
// gradient is mutable so evaluation paths can take const parameters.
struct Param {
    Tensor value;
    mutable Tensor grad;

    Param() = default;
    explicit Param(Shape s) : value(s), grad(s) {}

    Shape shape() const { return value.shape; }
    std::size_t size() const { return value.size(); }
    void zero_grad() const { grad.fill(0.0); }

    // uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    void init_uniform(Rng& rng, std::size_t fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : value.v) x = rng.uniform(-bound, bound);
    }
};

}  // namespace emhrnn
