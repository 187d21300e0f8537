#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace umurl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        n *= d;
    }
    return n;
}

// Dense row-major array. float carries training state, double is used by
// the gradient-check path; the tape and all model code are generic over
// the scalar type.
template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> data;

    TensorData() = default;
    explicit TensorData(Shape s) : shape(std::move(s)), data(shape_numel(shape), T{0}) {}
    TensorData(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        require(data.size() == shape_numel(shape), "TensorData: shape/data length mismatch");
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(std::size_t i, std::size_t j) {
        assert(shape.size() == 2);
        return data[i * shape[1] + j];
    }
    T at(std::size_t i, std::size_t j) const {
        assert(shape.size() == 2);
        return data[i * shape[1] + j];
    }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    template <typename U>
    TensorData<U> cast() const {
        TensorData<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (T v : data) {
            out.data.push_back(static_cast<U>(v));
        }
        return out;
    }

    static TensorData scalar(T v) { return TensorData({1}, {v}); }

    static TensorData zeros(Shape s) { return TensorData(std::move(s)); }

    static TensorData full(Shape s, T v) {
        TensorData t(std::move(s));
        for (T& x : t.data) {
            x = v;
        }
        return t;
    }

    static TensorData gaussian(Shape s, RngStream& rng, double sigma) {
        TensorData t(std::move(s));
        for (T& x : t.data) {
            x = static_cast<T>(rng.normal(0.0, sigma));
        }
        return t;
    }

    static TensorData uniform(Shape s, RngStream& rng, double lo, double hi) {
        TensorData t(std::move(s));
        for (T& x : t.data) {
            x = static_cast<T>(rng.uniform(lo, hi));
        }
        return t;
    }
};

// C (M x N) = op(A) * op(B) + (accumulate ? C : 0), row-major.
// Backed by OpenBLAS when built with UMURL_USE_BLAS, by portable loops
// otherwise; both are single-threaded and run-to-run deterministic.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float* c, bool accumulate);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

}  // namespace umurl
