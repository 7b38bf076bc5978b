#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "csense/common.hpp"

namespace csense::nn {

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};

struct NonFiniteValue : Error {
    explicit NonFiniteValue(const std::string& what) : Error("non-finite value: " + what) {}
};

// Dense row-major tensor. float for training, double for gradient checks.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape), T(0)) {}

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t e : s) n *= e;
        return n;
    }

    static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int64_t> s, T v) {
        TensorT t(std::move(s));
        for (T& x : t.data) x = v;
        return t;
    }

    static TensorT scalar(T v) {
        TensorT t({1});
        t.data[0] = v;
        return t;
    }

    static TensorT from(std::vector<int64_t> s, std::vector<T> values) {
        if (count(s) != static_cast<int64_t>(values.size()))
            throw ShapeMismatch("from(): " + shape_str(s) + " does not hold " +
                                std::to_string(values.size()) + " values");
        TensorT t;
        t.shape = std::move(s);
        t.data = std::move(values);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    T operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
    T& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& operator()(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    T operator()(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    T operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape); }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename T>
void check_finite(const TensorT<T>& t, const char* where) {
    if (!t.all_finite()) throw NonFiniteValue(std::string(where) + " produced NaN/Inf");
}

}  // namespace csense::nn
