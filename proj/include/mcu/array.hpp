#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcu {

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

/// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value (even kernel, nonpositive rho, bad file, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure (singular system, NaN loss/gradient).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// API contract violation (non-scalar backward seed, repeated backward, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Array: dense row-major nd container of doubles
// ---------------------------------------------------------------------------

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

/// Dense multi-dimensional real array, row-major logical order.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {
        for (std::size_t d : shape)
            if (d == 0) throw ShapeError("Array: zero dimension in " + shape_str(shape));
    }
    Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("Array: data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2D/3D/4D accessors for the shapes the library actually uses.
    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::abs(v));
        return m;
    }

    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }

    double frob_norm() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return std::sqrt(s);
    }

    static Array zeros(Shape s) { return Array(std::move(s)); }
    static Array full(Shape s, double v) {
        Array a(std::move(s));
        a.fill(v);
        return a;
    }
};

inline void check_same_shape(const Array& a, const Array& b, const char* who) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

// ---------------------------------------------------------------------------
// Seeded RNG with named substreams
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Deterministic RNG. All randomness in the project flows from one master
/// seed through named substreams ("data", "init", "noise", ...) so components
/// can be varied independently without disturbing each other.
class Rng {
public:
    Rng(std::uint64_t seed, const std::string& substream) {
        std::uint64_t tag = fnv1a64(substream);
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
        engine_.seed(seq);
    }

    /// Uniform in [0,1). Bit-reproducible: fixed 53-bit mapping, no
    /// implementation-defined distribution involved.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (deterministic, cached spare).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Integer in [0, n).
    std::size_t index(std::size_t n) {
        // Rejection-free modulo bias is irrelevant at our n; keep it simple
        // but deterministic.
        return static_cast<std::size_t>(engine_() % n);
    }

    Array uniform_array(Shape s, double lo, double hi) {
        Array a(std::move(s));
        for (double& v : a.data) v = uniform(lo, hi);
        return a;
    }

    Array normal_array(Shape s, double mean, double stddev) {
        Array a(std::move(s));
        for (double& v : a.data) v = normal(mean, stddev);
        return a;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace mcu
