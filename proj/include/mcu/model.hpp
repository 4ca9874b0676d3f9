#pragma once

#include <string>
#include <vector>

#include "mcu/array.hpp"
#include "mcu/graph.hpp"

namespace mcu {

/// Observed reflectance cube. Stored band-major as (P × N1 × N2); the
/// flattened (P × N) view uses pixel index n = row·N2 + col.
struct HsiCube {
    std::size_t P = 0, N1 = 0, N2 = 0;
    Array data; // (P, N1, N2)

    HsiCube() = default;
    HsiCube(std::size_t P_, std::size_t N1_, std::size_t N2_)
        : P(P_), N1(N1_), N2(N2_), data({P_, N1_, N2_}) {
        if (P == 0 || N1 == 0 || N2 == 0) throw ShapeError("HsiCube: zero dimension");
    }
    HsiCube(std::size_t P_, std::size_t N1_, std::size_t N2_, Array d)
        : P(P_), N1(N1_), N2(N2_), data(std::move(d)) {
        if (data.shape != Shape{P, N1, N2})
            throw ShapeError("HsiCube: data shape " + shape_str(data.shape) +
                             " does not match (P,N1,N2)");
    }

    std::size_t pixels() const { return N1 * N2; }

    /// (P × N) matrix copy; same memory order as the cube, so this is a view
    /// reinterpretation.
    Array matrix() const { return Array({P, N1 * N2}, data.data); }

    static HsiCube from_matrix(const Array& m, std::size_t N1, std::size_t N2) {
        if (m.rank() != 2 || m.shape[1] != N1 * N2)
            throw ShapeError("HsiCube::from_matrix: shape " + shape_str(m.shape) +
                             " does not flatten from " + std::to_string(N1) + "x" +
                             std::to_string(N2));
        return HsiCube(m.shape[0], N1, N2, Array({m.shape[0], N1, N2}, m.data));
    }
};

/// E (P × R); columns are endmember spectra. ENC: entries ≥ 0.
struct EndmemberMatrix {
    Array E; // (P, R)

    EndmemberMatrix() = default;
    explicit EndmemberMatrix(Array e) : E(std::move(e)) {
        if (E.rank() != 2) throw ShapeError("EndmemberMatrix: want (P,R), got " + shape_str(E.shape));
    }
    std::size_t bands() const { return E.shape[0]; }
    std::size_t count() const { return E.shape[1]; }
};

/// A (R × N); columns are per-pixel mixing fractions. ANC: ≥ 0, ASC: columns
/// sum to 1.
struct AbundanceMatrix {
    Array A; // (R, N)
    std::size_t N1 = 0, N2 = 0; // spatial reshape (R, N1, N2); 0 if unknown

    AbundanceMatrix() = default;
    explicit AbundanceMatrix(Array a, std::size_t n1 = 0, std::size_t n2 = 0)
        : A(std::move(a)), N1(n1), N2(n2) {
        if (A.rank() != 2) throw ShapeError("AbundanceMatrix: want (R,N), got " + shape_str(A.shape));
        if (N1 * N2 != 0 && N1 * N2 != A.shape[1])
            throw ShapeError("AbundanceMatrix: N1*N2 != N");
    }
    std::size_t count() const { return A.shape[0]; }
    std::size_t pixels() const { return A.shape[1]; }

    Array spatial() const {
        if (N1 * N2 == 0) throw ShapeError("AbundanceMatrix: no spatial extent recorded");
        return Array({A.shape[0], N1, N2}, A.data);
    }
};

/// Baseline-produced (E_G, A_G) pair anchoring the guidance losses.
struct Guidance {
    EndmemberMatrix endmembers;
    AbundanceMatrix abundances;
};

/// Ŷ = E·A reshaped back to the cube layout.
inline HsiCube lmm_forward(const EndmemberMatrix& E, const AbundanceMatrix& A,
                           std::size_t N1, std::size_t N2) {
    if (E.count() != A.count())
        throw ShapeError("lmm_forward: R mismatch, E " + shape_str(E.E.shape) + " vs A " +
                         shape_str(A.A.shape));
    if (A.pixels() != N1 * N2)
        throw ShapeError("lmm_forward: N1*N2 does not match A's pixel count");
    std::size_t P = E.bands(), R = E.count(), N = A.pixels();
    // Plain loops, ascending-r accumulation: the product is bit-reproducible.
    Array Y({P, N});
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t n = 0; n < N; ++n) {
            double acc = 0.0;
            for (std::size_t r = 0; r < R; ++r) acc += E.E.at2(p, r) * A.A.at2(r, n);
            Y.at2(p, n) = acc;
        }
    return HsiCube(P, N1, N2, Array({P, N1, N2}, std::move(Y.data)));
}

inline HsiCube lmm_forward(const EndmemberMatrix& E, const AbundanceMatrix& A) {
    if (A.N1 * A.N2 == 0)
        throw ShapeError("lmm_forward: abundance matrix lacks spatial extent");
    return lmm_forward(E, A, A.N1, A.N2);
}

/// One violated constraint: which one, and by how much at worst.
struct ConstraintViolation {
    std::string constraint; // "ENC" | "ANC" | "ASC"
    double magnitude = 0.0;
};

struct ConstraintReport {
    std::vector<ConstraintViolation> violations;
    bool ok() const { return violations.empty(); }
    std::string str() const {
        if (ok()) return "ok";
        std::string s;
        for (const auto& v : violations) {
            if (!s.empty()) s += "; ";
            s += v.constraint + " violated by " + std::to_string(v.magnitude);
        }
        return s;
    }
};

/// Checks ENC on E and ANC/ASC on A against `tol`; reports every violated
/// constraint with its worst magnitude. Never throws.
inline ConstraintReport validate_constraints(const EndmemberMatrix& E, const AbundanceMatrix& A,
                                             double tol) {
    ConstraintReport rep;
    double enc = 0.0;
    for (double v : E.E.data) enc = std::max(enc, -v);
    if (enc > tol) rep.violations.push_back({"ENC", enc});

    double anc = 0.0;
    for (double v : A.A.data) anc = std::max(anc, -v);
    if (anc > tol) rep.violations.push_back({"ANC", anc});

    std::size_t R = A.count(), N = A.pixels();
    double asc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::size_t r = 0; r < R; ++r) s += A.A.at2(r, n);
        asc = std::max(asc, std::abs(s - 1.0));
    }
    if (asc > tol) rep.violations.push_back({"ASC", asc});
    return rep;
}

} // namespace mcu
