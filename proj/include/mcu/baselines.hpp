#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "mcu/model.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// SiVM endmember extraction
// ---------------------------------------------------------------------------

struct SivmResult {
    std::vector<std::size_t> indices;
    EndmemberMatrix E_G;
};

/// Greedy simplex-volume maximization over the pixel columns of Y. Starts from
/// the max-norm pixel; each step adds the pixel maximizing the Gram determinant
/// of the differences from the first selected vertex (squared simplex volume up
/// to a constant). Ties break toward the lowest pixel index.
inline SivmResult sivm_extract(const HsiCube& Y, std::size_t R) {
    std::size_t P = Y.P, N = Y.pixels();
    if (R < 2) throw ConfigError("sivm: R must be >= 2");
    if (R > N) throw ConfigError("sivm: R exceeds pixel count");
    Array Ym = Y.matrix();
    graph::ECMap Ymat(Ym.data.data(), (Eigen::Index)P, (Eigen::Index)N);

    std::vector<std::size_t> sel;
    sel.reserve(R);

    std::size_t best = 0;
    double best_n = -1.0;
    for (std::size_t n = 0; n < N; ++n) {
        double v = Ymat.col((Eigen::Index)n).squaredNorm();
        if (v > best_n) {
            best_n = v;
            best = n;
        }
    }
    sel.push_back(best);

    while (sel.size() < R) {
        Eigen::MatrixXd diffs((Eigen::Index)P, (Eigen::Index)(sel.size() - 1));
        for (std::size_t j = 1; j < sel.size(); ++j)
            diffs.col((Eigen::Index)(j - 1)) =
                Ymat.col((Eigen::Index)sel[j]) - Ymat.col((Eigen::Index)sel[0]);

        double best_v = -1.0;
        std::size_t best_i = N;
        Eigen::MatrixXd cand((Eigen::Index)P, diffs.cols() + 1);
        if (diffs.cols() > 0) cand.leftCols(diffs.cols()) = diffs;
        for (std::size_t n = 0; n < N; ++n) {
            if (std::find(sel.begin(), sel.end(), n) != sel.end()) continue;
            cand.col(cand.cols() - 1) =
                Ymat.col((Eigen::Index)n) - Ymat.col((Eigen::Index)sel[0]);
            double v = (cand.transpose() * cand).determinant();
            if (v > best_v) { // strict: ties keep the lowest index
                best_v = v;
                best_i = n;
            }
        }
        if (best_i == N || best_v <= 0.0)
            throw NumericError("sivm: rank collapse at vertex " +
                               std::to_string(sel.size()) +
                               ", data spans fewer than R directions");
        sel.push_back(best_i);
    }

    SivmResult res;
    res.indices = sel;
    Array E({P, R});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t p = 0; p < P; ++p) E.at2(p, r) = Ym.at2(p, sel[r]);
    res.E_G = EndmemberMatrix(std::move(E));
    return res;
}

// ---------------------------------------------------------------------------
// NNLS (Lawson-Hanson active set) and FCLS
// ---------------------------------------------------------------------------

/// min ‖Mx − b‖² s.t. x ≥ 0, classic active-set iteration.
inline Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                                  std::size_t max_iter = 0) {
    const Eigen::Index n = M.cols();
    if (max_iter == 0) max_iter = 3 * (std::size_t)n + 30;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive((std::size_t)n, false);
    Eigen::VectorXd w = M.transpose() * (b - M * x);
    const double tol = 1e-12 * std::max(1.0, b.norm()) * std::max(1.0, M.norm());

    for (std::size_t it = 0; it < max_iter; ++it) {
        Eigen::Index t = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[(std::size_t)j] && w(j) > wmax) {
                wmax = w(j);
                t = j;
            }
        if (t < 0) break;
        passive[(std::size_t)t] = true;

        for (;;) {
            std::vector<Eigen::Index> pidx;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[(std::size_t)j]) pidx.push_back(j);
            Eigen::MatrixXd Mp(M.rows(), (Eigen::Index)pidx.size());
            for (std::size_t j = 0; j < pidx.size(); ++j) Mp.col((Eigen::Index)j) = M.col(pidx[j]);
            Eigen::VectorXd zp = Mp.colPivHouseholderQr().solve(b);

            bool feasible = true;
            for (Eigen::Index j = 0; j < zp.size(); ++j)
                if (zp(j) <= 0.0) feasible = false;
            if (feasible) {
                x.setZero();
                for (std::size_t j = 0; j < pidx.size(); ++j) x(pidx[j]) = zp((Eigen::Index)j);
                break;
            }
            double alpha = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < pidx.size(); ++j) {
                double zj = zp((Eigen::Index)j);
                if (zj <= 0.0) {
                    double xj = x(pidx[j]);
                    double a = xj / (xj - zj);
                    alpha = std::min(alpha, a);
                }
            }
            for (std::size_t j = 0; j < pidx.size(); ++j) {
                Eigen::Index col = pidx[j];
                x(col) += alpha * (zp((Eigen::Index)j) - x(col));
                if (x(col) <= 1e-14) {
                    x(col) = 0.0;
                    passive[(std::size_t)col] = false;
                }
            }
        }
        w = M.transpose() * (b - M * x);
    }
    return x;
}

/// Fully constrained least squares per pixel: nonnegative abundances with the
/// sum-to-one constraint enforced through the standard augmented system row
/// delta·1ᵀ, followed by exact renormalization of each solved column.
inline AbundanceMatrix fcls_solve(const HsiCube& Y, const EndmemberMatrix& E,
                                  double delta = 0.0) {
    std::size_t P = Y.P, N = Y.pixels(), R = E.count();
    if (E.bands() != P) throw ShapeError("fcls: band count mismatch");
    Array Ym = Y.matrix();
    graph::ECMap Ymat(Ym.data.data(), (Eigen::Index)P, (Eigen::Index)N);
    graph::ECMap Em(E.E.data.data(), (Eigen::Index)P, (Eigen::Index)R);

    if (delta <= 0.0) {
        double m = Ymat.cwiseAbs().mean();
        delta = 1e-3 * (m > 0.0 ? m : 1.0);
    }

    Eigen::MatrixXd Ea((Eigen::Index)(P + 1), (Eigen::Index)R);
    Ea.topRows((Eigen::Index)P) = Em;
    Ea.row((Eigen::Index)P).setConstant(delta);

    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ea);
        if (qr.rank() < (Eigen::Index)R) {
            std::string msg = "fcls: endmember matrix is rank deficient, dependent columns:";
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qe{Eigen::MatrixXd(Em)};
            auto perm = qe.colsPermutation().indices();
            for (Eigen::Index j = qe.rank(); j < (Eigen::Index)R; ++j)
                msg += " " + std::to_string(perm(j));
            throw NumericError(msg);
        }
    }

    Array A({R, N});
    Eigen::VectorXd ba((Eigen::Index)(P + 1));
    ba((Eigen::Index)P) = delta;
    for (std::size_t n = 0; n < N; ++n) {
        ba.head((Eigen::Index)P) = Ymat.col((Eigen::Index)n);
        Eigen::VectorXd a = nnls_solve(Ea, ba);
        double s = a.sum();
        if (s <= 0.0) {
            for (std::size_t r = 0; r < R; ++r) A.at2(r, n) = 1.0 / (double)R;
        } else {
            for (std::size_t r = 0; r < R; ++r) A.at2(r, n) = a((Eigen::Index)r) / s;
        }
    }
    return AbundanceMatrix(std::move(A), Y.N1, Y.N2);
}

/// SiVM endmembers plus FCLS abundances, validated before returning. Noise can
/// push copied pixel spectra slightly negative, so the guidance endmembers are
/// clipped at zero (reflectances are physical).
inline Guidance make_guidance(const HsiCube& Y, std::size_t R) {
    auto sv = sivm_extract(Y, R);
    Guidance g;
    g.endmembers = sv.E_G;
    for (auto& v : g.endmembers.E.data) v = std::max(v, 0.0);
    g.abundances = fcls_solve(Y, g.endmembers);
    auto rep = validate_constraints(g.endmembers, g.abundances, 1e-6);
    if (!rep.ok()) throw NumericError("guidance violates constraints: " + rep.str());
    return g;
}

} // namespace mcu
