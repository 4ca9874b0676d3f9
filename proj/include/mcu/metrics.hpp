#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mcu/model.hpp"

namespace mcu {

constexpr double kRadToDeg = 57.295779513082320876798154814105;

/// Angle between two columns in degrees; cosine clamped to [-1,1] so rounding
/// can never produce NaN. Returns a negative sentinel when either column has
/// zero norm (caller decides how to count it).
inline double column_angle_deg(const Array& X, const Array& Y, std::size_t col_x,
                               std::size_t col_y) {
    std::size_t rows = X.shape[0], cx = X.shape[1], cy = Y.shape[1];
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        double a = X.data[i * cx + col_x];
        double b = Y.data[i * cy + col_y];
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if (nx == 0.0 || ny == 0.0) return -1.0;
    // sqrt of the product keeps cos(x,x) == 1 bit-exactly (sqrt(s*s) == s in
    // round-to-nearest); fall back to the split form if the product leaves range
    double denom = std::sqrt(nx * ny);
    if (!std::isfinite(denom) || denom == 0.0) denom = std::sqrt(nx) * std::sqrt(ny);
    double c = std::clamp(dot / denom, -1.0, 1.0);
    return kRadToDeg * std::acos(c);
}

/// Mean over pixels of the per-pixel abundance RMSE √(1/R Σ_r (a−â)²).
inline double rmse(const AbundanceMatrix& gt, const AbundanceMatrix& est) {
    check_same_shape(gt.A, est.A, "rmse");
    std::size_t R = gt.count(), N = gt.pixels();
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            double d = gt.A.at2(r, n) - est.A.at2(r, n);
            s += d * d;
        }
        acc += std::sqrt(s / static_cast<double>(R));
    }
    return acc / static_cast<double>(N);
}

struct AadResult {
    double mean_deg = 0.0;
    std::size_t skipped = 0; // zero-norm pixels left out of the mean
};

/// Mean per-pixel abundance angle in degrees.
inline AadResult aad(const AbundanceMatrix& gt, const AbundanceMatrix& est) {
    check_same_shape(gt.A, est.A, "aad");
    std::size_t N = gt.pixels();
    AadResult res;
    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t n = 0; n < N; ++n) {
        double a = column_angle_deg(gt.A, est.A, n, n);
        if (a < 0.0) {
            ++res.skipped;
            continue;
        }
        acc += a;
        ++counted;
    }
    res.mean_deg = counted ? acc / static_cast<double>(counted) : 0.0;
    return res;
}

struct SadResult {
    std::vector<double> per_endmember; // degrees; NaN where a column was skipped
    double mean_deg = 0.0;
    std::size_t skipped = 0;
};

/// Per-endmember spectral angle in degrees plus their mean.
inline SadResult sad(const EndmemberMatrix& gt, const EndmemberMatrix& est) {
    check_same_shape(gt.E, est.E, "sad");
    std::size_t R = gt.count();
    SadResult res;
    res.per_endmember.resize(R);
    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t r = 0; r < R; ++r) {
        double a = column_angle_deg(gt.E, est.E, r, r);
        if (a < 0.0) {
            res.per_endmember[r] = std::numeric_limits<double>::quiet_NaN();
            ++res.skipped;
            continue;
        }
        res.per_endmember[r] = a;
        acc += a;
        ++counted;
    }
    res.mean_deg = counted ? acc / static_cast<double>(counted) : 0.0;
    return res;
}

namespace detail {

/// Hungarian method (potentials formulation), square cost matrix, O(n³).
/// Returns perm with perm[row] = assigned column.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
    std::size_t n = cost.size();
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, INF);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = INF;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
    return perm;
}

inline std::vector<std::size_t> exhaustive_assignment(
    const std::vector<std::vector<double>>& cost) {
    std::size_t n = cost.size();
    std::vector<std::size_t> perm(n), best(n);
    std::iota(perm.begin(), perm.end(), 0);
    best = perm;
    double best_total = std::numeric_limits<double>::infinity();
    do {
        double t = 0.0;
        for (std::size_t r = 0; r < n; ++r) t += cost[r][perm[r]];
        if (t < best_total) {
            best_total = t;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

} // namespace detail

/// Permutation matching estimated endmembers to ground truth: perm[r] is the
/// estimated column paired with gt column r, minimizing total SAD. Zero-norm
/// columns cost the maximal 180° instead of poisoning the assignment.
inline std::vector<std::size_t> align_permutation(const EndmemberMatrix& gt,
                                                  const EndmemberMatrix& est) {
    if (gt.count() != est.count())
        throw ShapeError("align: R mismatch " + shape_str(gt.E.shape) + " vs " +
                         shape_str(est.E.shape));
    std::size_t R = gt.count();
    std::vector<std::vector<double>> cost(R, std::vector<double>(R));
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < R; ++c) {
            double a = column_angle_deg(gt.E, est.E, r, c);
            cost[r][c] = a < 0.0 ? 180.0 : a;
        }
    return R <= 8 ? detail::exhaustive_assignment(cost) : detail::hungarian(cost);
}

/// Applies an alignment permutation: column c of the result is column perm[c]
/// of the estimate; abundance rows move with their endmembers.
inline void apply_alignment(const std::vector<std::size_t>& perm, EndmemberMatrix& est_E,
                            AbundanceMatrix& est_A) {
    std::size_t P = est_E.bands(), R = est_E.count(), N = est_A.pixels();
    if (perm.size() != R || est_A.count() != R)
        throw ShapeError("apply_alignment: permutation size mismatch");
    Array E2(est_E.E.shape), A2(est_A.A.shape);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t p = 0; p < P; ++p) E2.at2(p, r) = est_E.E.at2(p, perm[r]);
        for (std::size_t n = 0; n < N; ++n) A2.at2(r, n) = est_A.A.at2(perm[r], n);
    }
    est_E.E = std::move(E2);
    est_A.A = std::move(A2);
}

/// Aligned-and-scored bundle used by the harness.
struct MetricReport {
    double rmse_val = 0.0;
    double aad_deg = 0.0;
    SadResult sad_res;
    std::size_t aad_skipped = 0;
};

inline MetricReport evaluate_aligned(const EndmemberMatrix& E_gt, const AbundanceMatrix& A_gt,
                                     EndmemberMatrix E_hat, AbundanceMatrix A_hat) {
    auto perm = align_permutation(E_gt, E_hat);
    apply_alignment(perm, E_hat, A_hat);
    MetricReport rep;
    rep.rmse_val = rmse(A_gt, A_hat);
    auto aadr = aad(A_gt, A_hat);
    rep.aad_deg = aadr.mean_deg;
    rep.aad_skipped = aadr.skipped;
    rep.sad_res = sad(E_gt, E_hat);
    return rep;
}

} // namespace mcu
