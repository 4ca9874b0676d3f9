#pragma once

#include <cmath>

#include "mcu/array.hpp"

namespace mcu {

struct NlmConfig {
    std::size_t patch_radius = 1;  // 3×3 patches
    std::size_t search_radius = 5; // 11×11 search window
    double h = 0.1;                // filtering strength when h_auto is off
    bool h_auto = true;            // h = 0.1 · (max − min) of the input

    void validate() const {
        if (patch_radius < 1 || search_radius < 1)
            throw ConfigError("nlm: radii must be >= 1");
        if (!h_auto && h <= 0.0) throw ConfigError("nlm: h must be > 0");
    }
};

/// Channel-wise non-local means over a (C×H×W) array. Weights are
/// exp(−‖patch_p − patch_q‖² / h²) over the search window; patch differences
/// sum the offsets where both patches fit inside the image.
///
/// Computed in centered form, out = x_p + Σ w_q (x_q − x_p) / Σ w_q, so a
/// constant image passes through bit-exactly and adding a constant to the
/// input shifts the output by exactly that constant.
///
/// A window that cannot fit (H or W < 2·patch_radius+1) returns the input
/// unchanged and sets *degenerate, as does a zero value range.
inline Array nlm_denoise(const Array& X, const NlmConfig& cfg, bool* degenerate = nullptr) {
    cfg.validate();
    if (degenerate) *degenerate = false;
    if (X.rank() != 3)
        throw ShapeError("nlm_denoise: want (C,H,W), got " + shape_str(X.shape));
    std::size_t C = X.shape[0], H = X.shape[1], W = X.shape[2];
    std::size_t f = cfg.patch_radius, s = cfg.search_radius;

    if (H < 2 * f + 1 || W < 2 * f + 1) {
        if (degenerate) *degenerate = true;
        return X;
    }

    double h = cfg.h;
    if (cfg.h_auto) {
        double lo = X.data[0], hi = X.data[0];
        for (double v : X.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        h = 0.1 * (hi - lo);
        if (h <= 0.0) {
            // constant input: every weight would be equal, output == input
            if (degenerate) *degenerate = true;
            return X;
        }
    }
    double inv_h2 = 1.0 / (h * h);

    auto sq_patch_dist = [&](const double* ch, std::ptrdiff_t pi, std::ptrdiff_t pj,
                             std::ptrdiff_t qi, std::ptrdiff_t qj) {
        double d = 0.0;
        for (std::ptrdiff_t di = -static_cast<std::ptrdiff_t>(f);
             di <= static_cast<std::ptrdiff_t>(f); ++di)
            for (std::ptrdiff_t dj = -static_cast<std::ptrdiff_t>(f);
                 dj <= static_cast<std::ptrdiff_t>(f); ++dj) {
                std::ptrdiff_t ai = pi + di, aj = pj + dj;
                std::ptrdiff_t bi = qi + di, bj = qj + dj;
                if (ai < 0 || aj < 0 || bi < 0 || bj < 0 ||
                    ai >= static_cast<std::ptrdiff_t>(H) || bi >= static_cast<std::ptrdiff_t>(H) ||
                    aj >= static_cast<std::ptrdiff_t>(W) || bj >= static_cast<std::ptrdiff_t>(W))
                    continue;
                double diff = ch[ai * static_cast<std::ptrdiff_t>(W) + aj] -
                              ch[bi * static_cast<std::ptrdiff_t>(W) + bj];
                d += diff * diff;
            }
        return d;
    };

    Array out(X.shape);
    for (std::size_t c = 0; c < C; ++c) {
        const double* ch = X.data.data() + c * H * W;
        double* oc = out.data.data() + c * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double center = ch[i * W + j];
                double wsum = 1.0; // the center's own weight, exp(0)
                double corr = 0.0;
                std::ptrdiff_t qi0 = std::max<std::ptrdiff_t>(
                    0, static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(s));
                std::ptrdiff_t qi1 = std::min<std::ptrdiff_t>(
                    static_cast<std::ptrdiff_t>(H) - 1,
                    static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(s));
                std::ptrdiff_t qj0 = std::max<std::ptrdiff_t>(
                    0, static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(s));
                std::ptrdiff_t qj1 = std::min<std::ptrdiff_t>(
                    static_cast<std::ptrdiff_t>(W) - 1,
                    static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(s));
                for (std::ptrdiff_t qi = qi0; qi <= qi1; ++qi)
                    for (std::ptrdiff_t qj = qj0; qj <= qj1; ++qj) {
                        if (qi == static_cast<std::ptrdiff_t>(i) &&
                            qj == static_cast<std::ptrdiff_t>(j))
                            continue;
                        double d = sq_patch_dist(ch, static_cast<std::ptrdiff_t>(i),
                                                 static_cast<std::ptrdiff_t>(j), qi, qj);
                        double w = std::exp(-d * inv_h2);
                        wsum += w;
                        corr += w * (ch[qi * static_cast<std::ptrdiff_t>(W) + qj] - center);
                    }
                oc[i * W + j] = center + corr / wsum;
            }
    }
    return out;
}

} // namespace mcu
