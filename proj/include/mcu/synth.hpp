#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "mcu/io.hpp"
#include "mcu/metrics.hpp"
#include "mcu/model.hpp"

namespace mcu {

enum class EndmemberSource { procedural, library };

struct SynthConfig {
    std::size_t a = 10;        // patch edge
    double gamma = 0.8;        // dominant fraction per patch
    std::size_t R = 6;
    std::size_t P = 224;
    std::size_t grid_rows = 0; // patches per image side, 0 means a
    std::size_t grid_cols = 0;
    double filter_var = 2.0;   // smoothing filter variance, size (a+1)^2
    double snr_db = 30.0;      // infinity disables noise
    std::uint64_t seed = 0;
    EndmemberSource source = EndmemberSource::procedural;
    std::string library_path;

    bool operator==(const SynthConfig&) const = default;

    std::size_t rows() const { return (grid_rows ? grid_rows : a) * a; }
    std::size_t cols() const { return (grid_cols ? grid_cols : a) * a; }

    void validate() const {
        if (a < 2) throw ConfigError("synth: a must be >= 2");
        if (!(gamma > 0.5 && gamma <= 1.0))
            throw ConfigError("synth: gamma must be in (0.5, 1]");
        if (R < 2) throw ConfigError("synth: R must be >= 2");
        if (P < 1) throw ConfigError("synth: P must be >= 1");
        if (filter_var <= 0.0) throw ConfigError("synth: filter variance must be > 0");
        if (std::isnan(snr_db) || (std::isfinite(snr_db) && snr_db <= 0.0))
            throw ConfigError("synth: SNR must be positive dB or inf");
        if (source == EndmemberSource::library && library_path.empty())
            throw ConfigError("synth: library source needs a path");
    }
};

// ---------------------------------------------------------------------------
// Endmembers
// ---------------------------------------------------------------------------

/// Signature library: u32 P, u32 M, then M signatures of P little-endian f64.
inline Array load_signature_library(const std::string& path) {
    auto in = detail::open_in(path);
    std::uint32_t P = detail::read_u32(in, path), M = detail::read_u32(in, path);
    if (P == 0 || M == 0) throw ConfigError("signature library " + path + ": empty");
    Array lib({(std::size_t)P, (std::size_t)M});
    std::vector<double> sig(P);
    for (std::uint32_t m = 0; m < M; ++m) {
        detail::read_f64(in, sig.data(), P, path);
        for (std::uint32_t p = 0; p < P; ++p) lib.at2(p, m) = sig[p];
    }
    return lib;
}

inline void save_signature_library(const std::string& path, const Array& lib) {
    if (lib.rank() != 2) throw ShapeError("signature library must be 2-d");
    auto out = detail::open_out(path);
    detail::write_u32(out, (std::uint32_t)lib.shape[0]);
    detail::write_u32(out, (std::uint32_t)lib.shape[1]);
    std::vector<double> sig(lib.shape[0]);
    for (std::size_t m = 0; m < lib.shape[1]; ++m) {
        for (std::size_t p = 0; p < lib.shape[0]; ++p) sig[p] = lib.at2(p, m);
        detail::write_f64(out, sig.data(), sig.size());
    }
    out.flush();
}

namespace detail {

inline Array gaussian_bump_spectrum(std::size_t P, Rng& rng) {
    std::size_t bumps = 3 + rng.index(4);
    Array s({P});
    for (std::size_t b = 0; b < bumps; ++b) {
        double center = rng.uniform(0.0, (double)(P - 1));
        double width = rng.uniform((double)P / 30.0 + 1.0, (double)P / 8.0 + 2.0);
        double amp = rng.uniform(0.2, 1.0);
        for (std::size_t p = 0; p < P; ++p) {
            double d = ((double)p - center) / width;
            s[p] += amp * std::exp(-0.5 * d * d);
        }
    }
    double mx = s.max_abs();
    double level = rng.uniform(0.5, 1.0);
    for (std::size_t p = 0; p < P; ++p) s[p] = s[p] / mx * level;
    return s;
}

} // namespace detail

/// Procedural mode draws smooth positive spectra (3 to 6 Gaussian bumps each,
/// values in [0,1]) and rejects candidates closer than 5 degrees SAD to any
/// accepted one. Library mode picks R distinct signatures from the file.
inline EndmemberMatrix gen_endmembers(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    Array E({cfg.P, cfg.R});
    if (cfg.source == EndmemberSource::library) {
        Array lib = load_signature_library(cfg.library_path);
        if (lib.shape[0] != cfg.P)
            throw ConfigError("signature library band count " +
                              std::to_string(lib.shape[0]) + " does not match P=" +
                              std::to_string(cfg.P));
        std::size_t M = lib.shape[1];
        if (M < cfg.R) throw ConfigError("signature library too small: M=" +
                                         std::to_string(M) + " < R=" + std::to_string(cfg.R));
        std::vector<std::size_t> idx(M);
        for (std::size_t i = 0; i < M; ++i) idx[i] = i;
        if (M > cfg.R) {
            for (std::size_t i = 0; i < cfg.R; ++i)
                std::swap(idx[i], idx[i + rng.index(M - i)]);
        }
        for (std::size_t r = 0; r < cfg.R; ++r)
            for (std::size_t p = 0; p < cfg.P; ++p) E.at2(p, r) = lib.at2(p, idx[r]);
        return EndmemberMatrix(std::move(E));
    }

    std::vector<Array> accepted;
    std::size_t draws = 0;
    while (accepted.size() < cfg.R) {
        if (++draws > 1000)
            throw NumericError("gen_endmembers: rejection exceeded 1000 draws");
        Array cand({cfg.P, 1}, detail::gaussian_bump_spectrum(cfg.P, rng).data);
        bool ok = true;
        for (const auto& acc : accepted) {
            double deg = column_angle_deg(acc, cand, 0, 0);
            if (deg < 5.0) {
                ok = false;
                break;
            }
        }
        if (ok) accepted.push_back(std::move(cand));
    }
    for (std::size_t r = 0; r < cfg.R; ++r)
        for (std::size_t p = 0; p < cfg.P; ++p) E.at2(p, r) = accepted[r].at2(p, 0);
    return EndmemberMatrix(std::move(E));
}

// ---------------------------------------------------------------------------
// Abundances
// ---------------------------------------------------------------------------

namespace detail {

/// Piecewise-constant planes before smoothing: each a-by-a patch mixes two
/// distinct endmembers with fractions gamma and 1-gamma.
inline Array patch_planes(const SynthConfig& cfg, Rng& rng) {
    std::size_t gr = cfg.grid_rows ? cfg.grid_rows : cfg.a;
    std::size_t gc = cfg.grid_cols ? cfg.grid_cols : cfg.a;
    std::size_t N1 = gr * cfg.a, N2 = gc * cfg.a, R = cfg.R;
    Array planes({R, N1, N2});
    for (std::size_t pr = 0; pr < gr; ++pr)
        for (std::size_t pc = 0; pc < gc; ++pc) {
            std::size_t e1 = rng.index(R);
            std::size_t e2 = rng.index(R - 1);
            if (e2 >= e1) ++e2;
            for (std::size_t i = 0; i < cfg.a; ++i)
                for (std::size_t j = 0; j < cfg.a; ++j) {
                    planes.at3(e1, pr * cfg.a + i, pc * cfg.a + j) = cfg.gamma;
                    planes.at3(e2, pr * cfg.a + i, pc * cfg.a + j) = 1.0 - cfg.gamma;
                }
        }
    return planes;
}

} // namespace detail

/// Patch construction: the image is a grid of a-by-a patches, each mixing two
/// randomly chosen endmembers with fractions gamma and 1-gamma. Every plane is
/// then smoothed with a unit-sum Gaussian filter (same zero-padding) and each
/// pixel is rescaled to sum one.
inline AbundanceMatrix gen_abundances(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    std::size_t N1 = cfg.rows(), N2 = cfg.cols(), R = cfg.R;
    Array planes = detail::patch_planes(cfg, rng);

    std::size_t f = cfg.a + 1;
    std::size_t c0 = f / 2;
    Array kern({f, f});
    double ks = 0.0;
    for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            double di = (double)i - (double)c0, dj = (double)j - (double)c0;
            kern.at2(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * cfg.filter_var));
            ks += kern.at2(i, j);
        }
    for (auto& v : kern.data) v /= ks;

    Array smoothed({R, N1, N2});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t y = 0; y < N1; ++y)
            for (std::size_t x = 0; x < N2; ++x) {
                double acc = 0.0;
                for (std::size_t i = 0; i < f; ++i) {
                    long sy = (long)y + (long)i - (long)c0;
                    if (sy < 0 || sy >= (long)N1) continue;
                    for (std::size_t j = 0; j < f; ++j) {
                        long sx = (long)x + (long)j - (long)c0;
                        if (sx < 0 || sx >= (long)N2) continue;
                        acc += kern.at2(i, j) * planes.at3(r, (std::size_t)sy, (std::size_t)sx);
                    }
                }
                smoothed.at3(r, y, x) = acc;
            }

    Array A({R, N1 * N2});
    for (std::size_t y = 0; y < N1; ++y)
        for (std::size_t x = 0; x < N2; ++x) {
            std::size_t n = y * N2 + x;
            double s = 0.0;
            for (std::size_t r = 0; r < R; ++r) s += smoothed.at3(r, y, x);
            for (std::size_t r = 0; r < R; ++r) A.at2(r, n) = smoothed.at3(r, y, x) / s;
        }
    return AbundanceMatrix(std::move(A), N1, N2);
}

// ---------------------------------------------------------------------------
// Noise and full pipeline
// ---------------------------------------------------------------------------

/// Additive white Gaussian noise at variance mean(x^2) / 10^(SNR/10).
inline HsiCube add_awgn(const HsiCube& clean, double snr_db, Rng& rng,
                        double* sigma2_out = nullptr) {
    if (std::isinf(snr_db)) {
        if (sigma2_out) *sigma2_out = 0.0;
        return clean;
    }
    double power = 0.0;
    for (double v : clean.data.data) power += v * v;
    power /= (double)clean.data.numel();
    double sigma2 = power / std::pow(10.0, snr_db / 10.0);
    double sigma = std::sqrt(sigma2);
    if (sigma2_out) *sigma2_out = sigma2;
    HsiCube noisy = clean;
    for (auto& v : noisy.data.data) v += sigma * rng.normal();
    return noisy;
}

struct SynthResult {
    HsiCube Y;        // observed (noisy) cube
    HsiCube Y_clean;  // E_gt * A_gt, exact
    EndmemberMatrix E_gt;
    AbundanceMatrix A_gt;
    double noise_var = 0.0;
};

inline SynthResult synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthResult res;
    Rng data(cfg.seed, "data");
    res.E_gt = gen_endmembers(cfg, data);
    res.A_gt = gen_abundances(cfg, data);
    res.Y_clean = lmm_forward(res.E_gt, res.A_gt, cfg.rows(), cfg.cols());
    Rng noise(cfg.seed, "noise");
    res.Y = add_awgn(res.Y_clean, cfg.snr_db, noise, &res.noise_var);
    return res;
}

} // namespace mcu
