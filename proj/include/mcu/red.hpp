#pragma once

#include <functional>

#include "mcu/nlm.hpp"
#include "mcu/train.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// RED regularizer
// ---------------------------------------------------------------------------

/// ½⟨X, X − denoised⟩ with the inner product read as the Frobenius pairing.
inline double red_value(const Array& X, const Array& denoised) {
    check_same_shape(X, denoised, "red_value");
    double s = 0.0;
    for (std::size_t i = 0; i < X.numel(); ++i) s += X[i] * (X[i] - denoised[i]);
    return 0.5 * s;
}

template <typename FD>
double red_value_fd(const Array& X, FD&& f_D) {
    return red_value(X, f_D(X));
}

// ---------------------------------------------------------------------------
// Outer ADMM state and updates
// ---------------------------------------------------------------------------

/// Auxiliary images and scaled duals of the outer loop. X_E tracks Ê expanded
/// to a 1-channel (1×P×R) gray image; X_A tracks Â as an (R×N1×N2) stack.
struct RedState {
    Array X_E, d_E; // (1,P,R)
    Array X_A, d_A; // (R,N1,N2)
    double mu_E = 0.1, mu_A = 0.1;
    std::size_t t = 0;

    RedState() = default;
    RedState(std::size_t P, std::size_t R, std::size_t N1, std::size_t N2, double muE,
             double muA)
        : X_E({1, P, R}), d_E({1, P, R}), X_A({R, N1, N2}), d_A({R, N1, N2}),
          mu_E(muE), mu_A(muA) {
        if (mu_E <= 0.0 || mu_A <= 0.0)
            throw ConfigError("RedState: mu_E and mu_A must be > 0");
    }
};

inline Array expand_E(const EndmemberMatrix& E) {
    return Array({1, E.bands(), E.count()}, E.E.data);
}
inline Array expand_A(const AbundanceMatrix& A, std::size_t N1, std::size_t N2) {
    return Array({A.count(), N1, N2}, A.A.data);
}

/// One fixed-point sweep with precomputed denoiser outputs:
///   X ← c_fd·f_D(X) + c_data·(Ê + d),  c_fd = α/(α+μ), c_data = μ/(α+μ).
/// Computed as that convex combination, so α=0 reproduces Ê+d exactly.
inline void fixed_point_update(RedState& st, const EndmemberMatrix& E_hat,
                               const AbundanceMatrix& A_hat, double a4, double a5,
                               const Array& denoised_E, const Array& denoised_A) {
    if (st.mu_E <= 0.0 || st.mu_A <= 0.0)
        throw ConfigError("fixed_point_update: mu must be > 0");
    if (a4 < 0.0 || a5 < 0.0) throw ConfigError("fixed_point_update: alpha must be >= 0");
    check_same_shape(st.X_E, denoised_E, "fixed_point_update(E)");
    check_same_shape(st.X_A, denoised_A, "fixed_point_update(A)");

    std::size_t P = st.X_E.shape[1], R = st.X_E.shape[2];
    if (E_hat.bands() != P || E_hat.count() != R)
        throw ShapeError("fixed_point_update: E_hat shape mismatch");
    double cE_fd = a4 / (a4 + st.mu_E), cE_data = st.mu_E / (a4 + st.mu_E);
    for (std::size_t i = 0; i < st.X_E.numel(); ++i)
        st.X_E[i] = cE_fd * denoised_E[i] + cE_data * (E_hat.E[i] + st.d_E[i]);

    if (A_hat.count() != st.X_A.shape[0] ||
        A_hat.pixels() != st.X_A.shape[1] * st.X_A.shape[2])
        throw ShapeError("fixed_point_update: A_hat shape mismatch");
    double cA_fd = a5 / (a5 + st.mu_A), cA_data = st.mu_A / (a5 + st.mu_A);
    for (std::size_t i = 0; i < st.X_A.numel(); ++i)
        st.X_A[i] = cA_fd * denoised_A[i] + cA_data * (A_hat.A[i] + st.d_A[i]);
}

/// Convenience overload applying the default NLM denoiser once per variable.
inline void fixed_point_update(RedState& st, const EndmemberMatrix& E_hat,
                               const AbundanceMatrix& A_hat, double a4, double a5,
                               const NlmConfig& nlm) {
    fixed_point_update(st, E_hat, A_hat, a4, a5, nlm_denoise(st.X_E, nlm),
                       nlm_denoise(st.X_A, nlm));
}

/// Scaled-dual ascent: d += estimate − auxiliary.
inline void dual_update(RedState& st, const EndmemberMatrix& E_hat,
                        const AbundanceMatrix& A_hat) {
    for (std::size_t i = 0; i < st.d_E.numel(); ++i) st.d_E[i] += E_hat.E[i] - st.X_E[i];
    for (std::size_t i = 0; i < st.d_A.numel(); ++i) st.d_A[i] += A_hat.A[i] - st.X_A[i];
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

struct RedConfig {
    bool enabled = true;
    double mu_E = 0.1, mu_A = 0.1;
    std::size_t T = 5000;      // max outer iterations
    std::size_t n_inner = 1;   // training epochs per outer iteration
    double tol = 1e-4;         // relative convergence threshold
    NlmConfig nlm;

    void validate() const {
        if (!enabled) return;
        if (mu_E == 0.0 && mu_A == 0.0) return; // degenerates to plain training
        if (mu_E <= 0.0 || mu_A <= 0.0)
            throw ConfigError("red: mu_E and mu_A must both be > 0 (or both 0 to disable)");
        if (T < 1) throw ConfigError("red: T must be >= 1");
        nlm.validate();
    }

    bool active() const { return enabled && mu_E > 0.0 && mu_A > 0.0; }
};

struct OuterRecord {
    std::size_t t = 0;
    double gap_E = 0.0, gap_A = 0.0;   // ‖Ê−X_E‖_F, ‖Â−X_A‖_F
    double red_E = 0.0, red_A = 0.0;   // red_value at the updated X
};

struct NbaredResult {
    NbaOutputs outputs;
    std::vector<EpochRecord> inner_trace;
    std::vector<OuterRecord> outer_trace;
    std::size_t outer_iters = 0;
    bool converged = false;
};

/// Outer ADMM of the RED-regularized problem: alternate (i) n_inner epochs of
/// network training against the penalty-augmented loss, (ii) the denoiser
/// fixed-point sweep, (iii) the dual update, until the relative consensus gap
/// drops below tol or T iterations pass.
///
/// With the RED path disabled (enabled=false, or both μ set to 0), this is a
/// single plain training run of T·n_inner epochs; given the same seed it is
/// bit-identical to calling train_inner directly.
inline NbaredResult nbared_run(const HsiCube& Y, const Guidance& guid, NbaModel& model,
                               AdamState& adam, const LossWeights& w, const RedConfig& rc,
                               const GroundTruth* gt = nullptr) {
    rc.validate();
    NbaredResult res;

    if (!rc.active()) {
        auto tr = train_inner(Y, guid, model, adam, w, rc.T * rc.n_inner, nullptr, gt);
        res.inner_trace = std::move(tr.trace);
        res.outputs = nba_forward(Y, model.uedip, model.uadip);
        return res;
    }

    std::size_t P = Y.P, N1 = Y.N1, N2 = Y.N2, R = model.R;
    RedState st(P, R, N1, N2, rc.mu_E, rc.mu_A);

    std::size_t epoch = 0;
    for (std::size_t t = 0; t < rc.T; ++t) {
        AugTerms aug;
        aug.mu_E = rc.mu_E;
        aug.mu_A = rc.mu_A;
        aug.XE_minus_dE = Array({P, R});
        for (std::size_t i = 0; i < aug.XE_minus_dE.numel(); ++i)
            aug.XE_minus_dE[i] = st.X_E[i] - st.d_E[i];
        aug.XA_minus_dA = Array({R, N1 * N2});
        for (std::size_t i = 0; i < aug.XA_minus_dA.numel(); ++i)
            aug.XA_minus_dA[i] = st.X_A[i] - st.d_A[i];

        if (rc.n_inner > 0) {
            auto tr = train_inner(Y, guid, model, adam, w, rc.n_inner, &aug, gt, epoch);
            epoch += tr.epochs_run;
            res.inner_trace.insert(res.inner_trace.end(), tr.trace.begin(), tr.trace.end());
        }

        res.outputs = nba_forward(Y, model.uedip, model.uadip);
        fixed_point_update(st, res.outputs.E_hat, res.outputs.A_hat, w.a4, w.a5, rc.nlm);
        dual_update(st, res.outputs.E_hat, res.outputs.A_hat);
        st.t = t + 1;
        res.outer_iters = t + 1;

        OuterRecord rec;
        rec.t = t + 1;
        double gE = 0.0, gA = 0.0;
        for (std::size_t i = 0; i < st.X_E.numel(); ++i) {
            double d = res.outputs.E_hat.E[i] - st.X_E[i];
            gE += d * d;
        }
        for (std::size_t i = 0; i < st.X_A.numel(); ++i) {
            double d = res.outputs.A_hat.A[i] - st.X_A[i];
            gA += d * d;
        }
        rec.gap_E = std::sqrt(gE);
        rec.gap_A = std::sqrt(gA);
        rec.red_E = red_value(st.X_E, nlm_denoise(st.X_E, rc.nlm));
        rec.red_A = red_value(st.X_A, nlm_denoise(st.X_A, rc.nlm));
        res.outer_trace.push_back(rec);

        double denom = std::max(st.X_E.frob_norm() + st.X_A.frob_norm(), 1e-12);
        if ((rec.gap_E + rec.gap_A) / denom < rc.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace mcu
