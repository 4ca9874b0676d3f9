#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mcu/metrics.hpp"
#include "mcu/nets.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

struct LossWeights {
    double a1 = 0.1, a2 = 0.001, a3 = 1.0, a4 = 0.001, a5 = 0.001;

    void validate() const {
        if (a1 < 0 || a2 < 0 || a3 < 0 || a4 < 0 || a5 < 0 || !std::isfinite(a1 + a2 + a3 + a4 + a5))
            throw ConfigError("loss weights must be finite and >= 0");
    }
};

/// ½‖Y − Ê·A_G‖_F²: anchors the endmember network to the guidance abundances.
inline double loss_E(const HsiCube& Y, const EndmemberMatrix& E_hat, const AbundanceMatrix& A_G) {
    std::size_t P = Y.P, N = Y.pixels(), R = E_hat.count();
    if (E_hat.bands() != P || A_G.count() != R || A_G.pixels() != N)
        throw ShapeError("loss_E: inconsistent shapes");
    Array Ym = Y.matrix();
    Array pred({P, N});
    graph::as_mat(pred, P, N).noalias() =
        graph::as_mat(E_hat.E, P, R) * graph::as_mat(A_G.A, R, N);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        double d = Ym[i] - pred[i];
        s += d * d;
    }
    return 0.5 * s;
}

/// ½‖Y − E_G·Â‖_F².
inline double loss_A(const HsiCube& Y, const AbundanceMatrix& A_hat, const EndmemberMatrix& E_G) {
    std::size_t P = Y.P, N = Y.pixels(), R = A_hat.count();
    if (E_G.bands() != P || E_G.count() != R || A_hat.pixels() != N)
        throw ShapeError("loss_A: inconsistent shapes");
    Array Ym = Y.matrix();
    Array pred({P, N});
    graph::as_mat(pred, P, N).noalias() =
        graph::as_mat(E_G.E, P, R) * graph::as_mat(A_hat.A, R, N);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        double d = Ym[i] - pred[i];
        s += d * d;
    }
    return 0.5 * s;
}

/// ½‖Y − Ŷ‖_F².
inline double loss_BU(const HsiCube& Y, const HsiCube& Y_hat) {
    check_same_shape(Y.data, Y_hat.data, "loss_BU");
    double s = 0.0;
    for (std::size_t i = 0; i < Y.data.numel(); ++i) {
        double d = Y.data[i] - Y_hat.data[i];
        s += d * d;
    }
    return 0.5 * s;
}

/// Fixed (X, d) penalty anchors for the outer ADMM loop; flat (P×R) / (R×N)
/// views of the RED variables.
struct AugTerms {
    Array XE_minus_dE; // (P,R)
    Array XA_minus_dA; // (R,N)
    double mu_E = 0.0, mu_A = 0.0;
};

struct CompositeLoss {
    graph::Value total;
    double L_E = 0.0, L_A = 0.0, L_BU = 0.0, value = 0.0;
};

/// α1·L_E + α2·L_A + α3·L_BU, plus the two quadratic penalties when an outer
/// ADMM loop supplies them. Zero-weight terms contribute no graph nodes; the
/// reported per-term values are always computed.
inline CompositeLoss composite_loss(const Array& Ymat, const NbaGraph& g, const Guidance& guid,
                                    const LossWeights& w, const AugTerms* aug = nullptr) {
    w.validate();
    auto half_sumsq_gap = [](const Array& target, const graph::Value& pred) {
        return graph::smul_const(0.5, graph::sumsq(graph::sub(graph::constant(target), pred)));
    };

    std::size_t P = Ymat.shape[0], N = Ymat.shape[1];
    std::size_t R = g.E_hat->value.shape[1];

    CompositeLoss out;
    graph::Value acc;
    auto push = [&acc](const graph::Value& term) {
        acc = acc ? graph::add(acc, term) : term;
    };

    // L_E term: ½‖Y − Ê·A_G‖²
    if (w.a1 != 0.0) {
        auto node = half_sumsq_gap(
            Ymat, graph::matmul(g.E_hat, graph::constant(guid.abundances.A, "A_G")));
        out.L_E = node->value[0];
        push(graph::smul_const(w.a1, node));
    } else {
        Array pred({P, N});
        graph::as_mat(pred, P, N).noalias() = graph::as_mat(g.E_hat->value, P, R) *
                                              graph::as_mat(guid.abundances.A, R, N);
        double s = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            double d = Ymat[i] - pred[i];
            s += d * d;
        }
        out.L_E = 0.5 * s;
    }
    // L_A term: ½‖Y − E_G·Â‖²
    if (w.a2 != 0.0) {
        auto node = half_sumsq_gap(
            Ymat, graph::matmul(graph::constant(guid.endmembers.E, "E_G"), g.A_hat));
        out.L_A = node->value[0];
        push(graph::smul_const(w.a2, node));
    } else {
        Array pred({P, N});
        graph::as_mat(pred, P, N).noalias() = graph::as_mat(guid.endmembers.E, P, R) *
                                              graph::as_mat(g.A_hat->value, R, N);
        double s = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            double d = Ymat[i] - pred[i];
            s += d * d;
        }
        out.L_A = 0.5 * s;
    }
    // L_BU term: ½‖Y − Ŷ‖²
    if (w.a3 != 0.0) {
        auto node = half_sumsq_gap(Ymat, g.Y_hat);
        out.L_BU = node->value[0];
        push(graph::smul_const(w.a3, node));
    } else {
        double s = 0.0;
        for (std::size_t i = 0; i < Ymat.numel(); ++i) {
            double d = Ymat[i] - g.Y_hat->value[i];
            s += d * d;
        }
        out.L_BU = 0.5 * s;
    }
    // Outer-loop penalties: (μ_E/2)‖X_E−Ê−d_E‖² + (μ_A/2)‖X_A−Â−d_A‖²
    if (aug) {
        if (aug->mu_E != 0.0)
            push(graph::smul_const(aug->mu_E / 2.0,
                                   graph::sumsq(graph::sub(graph::constant(aug->XE_minus_dE),
                                                           g.E_hat))));
        if (aug->mu_A != 0.0)
            push(graph::smul_const(aug->mu_A / 2.0,
                                   graph::sumsq(graph::sub(graph::constant(aug->XA_minus_dA),
                                                           g.A_hat))));
    }

    if (!acc) acc = graph::constant(Array({1}, {0.0}), "zero_loss");
    out.total = acc;
    out.value = acc->value[0];
    return out;
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct AdamState {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.85, eps = 1e-8;
    std::size_t step = 0;
    std::vector<Array> m, v; // parallel to the store's parameter order

    void init(const ParamStore& store) {
        m.clear();
        v.clear();
        for (const auto& [name, val] : store.items()) {
            m.emplace_back(val->value.shape);
            v.emplace_back(val->value.shape);
        }
        step = 0;
    }
};

/// One ADAM update with bias correction over every parameter in the store.
/// Parameters whose gradient was never touched this epoch count as zero.
inline void adam_step(ParamStore& store, AdamState& st) {
    if (st.m.size() != store.items().size())
        throw ContractError("adam_step: state not initialized for this parameter set");
    ++st.step;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < st.m.size(); ++i) {
        auto& [name, node] = store.items()[i];
        Array& p = node->value;
        Array& m = st.m[i];
        Array& v = st.v[i];
        const bool hg = node->has_grad;
        if (hg && !node->grad.all_finite())
            throw NumericError("adam_step: non-finite gradient for parameter '" + name + "'");
        for (std::size_t j = 0; j < p.numel(); ++j) {
            double g = hg ? node->grad[j] : 0.0;
            m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g;
            v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Inner training loop
// ---------------------------------------------------------------------------

struct NbaModel {
    ParamStore store;
    UedipParams uedip;
    UadipParams uadip;
    std::size_t R = 0, P = 0, N1 = 0, N2 = 0;

    NbaModel(std::size_t R_, std::size_t P_, std::size_t N1_, std::size_t N2_,
             const NetConfig& cfg, std::uint64_t seed)
        : R(R_), P(P_), N1(N1_), N2(N2_) {
        Rng rng(seed, "init");
        uedip = make_uedip_params(R, N1 * N2, cfg, rng, store);
        uadip = make_uadip_params(R, P, cfg, rng, store);
    }

    NbaGraph forward(const Array& Ymat) { return nba_graph(Ymat, N1, N2, uedip, uadip); }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double L_E = 0.0, L_A = 0.0, L_BU = 0.0, total = 0.0;
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double aad = std::numeric_limits<double>::quiet_NaN();
    double sad = std::numeric_limits<double>::quiet_NaN();
    bool has_metrics = false;
};

struct GroundTruth {
    EndmemberMatrix E;
    AbundanceMatrix A;
};

struct TrainResult {
    std::vector<EpochRecord> trace;
    std::size_t epochs_run = 0;
};

/// Full-batch loop: forward → composite loss → backward → ADAM, once per
/// epoch. A non-finite loss restores the last parameters that produced a
/// finite one and aborts. `epoch_offset` only shifts the recorded epoch
/// numbers (outer ADMM iterations keep one global epoch axis).
inline TrainResult train_inner(const HsiCube& Y, const Guidance& guid, NbaModel& model,
                               AdamState& adam, const LossWeights& w, std::size_t epochs,
                               const AugTerms* aug = nullptr, const GroundTruth* gt = nullptr,
                               std::size_t epoch_offset = 0) {
    TrainResult res;
    Array Ymat = Y.matrix();
    NamedArrays last_good;
    for (std::size_t e = 0; e < epochs; ++e) {
        model.store.zero_grads();
        auto g = model.forward(Ymat);
        auto loss = composite_loss(Ymat, g, guid, w, aug);

        if (!std::isfinite(loss.value)) {
            if (!last_good.empty()) model.store.restore(last_good);
            throw NumericError("train_inner: non-finite loss at epoch " +
                               std::to_string(epoch_offset + e) +
                               "; parameters restored to the last finite-loss state");
        }
        last_good = model.store.snapshot();

        EpochRecord rec;
        rec.epoch = epoch_offset + e;
        rec.L_E = loss.L_E;
        rec.L_A = loss.L_A;
        rec.L_BU = loss.L_BU;
        rec.total = loss.value;
        if (gt) {
            auto rep = evaluate_aligned(gt->E, gt->A, EndmemberMatrix(g.E_hat->value),
                                        AbundanceMatrix(g.A_hat->value, Y.N1, Y.N2));
            rec.rmse = rep.rmse_val;
            rec.aad = rep.aad_deg;
            rec.sad = rep.sad_res.mean_deg;
            rec.has_metrics = true;
        }
        res.trace.push_back(rec);

        graph::backward(loss.total);
        adam_step(model.store, adam);
        ++res.epochs_run;
    }
    return res;
}

} // namespace mcu
