#pragma once

#include <string>
#include <vector>

#include "mcu/graph.hpp"
#include "mcu/io.hpp"
#include "mcu/model.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// Parameter store: named graph leaves, ordered, checkpointable
// ---------------------------------------------------------------------------

class ParamStore {
public:
    graph::Value add(const std::string& name, Array init) {
        for (const auto& [n, v] : items_)
            if (n == name) throw ContractError("ParamStore: duplicate parameter " + name);
        auto v = graph::param(std::move(init), name);
        items_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, graph::Value>>& items() const { return items_; }

    graph::Value find(const std::string& name) const {
        for (const auto& [n, v] : items_)
            if (n == name) return v;
        throw ContractError("ParamStore: unknown parameter " + name);
    }

    std::size_t scalar_count() const {
        std::size_t c = 0;
        for (const auto& [n, v] : items_) c += v->value.numel();
        return c;
    }

    void zero_grads() {
        for (auto& [n, v] : items_) v->zero_grad();
    }

    NamedArrays snapshot() const {
        NamedArrays out;
        out.reserve(items_.size());
        for (const auto& [n, v] : items_) out.emplace_back(n, v->value);
        return out;
    }

    void restore(const NamedArrays& arrays) {
        if (arrays.size() != items_.size())
            throw ConfigError("ParamStore::restore: checkpoint has " +
                              std::to_string(arrays.size()) + " arrays, model has " +
                              std::to_string(items_.size()));
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            if (arrays[i].first != items_[i].first)
                throw ConfigError("ParamStore::restore: name mismatch at " +
                                  std::to_string(i) + ": " + arrays[i].first + " vs " +
                                  items_[i].first);
            if (arrays[i].second.shape != items_[i].second->value.shape)
                throw ConfigError("ParamStore::restore: shape mismatch for " + arrays[i].first);
            items_[i].second->value = arrays[i].second;
        }
    }

private:
    std::vector<std::pair<std::string, graph::Value>> items_;
};

// ---------------------------------------------------------------------------
// Network parameter bundles
// ---------------------------------------------------------------------------

struct NetConfig {
    std::size_t J_E = 1, J_A = 3;
    std::size_t m_E = 128, m_A = 128;
    std::size_t k_E = 5, k_A = 5;
};

/// Endmember network. The input mix A1 and lift F1 feed the shared data term
/// F1∗(A1×Yᵀ), computed once and reused by every layer; everything else is
/// per layer and unshared.
struct UedipParams {
    graph::Value A1;   // (R, N)
    graph::Value F1;   // (m_E, 1, k_E)
    struct Layer {
        graph::Value A2;        // (R, R), mixes the endmember axis
        graph::Value F2, F3;    // (m_E, m_E, k_E)
        graph::Value s1, s2, s3;
    };
    std::vector<Layer> layers;
    graph::Value F_out; // (1, m_E, k_E)
    std::size_t m = 0, k = 0;
};

/// Abundance network, same shape of construction over 2D convs. E2 is a 1×1
/// mixer over code channels.
struct UadipParams {
    graph::Value E1;   // (R, P)
    graph::Value U1;   // (m_A, R, k_A, k_A)
    struct Layer {
        graph::Value E2;        // (m_A, m_A)
        graph::Value U2, U3;    // (m_A, m_A, k_A, k_A)
        graph::Value v1, v2, v3;
    };
    std::vector<Layer> layers;
    graph::Value U_out; // (R, m_A, k_A, k_A)
    std::size_t m = 0, k = 0;
};

namespace detail {

inline Array uniform_fan_in(Rng& rng, Shape shape, std::size_t fan_in) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_array(std::move(shape), -s, s);
}

} // namespace detail

/// Builds and registers UEDIP parameters. Initialization: weights uniform in
/// ±1/√fan_in drawn in declaration order; step scalars s1=1, s3=0.5, s2=0.01.
inline UedipParams make_uedip_params(std::size_t R, std::size_t N, const NetConfig& cfg,
                                     Rng& rng, ParamStore& store) {
    UedipParams p;
    p.m = cfg.m_E;
    p.k = cfg.k_E;
    std::size_t m = cfg.m_E, k = cfg.k_E;
    p.A1 = store.add("uedip.A1", detail::uniform_fan_in(rng, {R, N}, N));
    p.F1 = store.add("uedip.F1", detail::uniform_fan_in(rng, {m, 1, k}, k));
    for (std::size_t j = 0; j < cfg.J_E; ++j) {
        std::string pre = "uedip.layer" + std::to_string(j) + ".";
        UedipParams::Layer l;
        l.A2 = store.add(pre + "A2", detail::uniform_fan_in(rng, {R, R}, R));
        l.F2 = store.add(pre + "F2", detail::uniform_fan_in(rng, {m, m, k}, m * k));
        l.F3 = store.add(pre + "F3", detail::uniform_fan_in(rng, {m, m, k}, m * k));
        l.s1 = store.add(pre + "s1", Array({1}, {1.0}));
        l.s2 = store.add(pre + "s2", Array({1}, {0.01}));
        l.s3 = store.add(pre + "s3", Array({1}, {0.5}));
        p.layers.push_back(std::move(l));
    }
    p.F_out = store.add("uedip.F_out", detail::uniform_fan_in(rng, {1, m, k}, m * k));
    return p;
}

inline UadipParams make_uadip_params(std::size_t R, std::size_t P, const NetConfig& cfg,
                                     Rng& rng, ParamStore& store) {
    UadipParams p;
    p.m = cfg.m_A;
    p.k = cfg.k_A;
    std::size_t m = cfg.m_A, k = cfg.k_A;
    p.E1 = store.add("uadip.E1", detail::uniform_fan_in(rng, {R, P}, P));
    p.U1 = store.add("uadip.U1", detail::uniform_fan_in(rng, {m, R, k, k}, R * k * k));
    for (std::size_t j = 0; j < cfg.J_A; ++j) {
        std::string pre = "uadip.layer" + std::to_string(j) + ".";
        UadipParams::Layer l;
        l.E2 = store.add(pre + "E2", detail::uniform_fan_in(rng, {m, m}, m));
        l.U2 = store.add(pre + "U2", detail::uniform_fan_in(rng, {m, m, k, k}, m * k * k));
        l.U3 = store.add(pre + "U3", detail::uniform_fan_in(rng, {m, m, k, k}, m * k * k));
        l.v1 = store.add(pre + "v1", Array({1}, {1.0}));
        l.v2 = store.add(pre + "v2", Array({1}, {0.01}));
        l.v3 = store.add(pre + "v3", Array({1}, {0.5}));
        p.layers.push_back(std::move(l));
    }
    p.U_out = store.add("uadip.U_out", detail::uniform_fan_in(rng, {R, m, k, k}, m * k * k));
    return p;
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

/// Per-layer (Γ, u) after each update, before the output conv/activation.
struct UnrollTrace {
    std::vector<graph::Value> gamma;
    std::vector<graph::Value> u;
};

/// Builds the UEDIP graph on top of persistent parameter leaves.
/// Returns Ê as a (P×R) node.
inline graph::Value uedip_graph(const Array& Ymat, const UedipParams& p,
                                UnrollTrace* trace = nullptr) {
    std::size_t P = Ymat.shape[0], N = Ymat.shape[1];
    std::size_t R = p.A1->value.shape[0];
    if (p.A1->value.shape[1] != N)
        throw ShapeError("uedip: A1 has " + std::to_string(p.A1->value.shape[1]) +
                         " columns, cube has " + std::to_string(N) + " pixels");

    Array Yt({N, P});
    for (std::size_t i = 0; i < P; ++i)
        for (std::size_t n = 0; n < N; ++n) Yt.at2(n, i) = Ymat.at2(i, n);
    auto Ytc = graph::constant(std::move(Yt), "Yt");

    auto mixed = graph::matmul(p.A1, Ytc);                      // (R,P)
    auto shared = graph::conv1d(graph::reshape(mixed, {1, R, P}), p.F1); // (m,R,P)

    graph::Value gamma = graph::constant(Array({p.m, R, P}), "gamma0");
    graph::Value u = graph::constant(Array({p.m, R, P}), "u0");
    for (const auto& l : p.layers) {
        auto B = graph::scale_add(shared, graph::add(gamma, u), l.s1);
        auto omega = graph::conv1d(graph::mix_axis1(l.A2, graph::conv1d(B, l.F3)), l.F2);
        auto step = graph::scale_add(
            gamma, graph::sub(graph::sub(omega, u), gamma), l.s3); // (1−s3)Γ + s3(Ω−u)
        gamma = graph::soft_threshold(step, graph::relu(l.s2));
        u = graph::add(u, graph::sub(gamma, omega));
        if (trace) {
            trace->gamma.push_back(gamma);
            trace->u.push_back(u);
        }
    }

    auto Et = graph::reshape(graph::conv1d(gamma, p.F_out), {R, P});
    return graph::sigmoid(graph::transpose2(Et)); // (P,R)
}

/// Builds the UADIP graph. Returns Â as an (R×N) node (softmax over the
/// endmember axis, then flattened row-major).
inline graph::Value uadip_graph(const Array& Ymat, std::size_t N1, std::size_t N2,
                                const UadipParams& p, UnrollTrace* trace = nullptr) {
    std::size_t P = Ymat.shape[0], N = Ymat.shape[1];
    if (N1 * N2 != N)
        throw ShapeError("uadip: N1*N2 != N");
    std::size_t R = p.E1->value.shape[0];
    if (p.E1->value.shape[1] != P)
        throw ShapeError("uadip: E1 has " + std::to_string(p.E1->value.shape[1]) +
                         " columns, cube has " + std::to_string(P) + " bands");

    auto Yc = graph::constant(Ymat, "Y");
    auto mixed = graph::reshape(graph::matmul(p.E1, Yc), {R, N1, N2});
    auto shared = graph::conv2d(mixed, p.U1); // (m,N1,N2)

    graph::Value gamma = graph::constant(Array({p.m, N1, N2}), "gamma0");
    graph::Value u = graph::constant(Array({p.m, N1, N2}), "u0");
    for (const auto& l : p.layers) {
        auto B = graph::scale_add(shared, graph::add(gamma, u), l.v1);
        auto omega = graph::conv2d(graph::mix_axis0(l.E2, graph::conv2d(B, l.U3)), l.U2);
        auto step = graph::scale_add(gamma, graph::sub(graph::sub(omega, u), gamma), l.v3);
        gamma = graph::shift_relu(step, graph::relu(l.v2));
        u = graph::add(u, graph::sub(gamma, omega));
        if (trace) {
            trace->gamma.push_back(gamma);
            trace->u.push_back(u);
        }
    }

    auto logits = graph::conv2d(gamma, p.U_out); // (R,N1,N2)
    return graph::reshape(graph::softmax_axis(logits, 0), {R, N});
}

struct NbaGraph {
    graph::Value E_hat; // (P,R)
    graph::Value A_hat; // (R,N)
    graph::Value Y_hat; // (P,N)
};

inline NbaGraph nba_graph(const Array& Ymat, std::size_t N1, std::size_t N2,
                          const UedipParams& pe, const UadipParams& pa) {
    NbaGraph g;
    g.E_hat = uedip_graph(Ymat, pe);
    g.A_hat = uadip_graph(Ymat, N1, N2, pa);
    if (g.E_hat->value.shape[1] != g.A_hat->value.shape[0])
        throw ShapeError("nba: endmember count differs between the two networks");
    g.Y_hat = graph::matmul(g.E_hat, g.A_hat);
    return g;
}

// ---------------------------------------------------------------------------
// Plain-array entry points
// ---------------------------------------------------------------------------

struct NbaOutputs {
    EndmemberMatrix E_hat;
    AbundanceMatrix A_hat;
    HsiCube Y_hat;
};

inline EndmemberMatrix uedip_forward(const HsiCube& Y, const UedipParams& p) {
    return EndmemberMatrix(uedip_graph(Y.matrix(), p)->value);
}

inline AbundanceMatrix uadip_forward(const HsiCube& Y, const UadipParams& p) {
    return AbundanceMatrix(uadip_graph(Y.matrix(), Y.N1, Y.N2, p)->value, Y.N1, Y.N2);
}

inline NbaOutputs nba_forward(const HsiCube& Y, const UedipParams& pe, const UadipParams& pa) {
    auto g = nba_graph(Y.matrix(), Y.N1, Y.N2, pe, pa);
    NbaOutputs out;
    out.E_hat = EndmemberMatrix(g.E_hat->value);
    out.A_hat = AbundanceMatrix(g.A_hat->value, Y.N1, Y.N2);
    out.Y_hat = HsiCube(Y.P, Y.N1, Y.N2, Array({Y.P, Y.N1, Y.N2}, g.Y_hat->value.data));
    return out;
}

/// Exact count of learnable scalars across both networks.
inline std::size_t param_count(const UedipParams& pe, const UadipParams& pa) {
    std::size_t c = 0;
    auto add = [&c](const graph::Value& v) { c += v->value.numel(); };
    add(pe.A1);
    add(pe.F1);
    for (const auto& l : pe.layers) {
        add(l.A2);
        add(l.F2);
        add(l.F3);
        add(l.s1);
        add(l.s2);
        add(l.s3);
    }
    add(pe.F_out);
    add(pa.E1);
    add(pa.U1);
    for (const auto& l : pa.layers) {
        add(l.E2);
        add(l.U2);
        add(l.U3);
        add(l.v1);
        add(l.v2);
        add(l.v3);
    }
    add(pa.U_out);
    return c;
}

} // namespace mcu
