#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "mcu/array.hpp"

namespace mcu::graph {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline EMap as_mat(Array& a, std::size_t rows, std::size_t cols) {
    return EMap(a.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ECMap as_mat(const Array& a, std::size_t rows, std::size_t cols) {
    return ECMap(a.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// ---------------------------------------------------------------------------
// Node / Value
// ---------------------------------------------------------------------------

struct Node;
using Value = std::shared_ptr<Node>;

/// One vertex of the computation graph. Forward value is fixed at
/// construction; grad is allocated on first accumulation during backward.
struct Node {
    Array value;
    Array grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool backward_done = false;
    std::string op;
    std::vector<Value> parents;
    std::function<void(Node&)> backward_fn;

    explicit Node(Array v) : value(std::move(v)) {}

    void accum_grad(const Array& g) {
        if (!has_grad) {
            grad = Array(value.shape);
            has_grad = true;
        }
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
    }
    void zero_grad() {
        if (has_grad) grad.fill(0.0);
    }
};

inline Value constant(Array v, std::string op = "const") {
    auto n = std::make_shared<Node>(std::move(v));
    n->op = std::move(op);
    return n;
}

inline Value param(Array v, std::string op = "param") {
    auto n = std::make_shared<Node>(std::move(v));
    n->op = std::move(op);
    n->requires_grad = true;
    return n;
}

inline Value make_node(Array v, std::vector<Value> parents, std::string op,
                       std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>(std::move(v));
    n->parents = std::move(parents);
    n->op = std::move(op);
    for (const auto& p : n->parents)
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar node. Every requires_grad node reachable
/// from `loss` receives its accumulated gradient. A second call on the same
/// node is a contract violation: the graph is throwaway, rebuild it instead.
inline void backward(const Value& loss) {
    if (loss->value.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss->value.shape));
    if (loss->backward_done)
        throw ContractError("backward: repeated call on the same node without reset");
    loss->backward_done = true;

    // Iterative post-order DFS. Reversed post-order is a valid topological
    // order for the backward sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss->accum_grad(Array({1}, {1.0}));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise / scalar ops
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
    check_same_shape(a->value, b->value, "add");
    Array out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, "add", [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(n.grad);
    });
}

inline Value sub(const Value& a, const Value& b) {
    check_same_shape(a->value, b->value, "sub");
    Array out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, "sub", [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) {
            Array g = n.grad;
            for (double& v : g.data) v = -v;
            n.parents[1]->accum_grad(g);
        }
    });
}

/// c * x with a plain (non-learnable) coefficient.
inline Value smul_const(double c, const Value& x) {
    Array out = x->value;
    for (double& v : out.data) v *= c;
    return make_node(std::move(out), {x}, "smul_const", [c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Array g = n.grad;
        for (double& v : g.data) v *= c;
        n.parents[0]->accum_grad(g);
    });
}

/// a + s*b where s is a scalar node (learnable step size).
inline Value scale_add(const Value& a, const Value& b, const Value& s) {
    check_same_shape(a->value, b->value, "scale_add");
    if (s->value.numel() != 1)
        throw ShapeError("scale_add: scale must be scalar, got " + shape_str(s->value.shape));
    double sv = s->value[0];
    Array out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sv * b->value[i];
    return make_node(std::move(out), {a, b, s}, "scale_add", [sv](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) {
            Array g = n.grad;
            for (double& v : g.data) v *= sv;
            n.parents[1]->accum_grad(g);
        }
        if (n.parents[2]->requires_grad) {
            double ds = 0.0;
            const Array& b_ = n.parents[1]->value;
            for (std::size_t i = 0; i < n.grad.numel(); ++i) ds += n.grad[i] * b_[i];
            n.parents[2]->accum_grad(Array({1}, {ds}));
        }
    });
}

inline Value relu(const Value& x) {
    Array out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {x}, "relu", [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Array& xin = n.parents[0]->value;
        Array g = n.grad;
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xin[i] <= 0.0) g[i] = 0.0;
        n.parents[0]->accum_grad(g);
    });
}

inline Value sigmoid(const Value& x) {
    Array out = x->value;
    for (double& v : out.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return make_node(std::move(out), {x}, "sigmoid", [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Array& y = n.value;
        Array g = n.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        n.parents[0]->accum_grad(g);
    });
}

/// Soft_z(x) = sign(x)·max(|x|−z, 0), z a scalar node, clamped semantics are
/// the caller's business. Subgradient 0 at the kink; dz = −sign(x) on the
/// active set.
inline Value soft_threshold(const Value& x, const Value& z) {
    if (z->value.numel() != 1)
        throw ShapeError("soft_threshold: threshold must be scalar, got " +
                         shape_str(z->value.shape));
    double zv = z->value[0];
    Array out = x->value;
    for (double& v : out.data) {
        double m = std::abs(v) - zv;
        v = m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
    }
    return make_node(std::move(out), {x, z}, "soft_threshold", [zv](Node& n) {
        const Array& xin = n.parents[0]->value;
        bool need_x = n.parents[0]->requires_grad;
        bool need_z = n.parents[1]->requires_grad;
        Array gx = n.grad;
        double gz = 0.0;
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            if (std::abs(xin[i]) > zv) {
                gz -= (xin[i] > 0.0 ? 1.0 : -1.0) * n.grad[i];
            } else {
                gx[i] = 0.0;
            }
        }
        if (need_x) n.parents[0]->accum_grad(gx);
        if (need_z) n.parents[1]->accum_grad(Array({1}, {gz}));
    });
}

/// max(x − z, 0) with scalar node z.
inline Value shift_relu(const Value& x, const Value& z) {
    if (z->value.numel() != 1)
        throw ShapeError("shift_relu: shift must be scalar, got " + shape_str(z->value.shape));
    double zv = z->value[0];
    Array out = x->value;
    for (double& v : out.data) v = v - zv > 0.0 ? v - zv : 0.0;
    return make_node(std::move(out), {x, z}, "shift_relu", [zv](Node& n) {
        const Array& xin = n.parents[0]->value;
        Array gx = n.grad;
        double gz = 0.0;
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            if (xin[i] - zv > 0.0) {
                gz -= n.grad[i];
            } else {
                gx[i] = 0.0;
            }
        }
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(gx);
        if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(Array({1}, {gz}));
    });
}

/// Softmax along one axis of an arbitrary-rank tensor.
inline Value softmax_axis(const Value& x, std::size_t axis) {
    const Shape& sh = x->value.shape;
    if (axis >= sh.size())
        throw ShapeError("softmax_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(sh));
    std::size_t len = sh[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
    std::size_t outer = x->value.numel() / (len * inner);

    Array out(sh);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < len; ++l)
                mx = std::max(mx, x->value[base + l * inner]);
            double sum = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                double e = std::exp(x->value[base + l * inner] - mx);
                out[base + l * inner] = e;
                sum += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
        }

    return make_node(std::move(out), {x}, "softmax_axis",
                     [len, inner, outer](Node& n) {
                         if (!n.parents[0]->requires_grad) return;
                         const Array& y = n.value;
                         Array g(n.value.shape);
                         for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t in = 0; in < inner; ++in) {
                                 std::size_t base = o * len * inner + in;
                                 double dot = 0.0;
                                 for (std::size_t l = 0; l < len; ++l) {
                                     std::size_t i = base + l * inner;
                                     dot += n.grad[i] * y[i];
                                 }
                                 for (std::size_t l = 0; l < len; ++l) {
                                     std::size_t i = base + l * inner;
                                     g[i] = y[i] * (n.grad[i] - dot);
                                 }
                             }
                         n.parents[0]->accum_grad(g);
                     });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Value reshape(const Value& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->value.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x->value.shape) + " as " +
                         shape_str(new_shape));
    Array out(new_shape, x->value.data);
    return make_node(std::move(out), {x}, "reshape", [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Array g(n.parents[0]->value.shape, n.grad.data);
        n.parents[0]->accum_grad(g);
    });
}

inline Value transpose2(const Value& x) {
    if (x->value.rank() != 2)
        throw ShapeError("transpose2: want rank-2, got " + shape_str(x->value.shape));
    std::size_t r = x->value.shape[0], c = x->value.shape[1];
    Array out({c, r});
    as_mat(out, c, r) = as_mat(x->value, r, c).transpose();
    return make_node(std::move(out), {x}, "transpose2", [r, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Array g({r, c});
        as_mat(g, r, c) = as_mat(n.grad, c, r).transpose();
        n.parents[0]->accum_grad(g);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Value sum(const Value& x) {
    return make_node(Array({1}, {x->value.sum()}), {x}, "sum", [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Array g(n.parents[0]->value.shape);
        g.fill(n.grad[0]);
        n.parents[0]->accum_grad(g);
    });
}

inline Value sumsq(const Value& x) {
    double s = 0.0;
    for (double v : x->value.data) s += v * v;
    return make_node(Array({1}, {s}), {x}, "sumsq", [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Array& xin = n.parents[0]->value;
        Array g(xin.shape);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = 2.0 * xin[i] * n.grad[0];
        n.parents[0]->accum_grad(g);
    });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.shape[1] != b->value.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->value.shape) + " vs " +
                         shape_str(b->value.shape));
    std::size_t m = a->value.shape[0], k = a->value.shape[1], n_ = b->value.shape[1];
    Array out({m, n_});
    as_mat(out, m, n_).noalias() = as_mat(a->value, m, k) * as_mat(b->value, k, n_);
    return make_node(std::move(out), {a, b}, "matmul", [m, k, n_](Node& n) {
        auto g = as_mat(n.grad, m, n_);
        if (n.parents[0]->requires_grad) {
            Array da({m, k});
            as_mat(da, m, k).noalias() = g * as_mat(n.parents[1]->value, k, n_).transpose();
            n.parents[0]->accum_grad(da);
        }
        if (n.parents[1]->requires_grad) {
            Array db({k, n_});
            as_mat(db, k, n_).noalias() = as_mat(n.parents[0]->value, m, k).transpose() * g;
            n.parents[1]->accum_grad(db);
        }
    });
}

/// out[o,:,:] = M · x[o,:,:] for every leading slice: mixes axis 1 of a
/// (C×r×p) tensor with an (r×r)-shaped M (the endmember-axis mixer).
inline Value mix_axis1(const Value& M, const Value& x) {
    if (M->value.rank() != 2 || x->value.rank() != 3 || M->value.shape[1] != x->value.shape[1] ||
        M->value.shape[0] != M->value.shape[1])
        throw ShapeError("mix_axis1: incompatible shapes " + shape_str(M->value.shape) + " vs " +
                         shape_str(x->value.shape));
    std::size_t C = x->value.shape[0], r = x->value.shape[1], p = x->value.shape[2];
    Array out(x->value.shape);
    auto Mm = as_mat(M->value, r, r);
    for (std::size_t c = 0; c < C; ++c) {
        ECMap xs(x->value.data.data() + c * r * p, r, p);
        EMap os(out.data.data() + c * r * p, r, p);
        os.noalias() = Mm * xs;
    }
    return make_node(std::move(out), {M, x}, "mix_axis1", [C, r, p](Node& n) {
        auto Mm = as_mat(n.parents[0]->value, r, r);
        bool needM = n.parents[0]->requires_grad;
        bool needX = n.parents[1]->requires_grad;
        Array dM({r, r});
        Array dx(n.parents[1]->value.shape);
        auto dMm = as_mat(dM, r, r);
        for (std::size_t c = 0; c < C; ++c) {
            ECMap gs(n.grad.data.data() + c * r * p, r, p);
            ECMap xs(n.parents[1]->value.data.data() + c * r * p, r, p);
            if (needM) dMm.noalias() += gs * xs.transpose();
            if (needX) {
                EMap ds(dx.data.data() + c * r * p, r, p);
                ds.noalias() = Mm.transpose() * gs;
            }
        }
        if (needM) n.parents[0]->accum_grad(dM);
        if (needX) n.parents[1]->accum_grad(dx);
    });
}

/// out[o,h,w] = Σ_i M[o,i]·x[i,h,w]: a 1×1 mixer over the channel axis.
inline Value mix_axis0(const Value& M, const Value& x) {
    if (M->value.rank() != 2 || x->value.rank() != 3 || M->value.shape[1] != x->value.shape[0])
        throw ShapeError("mix_axis0: incompatible shapes " + shape_str(M->value.shape) + " vs " +
                         shape_str(x->value.shape));
    std::size_t Co = M->value.shape[0], Ci = M->value.shape[1];
    std::size_t hw = x->value.shape[1] * x->value.shape[2];
    Array out({Co, x->value.shape[1], x->value.shape[2]});
    as_mat(out, Co, hw).noalias() = as_mat(M->value, Co, Ci) * as_mat(x->value, Ci, hw);
    return make_node(std::move(out), {M, x}, "mix_axis0", [Co, Ci, hw](Node& n) {
        auto g = as_mat(n.grad, Co, hw);
        if (n.parents[0]->requires_grad) {
            Array dM({Co, Ci});
            as_mat(dM, Co, Ci).noalias() = g * as_mat(n.parents[1]->value, Ci, hw).transpose();
            n.parents[0]->accum_grad(dM);
        }
        if (n.parents[1]->requires_grad) {
            Array dx(n.parents[1]->value.shape);
            as_mat(dx, Ci, hw).noalias() =
                as_mat(n.parents[0]->value, Co, Ci).transpose() * g;
            n.parents[1]->accum_grad(dx);
        }
    });
}

// ---------------------------------------------------------------------------
// convolutions (cross-correlation, same zero padding, via im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_odd_kernel(std::size_t k, const char* who) {
    if (k % 2 == 0)
        throw ConfigError(std::string(who) + ": kernel size must be odd, got " +
                          std::to_string(k));
}

// Columns matrix for 1D conv: (Ci*k) × (R*P). Row order: (ci, dk).
inline Array im2col1d(const Array& x, std::size_t k) {
    std::size_t Ci = x.shape[0], R = x.shape[1], P = x.shape[2];
    std::size_t pad = (k - 1) / 2;
    Array col({Ci * k, R * P});
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t dk = 0; dk < k; ++dk) {
            double* dst = col.data.data() + (ci * k + dk) * (R * P);
            for (std::size_t r = 0; r < R; ++r) {
                const double* src = x.data.data() + (ci * R + r) * P;
                for (std::size_t t = 0; t < P; ++t) {
                    std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + dk) -
                                       static_cast<std::ptrdiff_t>(pad);
                    dst[r * P + t] =
                        (s >= 0 && s < static_cast<std::ptrdiff_t>(P)) ? src[s] : 0.0;
                }
            }
        }
    return col;
}

inline void col2im1d_accum(const Array& col, std::size_t k, Array& dx) {
    std::size_t Ci = dx.shape[0], R = dx.shape[1], P = dx.shape[2];
    std::size_t pad = (k - 1) / 2;
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t dk = 0; dk < k; ++dk) {
            const double* src = col.data.data() + (ci * k + dk) * (R * P);
            for (std::size_t r = 0; r < R; ++r) {
                double* dst = dx.data.data() + (ci * R + r) * P;
                for (std::size_t t = 0; t < P; ++t) {
                    std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + dk) -
                                       static_cast<std::ptrdiff_t>(pad);
                    if (s >= 0 && s < static_cast<std::ptrdiff_t>(P)) dst[s] += src[r * P + t];
                }
            }
        }
}

// Columns matrix for 2D conv: (Ci*k*k) × (H*W). Row order: (ci, dh, dw).
inline Array im2col2d(const Array& x, std::size_t k) {
    std::size_t Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
    std::size_t pad = (k - 1) / 2;
    Array col({Ci * k * k, H * W});
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t dh = 0; dh < k; ++dh)
            for (std::size_t dw = 0; dw < k; ++dw) {
                double* dst = col.data.data() + ((ci * k + dh) * k + dw) * (H * W);
                const double* src = x.data.data() + ci * H * W;
                for (std::size_t h = 0; h < H; ++h) {
                    std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dh) -
                                        static_cast<std::ptrdiff_t>(pad);
                    bool hin = sh >= 0 && sh < static_cast<std::ptrdiff_t>(H);
                    for (std::size_t w = 0; w < W; ++w) {
                        std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dw) -
                                            static_cast<std::ptrdiff_t>(pad);
                        dst[h * W + w] = (hin && sw >= 0 && sw < static_cast<std::ptrdiff_t>(W))
                                             ? src[sh * static_cast<std::ptrdiff_t>(W) + sw]
                                             : 0.0;
                    }
                }
            }
    return col;
}

inline void col2im2d_accum(const Array& col, std::size_t k, Array& dx) {
    std::size_t Ci = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    std::size_t pad = (k - 1) / 2;
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t dh = 0; dh < k; ++dh)
            for (std::size_t dw = 0; dw < k; ++dw) {
                const double* src = col.data.data() + ((ci * k + dh) * k + dw) * (H * W);
                double* dst = dx.data.data() + ci * H * W;
                for (std::size_t h = 0; h < H; ++h) {
                    std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dh) -
                                        static_cast<std::ptrdiff_t>(pad);
                    if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t w = 0; w < W; ++w) {
                        std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dw) -
                                            static_cast<std::ptrdiff_t>(pad);
                        if (sw >= 0 && sw < static_cast<std::ptrdiff_t>(W))
                            dst[sh * static_cast<std::ptrdiff_t>(W) + sw] += src[h * W + w];
                    }
                }
            }
}

} // namespace detail

/// 1D cross-correlation along the last axis, "same" zero padding, applied
/// independently per row of the middle axis. x: (Ci×R×P), kernels: (Co×Ci×k).
inline Value conv1d(const Value& x, const Value& kernels) {
    const Array& xv = x->value;
    const Array& kv = kernels->value;
    if (xv.rank() != 3 || kv.rank() != 3 || kv.shape[1] != xv.shape[0])
        throw ShapeError("conv1d: incompatible shapes " + shape_str(xv.shape) + " vs kernels " +
                         shape_str(kv.shape));
    std::size_t k = kv.shape[2];
    detail::check_odd_kernel(k, "conv1d");
    std::size_t Co = kv.shape[0], Ci = kv.shape[1], R = xv.shape[1], P = xv.shape[2];

    auto col = std::make_shared<Array>(detail::im2col1d(xv, k));
    Array out({Co, R, P});
    as_mat(out, Co, R * P).noalias() = as_mat(kv, Co, Ci * k) * as_mat(*col, Ci * k, R * P);
    return make_node(std::move(out), {x, kernels}, "conv1d", [col, k, Co, Ci, R, P](Node& n) {
        auto g = as_mat(n.grad, Co, R * P);
        if (n.parents[1]->requires_grad) {
            Array dk({Co, Ci, k});
            as_mat(dk, Co, Ci * k).noalias() = g * as_mat(*col, Ci * k, R * P).transpose();
            n.parents[1]->accum_grad(dk);
        }
        if (n.parents[0]->requires_grad) {
            Array dcol({Ci * k, R * P});
            as_mat(dcol, Ci * k, R * P).noalias() =
                as_mat(n.parents[1]->value, Co, Ci * k).transpose() * g;
            Array dx(n.parents[0]->value.shape);
            detail::col2im1d_accum(dcol, k, dx);
            n.parents[0]->accum_grad(dx);
        }
    });
}

/// 2D cross-correlation, "same" zero padding. x: (Ci×H×W), kernels: (Co×Ci×k×k).
inline Value conv2d(const Value& x, const Value& kernels) {
    const Array& xv = x->value;
    const Array& kv = kernels->value;
    if (xv.rank() != 3 || kv.rank() != 4 || kv.shape[1] != xv.shape[0] ||
        kv.shape[2] != kv.shape[3])
        throw ShapeError("conv2d: incompatible shapes " + shape_str(xv.shape) + " vs kernels " +
                         shape_str(kv.shape));
    std::size_t k = kv.shape[2];
    detail::check_odd_kernel(k, "conv2d");
    std::size_t Co = kv.shape[0], Ci = kv.shape[1], H = xv.shape[1], W = xv.shape[2];

    auto col = std::make_shared<Array>(detail::im2col2d(xv, k));
    Array out({Co, H, W});
    as_mat(out, Co, H * W).noalias() =
        as_mat(kv, Co, Ci * k * k) * as_mat(*col, Ci * k * k, H * W);
    return make_node(std::move(out), {x, kernels}, "conv2d", [col, k, Co, Ci, H, W](Node& n) {
        auto g = as_mat(n.grad, Co, H * W);
        if (n.parents[1]->requires_grad) {
            Array dk({Co, Ci, k, k});
            as_mat(dk, Co, Ci * k * k).noalias() =
                g * as_mat(*col, Ci * k * k, H * W).transpose();
            n.parents[1]->accum_grad(dk);
        }
        if (n.parents[0]->requires_grad) {
            Array dcol({Ci * k * k, H * W});
            as_mat(dcol, Ci * k * k, H * W).noalias() =
                as_mat(n.parents[1]->value, Co, Ci * k * k).transpose() * g;
            Array dx(n.parents[0]->value.shape);
            detail::col2im2d_accum(dcol, k, dx);
            n.parents[0]->accum_grad(dx);
        }
    });
}

// Plain-array forward convolutions for code outside the graph (reference
// solvers, synth smoothing). Same conventions as the graph ops.
inline Array conv1d_plain(const Array& x, const Array& kernels) {
    auto xv = constant(x);
    auto kv = constant(kernels);
    return conv1d(xv, kv)->value;
}

inline Array conv2d_plain(const Array& x, const Array& kernels) {
    auto xv = constant(x);
    auto kv = constant(kernels);
    return conv2d(xv, kv)->value;
}

/// Adjoint of conv1d with respect to x: maps (Co×R×P) back to (Ci×R×P).
inline Array conv1d_adjoint(const Array& g, const Array& kernels) {
    std::size_t Co = kernels.shape[0], Ci = kernels.shape[1], k = kernels.shape[2];
    std::size_t R = g.shape[1], P = g.shape[2];
    Array dcol({Ci * k, R * P});
    as_mat(dcol, Ci * k, R * P).noalias() =
        as_mat(kernels, Co, Ci * k).transpose() * as_mat(g, Co, R * P);
    Array dx({Ci, R, P});
    detail::col2im1d_accum(dcol, k, dx);
    return dx;
}

/// Adjoint of conv2d with respect to x: maps (Co×H×W) back to (Ci×H×W).
inline Array conv2d_adjoint(const Array& g, const Array& kernels) {
    std::size_t Co = kernels.shape[0], Ci = kernels.shape[1], k = kernels.shape[2];
    std::size_t H = g.shape[1], W = g.shape[2];
    Array dcol({Ci * k * k, H * W});
    as_mat(dcol, Ci * k * k, H * W).noalias() =
        as_mat(kernels, Co, Ci * k * k).transpose() * as_mat(g, Co, H * W);
    Array dx({Ci, H, W});
    detail::col2im2d_accum(dcol, k, dx);
    return dx;
}

} // namespace mcu::graph
