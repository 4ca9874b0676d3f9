#pragma once

#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "mcu/model.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// Convolutional dictionaries
// ---------------------------------------------------------------------------

/// m 1D kernels of odd length k, applied along the spectral axis.
struct ConvDictionary1D {
    Array kernels; // (m, k)

    explicit ConvDictionary1D(Array ks) : kernels(std::move(ks)) {
        if (kernels.rank() != 2)
            throw ShapeError("ConvDictionary1D: want (m,k), got " + shape_str(kernels.shape));
        if (kernels.shape[1] % 2 == 0)
            throw ConfigError("ConvDictionary1D: kernel size must be odd");
    }
    std::size_t m() const { return kernels.shape[0]; }
    std::size_t k() const { return kernels.shape[1]; }

    /// Kernels laid out for conv1d: (1, m, k), summing code channels into one.
    Array as_conv_kernels() const { return Array({1, m(), k()}, kernels.data); }

    /// Single delta kernel: the identity dictionary.
    static ConvDictionary1D delta(std::size_t k = 1) {
        Array ks({1, k});
        ks.data[(k - 1) / 2] = 1.0;
        return ConvDictionary1D(std::move(ks));
    }
};

/// m 2D kernels of odd size k×k, applied over the spatial axes.
struct ConvDictionary2D {
    Array kernels; // (m, k, k)

    explicit ConvDictionary2D(Array ks) : kernels(std::move(ks)) {
        if (kernels.rank() != 3 || kernels.shape[1] != kernels.shape[2])
            throw ShapeError("ConvDictionary2D: want (m,k,k), got " + shape_str(kernels.shape));
        if (kernels.shape[1] % 2 == 0)
            throw ConfigError("ConvDictionary2D: kernel size must be odd");
    }
    std::size_t m() const { return kernels.shape[0]; }
    std::size_t k() const { return kernels.shape[1]; }

    Array as_conv_kernels() const { return Array({1, m(), k(), k()}, kernels.data); }

    static ConvDictionary2D delta(std::size_t k = 1) {
        Array ks({1, k, k});
        ks.data[((k - 1) / 2) * k + (k - 1) / 2] = 1.0;
        return ConvDictionary2D(std::move(ks));
    }
};

/// D∗Γ for a (m×R×P) spectral code: returns (R×P).
inline Array dict_apply(const ConvDictionary1D& D, const Array& gamma) {
    if (gamma.rank() != 3 || gamma.shape[0] != D.m())
        throw ShapeError("dict_apply: code shape " + shape_str(gamma.shape) +
                         " does not match dictionary m=" + std::to_string(D.m()));
    Array out3 = graph::conv1d_plain(gamma, D.as_conv_kernels()); // (1,R,P)
    return Array({gamma.shape[1], gamma.shape[2]}, std::move(out3.data));
}

/// Adjoint: (R×P) -> (m×R×P).
inline Array dict_adjoint(const ConvDictionary1D& D, const Array& s) {
    Array g({1, s.shape[0], s.shape[1]}, s.data);
    return graph::conv1d_adjoint(g, D.as_conv_kernels());
}

/// D∗Γ for a (m×R×N1×N2) spatial code: returns (R×N1×N2).
inline Array dict_apply(const ConvDictionary2D& D, const Array& gamma) {
    if (gamma.rank() != 4 || gamma.shape[0] != D.m())
        throw ShapeError("dict_apply: code shape " + shape_str(gamma.shape) +
                         " does not match dictionary m=" + std::to_string(D.m()));
    std::size_t m = gamma.shape[0], R = gamma.shape[1], H = gamma.shape[2], W = gamma.shape[3];
    Array out({R, H, W});
    Array slice({m, H, W});
    Array kern = D.as_conv_kernels();
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(gamma.data.data() + (i * R + r) * H * W, H * W,
                        slice.data.data() + i * H * W);
        Array o = graph::conv2d_plain(slice, kern); // (1,H,W)
        std::copy_n(o.data.data(), H * W, out.data.data() + r * H * W);
    }
    return out;
}

/// Adjoint: (R×N1×N2) -> (m×R×N1×N2).
inline Array dict_adjoint(const ConvDictionary2D& D, const Array& t) {
    std::size_t R = t.shape[0], H = t.shape[1], W = t.shape[2], m = D.m();
    Array out({m, R, H, W});
    Array kern = D.as_conv_kernels();
    for (std::size_t r = 0; r < R; ++r) {
        Array g({1, H, W});
        std::copy_n(t.data.data() + r * H * W, H * W, g.data.data());
        Array dx = graph::conv2d_adjoint(g, kern); // (m,H,W)
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(dx.data.data() + i * H * W, H * W,
                        out.data.data() + (i * R + r) * H * W);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense operators (oracle scale only)
// ---------------------------------------------------------------------------

namespace detail {
inline void dense_size_guard(std::size_t rows, std::size_t cols) {
    if (rows * cols > 1000000)
        throw ConfigError("dense_operator: refusing " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " (> 1e6 entries); reduce m or the signal size");
}
} // namespace detail

/// Explicit (P × m·P) matrix M with M·vec(Γ_slice) == D∗Γ_slice for one
/// spectral row; vec order is row-major over (m, P).
inline Array dense_operator(const ConvDictionary1D& D, std::size_t P) {
    std::size_t m = D.m(), k = D.k(), pad = (k - 1) / 2;
    detail::dense_size_guard(P, m * P);
    Array M({P, m * P});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < P; ++t)
            for (std::size_t dk = 0; dk < k; ++dk) {
                std::ptrdiff_t s =
                    static_cast<std::ptrdiff_t>(t + dk) - static_cast<std::ptrdiff_t>(pad);
                if (s >= 0 && s < static_cast<std::ptrdiff_t>(P))
                    M.at2(t, i * P + static_cast<std::size_t>(s)) += D.kernels.at2(i, dk);
            }
    return M;
}

/// Explicit (N1·N2 × m·N1·N2) matrix, vec order row-major over (m, N1, N2).
inline Array dense_operator(const ConvDictionary2D& D, std::size_t N1, std::size_t N2) {
    std::size_t m = D.m(), k = D.k(), pad = (k - 1) / 2, N = N1 * N2;
    detail::dense_size_guard(N, m * N);
    Array M({N, m * N});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t h = 0; h < N1; ++h)
            for (std::size_t w = 0; w < N2; ++w)
                for (std::size_t dh = 0; dh < k; ++dh)
                    for (std::size_t dw = 0; dw < k; ++dw) {
                        std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dh) -
                                            static_cast<std::ptrdiff_t>(pad);
                        std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dw) -
                                            static_cast<std::ptrdiff_t>(pad);
                        if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(N1) || sw < 0 ||
                            sw >= static_cast<std::ptrdiff_t>(N2))
                            continue;
                        M.at2(h * N2 + w,
                              i * N + static_cast<std::size_t>(sh) * N2 +
                                  static_cast<std::size_t>(sw)) += D.kernels.at3(i, dh, dw);
                    }
    return M;
}

// ---------------------------------------------------------------------------
// ADMM solvers
// ---------------------------------------------------------------------------

struct AdmmState {
    Array gamma, omega, u;
    std::size_t iteration = 0;
};

struct AdmmEeResult {
    AdmmState state;
    EndmemberMatrix E_hat;
    std::vector<double> primal_residual; // ‖Γ−Ω‖_F per iteration
    double L = 0.0;
};

struct AdmmAeResult {
    AdmmState state;
    AbundanceMatrix A_hat;
    std::vector<double> primal_residual;
    double L = 0.0;
};

namespace detail {

using EColMat = Eigen::MatrixXd;

/// Solves (Gram ⊗ DᵀD + ρI) X = RHS where Gram is the small R×R data Gram
/// matrix mixing the r axis and DᵀD acts on each flattened (m × spatial)
/// slice. Exact via eigendecomposition of Gram plus one Cholesky per
/// eigenvalue.
class KronNormalSolver {
public:
    KronNormalSolver(const EColMat& gram, const Array& D_mat, double rho) : rho_(rho) {
        Eigen::SelfAdjointEigenSolver<EColMat> eig(gram);
        if (eig.info() != Eigen::Success)
            throw NumericError("admm: eigendecomposition of the data Gram matrix failed");
        U_ = eig.eigenvectors();
        evals_ = eig.eigenvalues();

        std::size_t n = D_mat.shape[1];
        if (n * n > 100000000)
            throw ConfigError("admm: normal matrix would need " + std::to_string(n) + "^2 "
                              "entries; reduce the dictionary size or image size");
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            Dm(D_mat.data.data(), static_cast<Eigen::Index>(D_mat.shape[0]),
               static_cast<Eigen::Index>(n));
        EColMat G = Dm.transpose() * Dm;

        llts_.reserve(static_cast<std::size_t>(evals_.size()));
        for (Eigen::Index r = 0; r < evals_.size(); ++r) {
            EColMat M = evals_[r] * G;
            M.diagonal().array() += rho_;
            auto llt = std::make_unique<Eigen::LLT<EColMat>>(M);
            if (llt->info() != Eigen::Success)
                throw NumericError("admm: normal matrix not SPD despite rho>0");
            llts_.push_back(std::move(llt));
        }
    }

    /// rhs shape: (m, R, spatial...); solves in place of a copy.
    Array solve(const Array& rhs, std::size_t R, std::size_t slice_len) const {
        // Rotate the r axis by Uᵀ, solve per eigenvalue, rotate back.
        Array out(rhs.shape);
        std::size_t m_sp = rhs.numel() / R; // m * spatial
        std::size_t m = rhs.shape[0];
        EColMat tilde(static_cast<Eigen::Index>(m_sp), static_cast<Eigen::Index>(R));
        // gather: tilde[:, r] = vec(rhs[:, r, :])
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t s = 0; s < slice_len; ++s)
                    tilde(static_cast<Eigen::Index>(i * slice_len + s),
                          static_cast<Eigen::Index>(r)) =
                        rhs.data[(i * R + r) * slice_len + s];
        tilde = tilde * U_; // columns now indexed by eigenvalue
        for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(R); ++r)
            tilde.col(r) = llts_[static_cast<std::size_t>(r)]->solve(tilde.col(r));
        tilde = tilde * U_.transpose();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t s = 0; s < slice_len; ++s)
                    out.data[(i * R + r) * slice_len + s] =
                        tilde(static_cast<Eigen::Index>(i * slice_len + s),
                              static_cast<Eigen::Index>(r));
        return out;
    }

private:
    double rho_;
    EColMat U_;
    Eigen::VectorXd evals_;
    std::vector<std::unique_ptr<Eigen::LLT<EColMat>>> llts_;
};

inline void admm_check_scalars(double lambda, double rho, double L) {
    if (lambda < 0.0) throw ConfigError("admm: lambda must be >= 0");
    if (rho <= 0.0) throw ConfigError("admm: rho must be > 0");
    if (L < 0.0) throw ConfigError("admm: L must be > 0, or 0 for the power-iteration default");
}

} // namespace detail

/// Largest eigenvalue of the fidelity normal operator, estimated with 50
/// power iterations from a deterministic all-ones start.
template <typename NormalOp>
double power_iteration_L(const Shape& shape, NormalOp&& op) {
    Array v = Array::full(shape, 1.0);
    double nv = v.frob_norm();
    for (double& x : v.data) x /= nv;
    double lam = 0.0;
    for (int it = 0; it < 50; ++it) {
        Array w = op(v);
        lam = w.frob_norm();
        if (lam <= 0.0) throw NumericError("admm: power iteration collapsed to zero");
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] = w[i] / lam;
    }
    return lam;
}

/// Reference solver for the endmember model: minimizes
/// ½‖Y − (D∗Γ)ᵀA‖_F² + λ‖Γ‖₁ by ADMM splitting Γ=Ω with dual u, all
/// zero-initialized. Pass L=0 to use the power-iteration default.
inline AdmmEeResult admm_ee(const HsiCube& Y, const AbundanceMatrix& A,
                            const ConvDictionary1D& D, double lambda, double rho, double L,
                            std::size_t iters) {
    detail::admm_check_scalars(lambda, rho, L);
    std::size_t P = Y.P, N = Y.pixels(), R = A.count(), m = D.m();
    if (A.pixels() != N)
        throw ShapeError("admm_ee: A has " + std::to_string(A.pixels()) + " pixels, cube has " +
                         std::to_string(N));

    Array Ym = Y.matrix();
    auto Am = graph::as_mat(A.A, R, N);
    detail::EColMat gram = (Am * Am.transpose()).eval().cast<double>();
    Array D_mat = dense_operator(D, P);
    detail::KronNormalSolver solver(gram, D_mat, rho);

    // rhs data term: D^adj(A·Yᵀ), fixed across iterations.
    Array AYt({R, P});
    graph::as_mat(AYt, R, P).noalias() = Am * graph::as_mat(Ym, P, N).transpose();
    Array data_term = dict_adjoint(D, AYt); // (m,R,P)

    auto normal_op = [&](const Array& g) {
        Array s = dict_apply(D, g); // (R,P)
        Array gs({R, P});
        graph::as_mat(gs, R, P).noalias() = gram * graph::as_mat(s, R, P);
        return dict_adjoint(D, gs);
    };
    if (L == 0.0) L = power_iteration_L(Shape{m, R, P}, normal_op);

    AdmmEeResult res;
    res.L = L;
    res.state.gamma = Array({m, R, P});
    res.state.omega = Array({m, R, P});
    res.state.u = Array({m, R, P});
    Array& gamma = res.state.gamma;
    Array& omega = res.state.omega;
    Array& u = res.state.u;

    for (std::size_t j = 0; j < iters; ++j) {
        Array rhs = data_term;
        for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] += rho * (gamma[i] + u[i]);
        omega = solver.solve(rhs, R, P);

        double a = 1.0 - rho / L, b = rho / L, thr = lambda / L;
        double resid = 0.0;
        for (std::size_t i = 0; i < gamma.numel(); ++i) {
            double t = a * gamma[i] + b * (omega[i] - u[i]);
            double mag = std::abs(t) - thr;
            gamma[i] = mag > 0.0 ? (t > 0.0 ? mag : -mag) : 0.0;
            double d = gamma[i] - omega[i];
            u[i] += d;
            resid += d * d;
        }
        res.primal_residual.push_back(std::sqrt(resid));
        res.state.iteration = j + 1;
    }

    Array Et = dict_apply(D, gamma); // (R,P)
    Array E({P, R});
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t r = 0; r < R; ++r) E.at2(p, r) = std::max(Et.at2(r, p), 0.0);
    res.E_hat = EndmemberMatrix(std::move(E));
    return res;
}

/// Reference solver for the abundance model: minimizes
/// ½‖Y − E(D∗Γ)‖_F² + λ‖Γ‖₁ s.t. Γ ≥ 0, by ADMM with the thresholded update
/// projected onto the nonnegative orthant each iteration.
inline AdmmAeResult admm_ae(const HsiCube& Y, const EndmemberMatrix& E,
                            const ConvDictionary2D& D, double lambda, double rho, double L,
                            std::size_t iters) {
    detail::admm_check_scalars(lambda, rho, L);
    std::size_t P = Y.P, N1 = Y.N1, N2 = Y.N2, N = N1 * N2, R = E.count(), m = D.m();
    if (E.bands() != P)
        throw ShapeError("admm_ae: E has " + std::to_string(E.bands()) + " bands, cube has " +
                         std::to_string(P));

    Array Ym = Y.matrix();
    auto Em = graph::as_mat(E.E, P, R);
    detail::EColMat gram = (Em.transpose() * Em).eval().cast<double>();
    Array D_mat = dense_operator(D, N1, N2);
    detail::KronNormalSolver solver(gram, D_mat, rho);

    Array EtY({R, N});
    graph::as_mat(EtY, R, N).noalias() = Em.transpose() * graph::as_mat(Ym, P, N);
    Array data_term = dict_adjoint(D, Array({R, N1, N2}, EtY.data)); // (m,R,N1,N2)

    auto normal_op = [&](const Array& g) {
        Array s = dict_apply(D, g); // (R,N1,N2)
        Array gs({R, N1, N2});
        graph::as_mat(gs, R, N).noalias() = gram * graph::as_mat(s, R, N);
        return dict_adjoint(D, gs);
    };
    if (L == 0.0) L = power_iteration_L(Shape{m, R, N1, N2}, normal_op);

    AdmmAeResult res;
    res.L = L;
    res.state.gamma = Array({m, R, N1, N2});
    res.state.omega = Array({m, R, N1, N2});
    res.state.u = Array({m, R, N1, N2});
    Array& gamma = res.state.gamma;
    Array& omega = res.state.omega;
    Array& u = res.state.u;

    for (std::size_t j = 0; j < iters; ++j) {
        Array rhs = data_term;
        for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] += rho * (gamma[i] + u[i]);
        omega = solver.solve(rhs, R, N);

        double a = 1.0 - rho / L, b = rho / L, thr = lambda / L;
        double resid = 0.0;
        for (std::size_t i = 0; i < gamma.numel(); ++i) {
            double t = a * gamma[i] + b * (omega[i] - u[i]);
            double mag = std::abs(t) - thr;
            double soft = mag > 0.0 ? (t > 0.0 ? mag : -mag) : 0.0;
            gamma[i] = soft > 0.0 ? soft : 0.0;
            double d = gamma[i] - omega[i];
            u[i] += d;
            resid += d * d;
        }
        res.primal_residual.push_back(std::sqrt(resid));
        res.state.iteration = j + 1;
    }

    Array Ahat3 = dict_apply(D, gamma); // (R,N1,N2)
    res.A_hat = AbundanceMatrix(Array({R, N}, std::move(Ahat3.data)), N1, N2);
    return res;
}

/// Objective ½‖Y − (D∗Γ)ᵀA‖² + λ‖Γ‖₁ evaluated at a code (test/diagnostic use).
inline double ee_objective(const HsiCube& Y, const AbundanceMatrix& A, const ConvDictionary1D& D,
                           double lambda, const Array& gamma) {
    std::size_t P = Y.P, N = Y.pixels(), R = A.count();
    Array Et = dict_apply(D, gamma); // (R,P)
    Array Ym = Y.matrix();
    double fid = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t n = 0; n < N; ++n) {
            double pred = 0.0;
            for (std::size_t r = 0; r < R; ++r) pred += Et.at2(r, p) * A.A.at2(r, n);
            double d = Ym.at2(p, n) - pred;
            fid += d * d;
        }
    double l1 = 0.0;
    for (double v : gamma.data) l1 += std::abs(v);
    return 0.5 * fid + lambda * l1;
}

/// Objective ½‖Y − E(D∗Γ)‖² + λ‖Γ‖₁ (Γ ≥ 0 is the caller's invariant).
inline double ae_objective(const HsiCube& Y, const EndmemberMatrix& E, const ConvDictionary2D& D,
                           double lambda, const Array& gamma) {
    std::size_t P = Y.P, N = Y.pixels(), R = E.count();
    Array A3 = dict_apply(D, gamma); // (R,N1,N2)
    Array Ym = Y.matrix();
    double fid = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t n = 0; n < N; ++n) {
            double pred = 0.0;
            for (std::size_t r = 0; r < R; ++r) pred += E.E.at2(p, r) * A3.data[r * N + n];
            double d = Ym.at2(p, n) - pred;
            fid += d * d;
        }
    double l1 = 0.0;
    for (double v : gamma.data) l1 += std::abs(v);
    return 0.5 * fid + lambda * l1;
}

} // namespace mcu
