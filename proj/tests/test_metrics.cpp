#include <catch2/catch_amalgamated.hpp>

#include "mcu/metrics.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace mcu;

namespace {

double angle_ref(const Array& X, const Array& Y, std::size_t cx, std::size_t cy) {
    std::size_t rows = X.shape[0];
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        dot += X.at2(i, cx) * Y.at2(i, cy);
        nx += X.at2(i, cx) * X.at2(i, cx);
        ny += Y.at2(i, cy) * Y.at2(i, cy);
    }
    double c = std::min(1.0, std::max(-1.0, dot / (std::sqrt(nx) * std::sqrt(ny))));
    return std::acos(c) * 180.0 / 3.14159265358979323846;
}

} // namespace

TEST_CASE("column_angle_deg basics") {
    Array X({2, 2}, {1.0, 0.0, 0.0, 1.0});
    REQUIRE(column_angle_deg(X, X, 0, 1) == Catch::Approx(90.0).epsilon(1e-12));

    Array Y({2, 2}, {-1.0, 0.0, 0.0, 2.0});
    REQUIRE(column_angle_deg(X, Y, 0, 0) == Catch::Approx(180.0).epsilon(1e-12));
    REQUIRE(column_angle_deg(X, Y, 1, 1) == Catch::Approx(0.0).margin(1e-6));

    Array Z({2, 2}, {0.0, 1.0, 0.0, 1.0});
    REQUIRE(column_angle_deg(X, Z, 0, 0) == -1.0); // zero-norm sentinel
}

TEST_CASE("column_angle_deg clamps rounded-up cosines to zero angle") {
    // Identical columns can yield dot/(|a||b|) a hair above 1; the clamp must
    // turn that into exactly 0 degrees, never NaN.
    Rng rng(31, "clamp");
    bool found_overshoot = false;
    for (int trial = 0; trial < 1000 && !found_overshoot; ++trial) {
        Array v = rng.uniform_array({5, 1}, 0.1, 1.0);
        double dot = 0.0, nx = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            dot += v.at2(i, 0) * v.at2(i, 0);
            nx += v.at2(i, 0) * v.at2(i, 0);
        }
        double c = dot / (std::sqrt(nx) * std::sqrt(nx));
        double a = column_angle_deg(v, v, 0, 0);
        REQUIRE(std::isfinite(a));
        REQUIRE(a >= 0.0);
        REQUIRE(a < 1e-5);
        if (c > 1.0) {
            found_overshoot = true;
            REQUIRE(a == 0.0);
        }
    }
    REQUIRE(found_overshoot);
}

TEST_CASE("rmse") {
    Rng rng(1, "rmse");
    Array Am = rng.uniform_array({3, 6}, 0.0, 1.0);
    AbundanceMatrix A(Am);
    REQUIRE(rmse(A, A) == 0.0);

    AbundanceMatrix g(Array({2, 1}, {1.0, 0.0}));
    AbundanceMatrix e(Array({2, 1}, {0.0, 1.0}));
    REQUIRE(rmse(g, e) == Catch::Approx(1.0).epsilon(1e-12));

    Array Bm = rng.uniform_array({3, 6}, 0.0, 1.0);
    double ref = 0.0;
    for (std::size_t n = 0; n < 6; ++n) {
        double s = 0.0;
        for (std::size_t r = 0; r < 3; ++r) {
            double d = Am.at2(r, n) - Bm.at2(r, n);
            s += d * d;
        }
        ref += std::sqrt(s / 3.0);
    }
    ref /= 6.0;
    REQUIRE(rmse(A, AbundanceMatrix(Bm)) == Catch::Approx(ref).epsilon(1e-12));

    REQUIRE_THROWS_AS(rmse(A, AbundanceMatrix(Array({2, 6}))), ShapeError);
}

TEST_CASE("aad") {
    Rng rng(2, "aad");
    Array Am = rng.uniform_array({3, 5}, 0.1, 1.0);
    AbundanceMatrix A(Am);

    // Positive per-pixel rescaling is invisible to the angle.
    Array Bm = Am;
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t r = 0; r < 3; ++r) Bm.at2(r, n) *= 0.3 + 0.2 * double(n);
    auto res = aad(A, AbundanceMatrix(Bm));
    REQUIRE(res.skipped == 0);
    REQUIRE(res.mean_deg < 1e-6);

    // One orthogonal pixel out of two -> mean 45 degrees.
    AbundanceMatrix g2(Array({2, 2}, {1.0, 1.0, 0.0, 0.0}));
    AbundanceMatrix e2(Array({2, 2}, {0.0, 1.0, 1.0, 0.0}));
    auto res2 = aad(g2, e2);
    REQUIRE(res2.mean_deg == Catch::Approx(45.0).epsilon(1e-12));

    // Zero-norm estimate pixel is skipped, not averaged.
    AbundanceMatrix e3(Array({2, 2}, {0.0, 1.0, 0.0, 0.0}));
    auto res3 = aad(g2, e3);
    REQUIRE(res3.skipped == 1);
    REQUIRE(res3.mean_deg == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("sad") {
    Array Em({3, 2}, {0.1, 0.4, 0.5, 0.2, 0.9, 0.3});
    EndmemberMatrix E(Em);

    Array doubled = Em;
    for (double& v : doubled.data) v *= 2.0;
    auto res = sad(E, EndmemberMatrix(doubled));
    REQUIRE(res.mean_deg < 1e-6);
    REQUIRE(res.per_endmember.size() == 2);
    REQUIRE(res.skipped == 0);

    EndmemberMatrix g(Array({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    EndmemberMatrix e(Array({2, 2}, {0.0, 1.0, 1.0, 0.0}));
    auto res2 = sad(g, e);
    REQUIRE(res2.per_endmember[0] == Catch::Approx(90.0).epsilon(1e-12));
    REQUIRE(res2.per_endmember[1] == Catch::Approx(90.0).epsilon(1e-12));
    REQUIRE(res2.mean_deg == Catch::Approx(90.0).epsilon(1e-12));

    // Zero column: NaN marker plus skip count, mean over the rest.
    EndmemberMatrix e3(Array({2, 2}, {0.0, 1.0, 0.0, 0.0}));
    auto res3 = sad(g, e3);
    REQUIRE(std::isnan(res3.per_endmember[0]));
    REQUIRE(res3.skipped == 1);
    REQUIRE(res3.mean_deg == Catch::Approx(90.0).epsilon(1e-12));
}

TEST_CASE("alignment undoes a column permutation") {
    Rng rng(3, "align");
    Array Em = rng.uniform_array({6, 4}, 0.1, 1.0);
    Array Am = rng.uniform_array({4, 7}, 0.0, 1.0);

    std::vector<std::size_t> q = {2, 0, 3, 1}; // est col c = gt col q[c]
    Array Ep({6, 4}), Ap({4, 7});
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t p = 0; p < 6; ++p) Ep.at2(p, c) = Em.at2(p, q[c]);
        for (std::size_t n = 0; n < 7; ++n) Ap.at2(c, n) = Am.at2(q[c], n);
    }

    EndmemberMatrix gt(Em), est(Ep);
    AbundanceMatrix gtA(Am), estA(Ap);
    auto perm = align_permutation(gt, est);
    apply_alignment(perm, est, estA);
    REQUIRE(oracle::max_abs_diff(est.E, Em) == 0.0);
    REQUIRE(oracle::max_abs_diff(estA.A, Am) == 0.0);

    REQUIRE(align_permutation(gt, gt) == std::vector<std::size_t>{0, 1, 2, 3});
    REQUIRE_THROWS_AS(align_permutation(gt, EndmemberMatrix(Array({6, 3}))), ShapeError);
    REQUIRE_THROWS_AS(apply_alignment({0, 1}, est, estA), ShapeError);
}

TEST_CASE("alignment is optimal against exhaustive search") {
    Rng rng(4, "opt");
    for (int trial = 0; trial < 5; ++trial) {
        Array Eg = rng.uniform_array({5, 4}, 0.05, 1.0);
        Array Ee = rng.uniform_array({5, 4}, 0.05, 1.0);
        EndmemberMatrix gt(Eg), est(Ee);
        auto perm = align_permutation(gt, est);

        Array cost({4, 4});
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) cost.at2(r, c) = angle_ref(Eg, Ee, r, c);
        auto [best, bperm] = oracle::min_assignment(cost);
        double total = 0.0;
        for (std::size_t r = 0; r < 4; ++r) total += cost.at2(r, perm[r]);
        REQUIRE(total == Catch::Approx(best).margin(1e-9));
    }
}

TEST_CASE("hungarian path agrees with brute force at R=9") {
    Rng rng(5, "hung");
    Array Eg = rng.uniform_array({6, 9}, 0.05, 1.0);
    Array Ee = rng.uniform_array({6, 9}, 0.05, 1.0);
    EndmemberMatrix gt(Eg), est(Ee);
    auto perm = align_permutation(gt, est); // R > 8 takes the O(n^3) route

    Array cost({9, 9});
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t c = 0; c < 9; ++c) cost.at2(r, c) = angle_ref(Eg, Ee, r, c);
    auto [best, bperm] = oracle::min_assignment(cost);
    double total = 0.0;
    for (std::size_t r = 0; r < 9; ++r) total += cost.at2(r, perm[r]);
    REQUIRE(total == Catch::Approx(best).margin(1e-9));
}

TEST_CASE("alignment with a single endmember") {
    EndmemberMatrix gt(Array({3, 1}, {1.0, 2.0, 3.0}));
    EndmemberMatrix est(Array({3, 1}, {2.0, 4.0, 6.0}));
    REQUIRE(align_permutation(gt, est) == std::vector<std::size_t>{0});
}

TEST_CASE("zero-norm estimate columns cost 180 in the assignment") {
    // The zero column must absorb the worst pairing instead of poisoning all.
    Array Eg({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Array Ee({2, 2}, {0.0, 1.0, 0.0, 0.0}); // col 0 = zero, col 1 = e1
    auto perm = align_permutation(EndmemberMatrix(Eg), EndmemberMatrix(Ee));
    // gt col 0 matches est col 1 (angle 0); gt col 1 absorbs the zero column.
    REQUIRE(perm == std::vector<std::size_t>{1, 0});
}

TEST_CASE("evaluate_aligned on ground truth is all zeros") {
    Rng rng(6, "eval");
    Array Em = rng.uniform_array({5, 3}, 0.1, 1.0);
    Array Am = rng.uniform_array({3, 8}, 0.1, 1.0);
    EndmemberMatrix E(Em);
    AbundanceMatrix A(Am);
    auto rep = evaluate_aligned(E, A, E, A);
    REQUIRE(rep.rmse_val == 0.0);
    REQUIRE(rep.aad_deg < 1e-6);
    REQUIRE(rep.sad_res.mean_deg < 1e-6);
    REQUIRE(rep.aad_skipped == 0);
}
