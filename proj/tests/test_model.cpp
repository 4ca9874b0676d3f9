#include <catch2/catch_amalgamated.hpp>

#include "mcu/model.hpp"
#include "support/oracles.hpp"

using namespace mcu;

namespace {

Array product_ref(const Array& E, const Array& A) {
    std::size_t P = E.shape[0], R = E.shape[1], N = A.shape[1];
    Array Y({P, N});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < P; ++p) {
            double acc = 0.0;
            for (std::size_t r = 0; r < R; ++r) acc += E.at2(p, r) * A.at2(r, n);
            Y.at2(p, n) = acc;
        }
    return Y;
}

} // namespace

TEST_CASE("HsiCube layout round trip") {
    Rng rng(1, "cube");
    HsiCube c(3, 2, 4, rng.uniform_array({3, 2, 4}, 0.0, 1.0));
    REQUIRE(c.pixels() == 8);

    Array m = c.matrix();
    REQUIRE(m.shape == Shape{3, 8});
    // Pixel n = row*N2 + col.
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                REQUIRE(m.at2(p, i * 4 + j) == c.data.at3(p, i, j));

    HsiCube back = HsiCube::from_matrix(m, 2, 4);
    REQUIRE(back.data.data == c.data.data);

    REQUIRE_THROWS_AS(HsiCube(3, 2, 4, Array({3, 2, 5})), ShapeError);
    REQUIRE_THROWS_AS(HsiCube::from_matrix(m, 2, 5), ShapeError);
    REQUIRE_THROWS_AS(HsiCube::from_matrix(Array({2, 2, 2}), 2, 2), ShapeError);
}

TEST_CASE("matrix wrappers reject wrong ranks") {
    REQUIRE_THROWS_AS(EndmemberMatrix(Array({3})), ShapeError);
    REQUIRE_THROWS_AS(AbundanceMatrix(Array({2, 3, 4})), ShapeError);
    REQUIRE_THROWS_AS(AbundanceMatrix(Array({2, 6}), 2, 4), ShapeError);

    AbundanceMatrix a(Array({2, 8}), 2, 4);
    Array sp = a.spatial();
    REQUIRE(sp.shape == Shape{2, 2, 4});
    AbundanceMatrix flat(Array({2, 8}));
    REQUIRE_THROWS_AS(flat.spatial(), ShapeError);
}

TEST_CASE("lmm_forward trivial cases") {
    // R = 1, unit abundances: every pixel is the single signature.
    Array e({3, 1}, {0.2, 0.5, 0.9});
    EndmemberMatrix E(e);
    AbundanceMatrix A(Array::full({1, 4}, 1.0), 2, 2);
    HsiCube Y = lmm_forward(E, A);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t p = 0; p < 3; ++p) REQUIRE(Y.matrix().at2(p, n) == e.at2(p, 0));

    // E = I: the cube is the abundance matrix itself.
    Array id({3, 3});
    for (std::size_t i = 0; i < 3; ++i) id.at2(i, i) = 1.0;
    Rng rng(2, "lmm");
    Array Am = rng.uniform_array({3, 6}, 0.0, 1.0);
    HsiCube Y2 = lmm_forward(EndmemberMatrix(id), AbundanceMatrix(Am, 2, 3));
    REQUIRE(oracle::max_abs_diff(Y2.matrix(), Am) == 0.0);
}

TEST_CASE("lmm_forward equals the plain product exactly") {
    Rng rng(7, "lmm");
    Array Em = rng.uniform_array({5, 3}, 0.0, 1.0);
    Array Am = rng.uniform_array({3, 8}, 0.0, 1.0);
    HsiCube Y = lmm_forward(EndmemberMatrix(Em), AbundanceMatrix(Am, 2, 4));
    REQUIRE(oracle::max_abs_diff(Y.matrix(), product_ref(Em, Am)) == 0.0);

    // Bilinear: scaling E by c and A by 1/c leaves the product unchanged.
    double c = 3.7;
    Array Ec = Em, Ac = Am;
    for (double& v : Ec.data) v *= c;
    for (double& v : Ac.data) v /= c;
    HsiCube Y2 = lmm_forward(EndmemberMatrix(Ec), AbundanceMatrix(Ac, 2, 4));
    REQUIRE(oracle::max_abs_diff(Y.matrix(), Y2.matrix()) < 1e-12);

    REQUIRE_THROWS_AS(lmm_forward(EndmemberMatrix(Em), AbundanceMatrix(Array({4, 8}), 2, 4)),
                      ShapeError);
    REQUIRE_THROWS_AS(lmm_forward(EndmemberMatrix(Em), AbundanceMatrix(Am, 2, 3)), ShapeError);
    REQUIRE_THROWS_AS(lmm_forward(EndmemberMatrix(Em), AbundanceMatrix(Array({3, 8}))),
                      ShapeError);
}

TEST_CASE("validate_constraints") {
    Rng rng(5, "con");
    Array Em = rng.uniform_array({4, 3}, 0.0, 1.0);
    Array Am = rng.uniform_array({3, 5}, 0.1, 1.0);
    for (std::size_t n = 0; n < 5; ++n) {
        double s = 0.0;
        for (std::size_t r = 0; r < 3; ++r) s += Am.at2(r, n);
        for (std::size_t r = 0; r < 3; ++r) Am.at2(r, n) /= s;
    }
    EndmemberMatrix E(Em);
    AbundanceMatrix A(Am);

    auto rep = validate_constraints(E, A, 1e-6);
    REQUIRE(rep.ok());
    REQUIRE(rep.str() == "ok");

    SECTION("ASC violation magnitude") {
        Array bad = Am;
        for (std::size_t r = 0; r < 3; ++r) bad.at2(r, 2) *= 0.9;
        auto r2 = validate_constraints(E, AbundanceMatrix(bad), 1e-6);
        REQUIRE_FALSE(r2.ok());
        REQUIRE(r2.violations.size() == 1);
        REQUIRE(r2.violations[0].constraint == "ASC");
        REQUIRE(r2.violations[0].magnitude == Catch::Approx(0.1).epsilon(1e-9));
    }

    SECTION("tiny ENC dips below tolerance pass") {
        Array e2 = Em;
        e2.at2(0, 0) = -1e-9;
        REQUIRE(validate_constraints(EndmemberMatrix(e2), A, 1e-8).ok());
        REQUIRE_FALSE(validate_constraints(EndmemberMatrix(e2), A, 1e-10).ok());
    }

    SECTION("ANC violation") {
        Array bad = Am;
        bad.at2(1, 1) -= 0.5;
        bad.at2(0, 1) += 0.5; // keep the column sum intact
        auto r2 = validate_constraints(E, AbundanceMatrix(bad), 1e-6);
        REQUIRE_FALSE(r2.ok());
        REQUIRE(r2.violations.size() == 1);
        REQUIRE(r2.violations[0].constraint == "ANC");
        REQUIRE_FALSE(r2.str().empty());
    }
}
