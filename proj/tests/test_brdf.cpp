#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace dispir;

namespace {

CookTorranceParams glossy(double d, double s, double r) {
    CookTorranceParams p;
    p.diffuse = Rgb(d, 0.5 * d, 0.25 * d);
    p.specular = Rgb::Constant(s);
    p.roughness = Rgb(r, r * 0.8, r * 1.2);
    return p;
}

} // namespace

TEST(CookTorrance, DiffuseOnlyIgnoresGeometry) {
    std::mt19937_64 rng(1);
    CookTorranceParams p;
    p.diffuse = Rgb(0.2, 0.3, 0.4);
    for (int k = 0; k < 200; ++k) {
        const Vec3 n = oracle::random_unit(rng);
        const Vec3 i = oracle::random_hemisphere(rng, n, 0.0);
        const Vec3 o = oracle::random_hemisphere(rng, n, 0.0);
        EXPECT_TRUE((eval_cook_torrance(p, i, o, n) == p.diffuse).all());
    }
}

TEST(CookTorrance, NormalIncidenceMatchesStandaloneFormula) {
    CookTorranceParams p;
    p.specular = Rgb::Ones();
    p.roughness = Rgb::Constant(0.3);
    const Vec3 n(0, 0, 1);
    // Hand transcription: alpha = sigma^2, D(h = n) = 1 / (pi alpha^2),
    // F(0 deg) = F0, G = 1, denominator 4.
    const double alpha = 0.3 * 0.3;
    const double D = 1.0 / (kPi * alpha * alpha);
    const double expected = D * 0.04 * 1.0 / 4.0;
    const Rgb f = eval_cook_torrance(p, n, n, n);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(f[c], expected, 1e-12 * expected);
}

TEST(CookTorrance, ReciprocityOverRandomSamples) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 10000; ++k) {
        const CookTorranceParams p = glossy(u(rng), u(rng), 0.05 + 0.95 * u(rng));
        const Vec3 n = oracle::random_unit(rng);
        const Vec3 i = oracle::random_hemisphere(rng, n, 0.01);
        const Vec3 o = oracle::random_hemisphere(rng, n, 0.01);
        const Rgb a = eval_cook_torrance(p, i, o, n), b = eval_cook_torrance(p, o, i, n);
        for (int c = 0; c < 3; ++c) ASSERT_NEAR(a[c], b[c], 1e-6 * std::max(1.0, std::abs(a[c])));
    }
}

TEST(CookTorrance, NonNegative) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 5000; ++k) {
        const CookTorranceParams p = glossy(u(rng), u(rng), 0.001 + u(rng));
        const Vec3 n = oracle::random_unit(rng);
        const Rgb f = eval_cook_torrance(p, oracle::random_unit(rng), oracle::random_unit(rng), n);
        ASSERT_TRUE((f >= 0.0).all());
    }
}

TEST(CookTorrance, BackfacingReturnsDiffuseAndFlags) {
    const CookTorranceParams p = glossy(0.3, 0.8, 0.2);
    const Vec3 n(0, 0, 1);
    bool back = false;
    const Rgb f = eval_cook_torrance(p, Vec3(0, 0, -1), n, n, &back);
    EXPECT_TRUE(back);
    EXPECT_TRUE((f == p.diffuse).all());
}

TEST(CookTorrance, RoughnessClampedBelow) {
    CookTorranceParams p = glossy(0.1, 0.5, 0.0);
    p.roughness = Rgb::Constant(-1.0);
    p.clamp();
    EXPECT_TRUE((p.roughness >= kMinRoughness).all());
}

TEST(EvalBasis, SingleBasisAndOneHotMatchDirectEvaluation) {
    std::mt19937_64 rng(4);
    BasisBrdfSet set{{glossy(0.2, 0.4, 0.3), glossy(0.6, 0.1, 0.7), glossy(0.1, 0.9, 0.15)}};
    BasisBrdfSet one{{set.bases[1]}};
    for (int k = 0; k < 100; ++k) {
        const Vec3 n = oracle::random_unit(rng);
        const Vec3 i = oracle::random_hemisphere(rng, n, 0.05);
        const Vec3 o = oracle::random_hemisphere(rng, n, 0.05);
        const std::vector<double> w1{1.0};
        EXPECT_TRUE((eval_basis(one, w1, i, o, n) == eval_cook_torrance(one.bases[0], i, o, n)).all());
        for (size_t j = 0; j < 3; ++j) {
            std::vector<double> e(3, 0.0);
            e[j] = 1.0;
            EXPECT_TRUE((eval_basis(set, e, i, o, n) == eval_cook_torrance(set.bases[j], i, o, n)).all());
        }
    }
}

TEST(EvalBasis, EqualMixIsArithmeticMean) {
    std::mt19937_64 rng(5);
    BasisBrdfSet set{{glossy(0.2, 0.4, 0.3), glossy(0.6, 0.1, 0.7)}};
    const std::vector<double> w{0.5, 0.5};
    for (int k = 0; k < 100; ++k) {
        const Vec3 n = oracle::random_unit(rng);
        const Vec3 i = oracle::random_hemisphere(rng, n, 0.05);
        const Vec3 o = oracle::random_hemisphere(rng, n, 0.05);
        const Rgb mean = 0.5 * (eval_cook_torrance(set.bases[0], i, o, n) +
                                eval_cook_torrance(set.bases[1], i, o, n));
        const Rgb f = eval_basis(set, w, i, o, n);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(f[c], mean[c], 1e-12 * std::max(1.0, mean[c]));
    }
}

TEST(EvalBasis, LinearInWeights) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BasisBrdfSet set{{glossy(0.2, 0.4, 0.3), glossy(0.6, 0.1, 0.7), glossy(0.05, 0.7, 0.2)}};
    for (int k = 0; k < 100; ++k) {
        const Vec3 n = oracle::random_unit(rng);
        const Vec3 i = oracle::random_hemisphere(rng, n, 0.05);
        const Vec3 o = oracle::random_hemisphere(rng, n, 0.05);
        const std::vector<double> a{0.2, 0.3, 0.5}, b{0.6, 0.0, 0.4};
        const double t = u(rng);
        std::vector<double> m(3);
        for (int j = 0; j < 3; ++j) m[j] = (1 - t) * a[j] + t * b[j];
        const Rgb expect = (1 - t) * eval_basis(set, a, i, o, n) + t * eval_basis(set, b, i, o, n);
        const Rgb f = eval_basis(set, m, i, o, n);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(f[c], expect[c], 1e-12 * std::max(1.0, expect[c]));
    }
}

TEST(EvalBasis, RejectsInvalidWeights) {
    BasisBrdfSet set{{glossy(0.2, 0.4, 0.3), glossy(0.6, 0.1, 0.7)}};
    const Vec3 n(0, 0, 1);
    const std::vector<double> neg{1.2, -0.2}, off{0.5, 0.6}, shortw{1.0};
    EXPECT_THROW(eval_basis(set, neg, n, n, n), DataError);
    EXPECT_THROW(eval_basis(set, off, n, n, n), DataError);
    EXPECT_THROW(eval_basis(set, shortw, n, n, n), DataError);
}

TEST(GradBrdf, DiffuseAndWeightPartialsInClosedForm) {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 100; ++k) {
        const auto c = oracle::random_grad_config(rng, 3);
        const BrdfGradient g = grad_brdf(c.set, c.w, c.i, c.o, c.n);
        double wsum = 0.0;
        for (size_t j = 0; j < 3; ++j) {
            // With w on the simplex, df/drho_d summed over bases is 1.
            wsum += g.diffuse[j][0];
            const Rgb fj = eval_cook_torrance(c.set.bases[j], c.i, c.o, c.n);
            for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(g.weight[j][ch], fj[ch], 1e-12 * std::max(1.0, fj[ch]));
        }
        EXPECT_NEAR(wsum, 1.0, 1e-12);
        const Rgb f = eval_basis(c.set, c.w, c.i, c.o, c.n);
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(g.value[ch], f[ch], 1e-12 * std::max(1.0, f[ch]));
    }
}

TEST(GradBrdf, SingleBasisDiffusePartialIsOne) {
    std::mt19937_64 rng(8);
    const auto c = oracle::random_grad_config(rng, 1);
    const BrdfGradient g = grad_brdf(c.set, c.w, c.i, c.o, c.n);
    EXPECT_TRUE((g.diffuse[0] == 1.0).all());
}

TEST(GradBrdf, MatchesCentralDifferencesOn1000Configurations) {
    std::mt19937_64 rng(9);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) worst = std::max(worst, oracle::brdf_gradient_error(oracle::random_grad_config(rng, 1 + k % 3)));
    EXPECT_LT(worst, 1e-4);
}

TEST(GradBrdf, NormalGradientIsTangent) {
    std::mt19937_64 rng(10);
    for (int k = 0; k < 100; ++k) {
        const auto c = oracle::random_grad_config(rng, 2);
        const BrdfGradient g = grad_brdf(c.set, c.w, c.i, c.o, c.n);
        for (const Vec3 &gn : g.normal) EXPECT_NEAR(gn.dot(c.n), 0.0, 1e-9 * std::max(1.0, gn.norm()));
    }
}

TEST(Softmax, MapsOntoSimplex) {
    const std::vector<double> logits{0.0, -5.0, 3.0, 1000.0};
    std::vector<double> w(4);
    softmax(logits, w);
    EXPECT_NO_THROW(check_simplex(w, 4));
    EXPECT_NEAR(w[3], 1.0, 1e-12);
}
