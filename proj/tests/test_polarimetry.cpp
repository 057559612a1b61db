#include "dispir/polarimetry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dispir;

namespace {

PolarizedCapture constant_capture(double i0, double i45, double i90, double i135) {
    return {Image(1, 1, 1, i0), Image(1, 1, 1, i45), Image(1, 1, 1, i90), Image(1, 1, 1, i135)};
}

Image random_image(std::mt19937_64 &rng, int W, int H, double scale) {
    std::uniform_real_distribution<double> u(0.0, scale);
    Image img(W, H, 3);
    for (double &v : img.data()) v = u(rng);
    return img;
}

} // namespace

TEST(Stokes, UnpolarizedAndFullyPolarizedExamples) {
    auto a = stokes_decompose(constant_capture(1, 1, 1, 1));
    EXPECT_EQ(a.s0[0], 2.0);
    EXPECT_EQ(a.s1[0], 0.0);
    EXPECT_EQ(a.s2[0], 0.0);
    auto b = stokes_decompose(constant_capture(1, 0.5, 0, 0.5));
    EXPECT_EQ(b.s0[0], 1.0);
    EXPECT_EQ(b.s1[0], 1.0);
    EXPECT_EQ(b.s2[0], 0.0);
}

TEST(Stokes, RandomCaptureMatchesDirectFormula) {
    std::mt19937_64 rng(1);
    PolarizedCapture cap{random_image(rng, 8, 8, 1), random_image(rng, 8, 8, 1), random_image(rng, 8, 8, 1),
                         random_image(rng, 8, 8, 1)};
    const auto st = stokes_decompose(cap);
    for (size_t k = 0; k < cap.i0.size(); ++k) {
        const double s0 = (cap.i0[k] + cap.i45[k] + cap.i90[k] + cap.i135[k]) / 2.0;
        EXPECT_DOUBLE_EQ(st.s0[k], s0);
        EXPECT_DOUBLE_EQ(st.s1[k], cap.i0[k] - cap.i90[k]);
        EXPECT_DOUBLE_EQ(st.s2[k], cap.i45[k] - cap.i135[k]);
        EXPECT_NEAR(st.s0[k] + st.s1[k], 2 * cap.i0[k] + 0.5 * (cap.i45[k] + cap.i135[k]) -
                                             0.5 * (cap.i0[k] + cap.i90[k]),
                    1e-12);
    }
}

TEST(Stokes, DimensionMismatchRejected) {
    PolarizedCapture cap{Image(2, 2, 1), Image(2, 2, 1), Image(2, 3, 1), Image(2, 2, 1)};
    EXPECT_THROW(stokes_decompose(cap), DataError);
}

TEST(Separate, Examples) {
    StokesImage st{Image(1, 1, 1, 10.0), Image(1, 1, 1, 3.0), Image(1, 1, 1, 4.0)};
    auto s = separate(st);
    EXPECT_EQ(s.specular[0], 5.0);
    EXPECT_EQ(s.diffuse[0], 5.0);
    StokesImage un{Image(1, 1, 1, 0.7), Image(1, 1, 1, 0.0), Image(1, 1, 1, 0.0)};
    s = separate(un);
    EXPECT_EQ(s.specular[0], 0.0);
    EXPECT_EQ(s.diffuse[0], 0.7);
}

TEST(Separate, NegativeDiffuseIsClampedAndFlagged) {
    StokesImage st{Image(1, 1, 1, 1.0), Image(1, 1, 1, 3.0), Image(1, 1, 1, 4.0)};
    const auto s = separate(st);
    EXPECT_EQ(s.diffuse[0], 0.0);
    EXPECT_EQ(s.clamped[0], 1);
}

TEST(Simulate, Examples) {
    const Image d = Image(2, 2, 3, 0.6), zero(2, 2, 3, 0.0);
    auto cap = simulate_polarized_capture(d, zero, 0.3);
    for (const Image *img : {&cap.i0, &cap.i45, &cap.i90, &cap.i135})
        for (double v : img->data()) EXPECT_DOUBLE_EQ(v, 0.3);
    const Image s(2, 2, 3, 0.8);
    cap = simulate_polarized_capture(zero, s, 0.0);
    for (size_t k = 0; k < s.size(); ++k) {
        EXPECT_NEAR(cap.i0[k], 0.8, 1e-15);
        EXPECT_NEAR(cap.i90[k], 0.0, 1e-15);
        EXPECT_NEAR(cap.i45[k], 0.4, 1e-15);
        EXPECT_NEAR(cap.i135[k], 0.4, 1e-15);
    }
}

TEST(Simulate, RoundTripRecoversDiffuseAndSpecular) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ang(-kPi, kPi);
    for (int t = 0; t < 20; ++t) {
        const Image D = random_image(rng, 16, 16, 1.0), S = random_image(rng, 16, 16, 1.0);
        const auto cap = simulate_polarized_capture(D, S, ang(rng));
        const auto sep = separate(stokes_decompose(cap));
        for (size_t k = 0; k < D.size(); ++k) {
            ASSERT_NEAR(sep.diffuse[k], D[k], 1e-6);
            ASSERT_NEAR(sep.specular[k], S[k], 1e-6);
        }
        for (double r : consistency_residual(cap).data()) ASSERT_NEAR(r, 0.0, 1e-12);
    }
}

TEST(Simulate, RotationConsistency) {
    std::mt19937_64 rng(3);
    const Image D = random_image(rng, 8, 8, 1.0), S = random_image(rng, 8, 8, 1.0);
    const double base = 0.2, delta = 0.37;
    const auto a = stokes_decompose(simulate_polarized_capture(D, S, base));
    const auto b = stokes_decompose(simulate_polarized_capture(D, S, base + delta));
    const double c = std::cos(2 * delta), s = std::sin(2 * delta);
    for (size_t k = 0; k < D.size(); ++k) {
        EXPECT_NEAR(b.s0[k], a.s0[k], 1e-6);
        EXPECT_NEAR(b.s1[k], c * a.s1[k] - s * a.s2[k], 1e-6);
        EXPECT_NEAR(b.s2[k], s * a.s1[k] + c * a.s2[k], 1e-6);
    }
    const auto sa = separate(a), sb = separate(b);
    for (size_t k = 0; k < D.size(); ++k) {
        EXPECT_NEAR(sa.diffuse[k], sb.diffuse[k], 1e-6);
        EXPECT_NEAR(sa.specular[k], sb.specular[k], 1e-6);
    }
    const Image ao = aolp(a);
    for (size_t k = 0; k < D.size(); ++k)
        if (S[k] > 1e-3) EXPECT_NEAR(ao[k], base, 1e-9);
}

TEST(Simulate, NoisyRoundTripWithinTolerance) {
    std::mt19937_64 rng(4);
    const Image D = random_image(rng, 100, 100, 1.0), S = random_image(rng, 100, 100, 1.0);
    auto cap = simulate_polarized_capture(D, S, 0.7);
    std::normal_distribution<double> n(0.0, 0.005);
    for (Image *img : {&cap.i0, &cap.i45, &cap.i90, &cap.i135})
        for (double &v : img->data()) v += n(rng);
    const auto sep = separate(stokes_decompose(cap));
    double ed = 0.0, es = 0.0;
    for (size_t k = 0; k < D.size(); ++k) {
        ed += std::abs(sep.diffuse[k] - D[k]);
        es += std::abs(sep.specular[k] - S[k]);
    }
    EXPECT_LT(ed / D.size(), 0.02);
    EXPECT_LT(es / D.size(), 0.02);
}

TEST(Dolp, FullyAndUnpolarized) {
    StokesImage st{Image(2, 1, 1), Image(2, 1, 1), Image(2, 1, 1)};
    st.s0.data() = {1.0, 2.0};
    st.s1.data() = {1.0, 0.0};
    const Image d = dolp(st);
    EXPECT_DOUBLE_EQ(d[0], 1.0);
    EXPECT_DOUBLE_EQ(d[1], 0.0);
}
