#pragma once

#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/scene_model.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include <array>
#include <functional>
#include <limits>
#include <set>
#include <vector>

namespace dispir {

struct RadiometricSample {
    double set_value = 0.0;
    Rgb measured = Rgb::Zero();
};

struct FalloffSample {
    double distance = 0.0;
    double measured = 0.0;
};

struct RadiometricFit {
    Rgb s = Rgb::Ones();
    Rgb gamma = Rgb::Ones();
    Rgb residual_rms = Rgb::Zero();
};

struct FalloffFit {
    FalloffParams params;
    double residual_rms = 0.0;
    bool ill_conditioned = false;
    int iterations = 0;
};

// Thrown when an iterative fit exhausts its budget; carries the best iterate.
class FitDidNotConverge : public NumericalError {
  public:
    FitDidNotConverge(const std::string &what, Eigen::VectorXd best)
        : NumericalError(what), best_(std::move(best)) {}
    const Eigen::VectorXd &best() const { return best_; }

  private:
    Eigen::VectorXd best_;
};

namespace detail {

inline constexpr int kFitIterationCap = 200;
inline constexpr double kFitStepTolerance = 1e-10;

// Adapts residual/Jacobian callbacks to Eigen's MINPACK-style functor.
struct LeastSquaresFunctor {
    using Residual = std::function<void(const Eigen::VectorXd &, Eigen::VectorXd &)>;
    using Jacobian = std::function<void(const Eigen::VectorXd &, Eigen::MatrixXd &)>;
    int n_inputs;
    int n_values;
    Residual residual;
    Jacobian jacobian;

    int inputs() const { return n_inputs; }
    int values() const { return n_values; }
    int operator()(const Eigen::VectorXd &x, Eigen::VectorXd &f) const {
        residual(x, f);
        return 0;
    }
    int df(const Eigen::VectorXd &x, Eigen::MatrixXd &J) const {
        jacobian(x, J);
        return 0;
    }
};

struct LeastSquaresResult {
    Eigen::VectorXd x;
    double rms = 0.0;
    int iterations = 0;
    bool converged = false;
};

inline LeastSquaresResult solve_least_squares(LeastSquaresFunctor functor, Eigen::VectorXd x0) {
    Eigen::LevenbergMarquardt<LeastSquaresFunctor> lm(functor);
    lm.parameters.maxfev = kFitIterationCap;
    lm.parameters.xtol = kFitStepTolerance;
    lm.parameters.ftol = 1e-15;
    lm.parameters.gtol = 0.0;
    const auto status = lm.minimize(x0);
    LeastSquaresResult out;
    out.x = x0;
    Eigen::VectorXd f(functor.n_values);
    functor.residual(x0, f);
    out.rms = std::sqrt(f.squaredNorm() / std::max(1, functor.n_values));
    out.iterations = static_cast<int>(lm.iter);
    using namespace Eigen::LevenbergMarquardtSpace;
    out.converged = status != TooManyFunctionEvaluation && status != ImproperInputParameters &&
                    out.x.allFinite();
    return out;
}

} // namespace detail

// Per-channel least-squares fit of measured = s * set_value^gamma.
inline RadiometricFit fit_radiometric(const std::vector<RadiometricSample> &samples) {
    if (samples.size() < 3) throw DataError("fit_radiometric: need at least 3 samples");
    std::set<double> levels;
    for (const auto &smp : samples) {
        if ((smp.measured < 0.0).any()) throw DataError("fit_radiometric: negative measurement");
        if (smp.set_value < 0.0 || smp.set_value > 1.0)
            throw DataError("fit_radiometric: set value outside [0,1]");
        levels.insert(smp.set_value);
    }
    if (levels.size() < 3) throw DataError("fit_radiometric: need at least 3 distinct set values");

    const int m = static_cast<int>(samples.size());
    RadiometricFit fit;
    for (int c = 0; c < 3; ++c) {
        // log-linear initialization over strictly positive samples
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int cnt = 0;
        for (const auto &smp : samples) {
            if (smp.set_value <= 0.0 || smp.measured[c] <= 0.0) continue;
            const double lx = std::log(smp.set_value), ly = std::log(smp.measured[c]);
            sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
            ++cnt;
        }
        Eigen::VectorXd x(2);
        x << 1.0, 1.0;
        const double det = cnt * sxx - sx * sx;
        if (cnt >= 2 && std::abs(det) > 1e-12) {
            const double g = (cnt * sxy - sx * sy) / det;
            x << std::exp((sy - g * sx) / cnt), g;
        }
        detail::LeastSquaresFunctor fn{
            2, m,
            [&](const Eigen::VectorXd &p, Eigen::VectorXd &f) {
                for (int k = 0; k < m; ++k)
                    f[k] = p[0] * std::pow(samples[k].set_value, p[1]) - samples[k].measured[c];
            },
            [&](const Eigen::VectorXd &p, Eigen::MatrixXd &J) {
                for (int k = 0; k < m; ++k) {
                    const double v = samples[k].set_value;
                    const double vg = std::pow(v, p[1]);
                    J(k, 0) = vg;
                    J(k, 1) = v > 0.0 ? p[0] * vg * std::log(v) : 0.0;
                }
            }};
        const auto res = detail::solve_least_squares(fn, x);
        if (!res.converged)
            throw FitDidNotConverge("fit_radiometric: did not converge", res.x);
        fit.s[c] = res.x[0];
        fit.gamma[c] = res.x[1];
        fit.residual_rms[c] = res.rms;
    }
    return fit;
}

// Nonlinear least squares of measured = 1 / (a + b d^2) + c from (0, 1, 0).
inline FalloffFit fit_falloff(const std::vector<FalloffSample> &samples) {
    if (samples.size() < 4) throw DataError("fit_falloff: need at least 4 samples");
    std::set<double> dists;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, mean = 0.0;
    for (const auto &smp : samples) {
        if (!(smp.distance > 0.0) || !(smp.measured > 0.0))
            throw DataError("fit_falloff: distances and measurements must be positive");
        dists.insert(smp.distance);
        lo = std::min(lo, smp.measured);
        hi = std::max(hi, smp.measured);
        mean += smp.measured;
    }
    if (dists.size() < 3) throw DataError("fit_falloff: need at least 3 distinct distances");
    mean /= static_cast<double>(samples.size());

    FalloffFit out;
    if (hi - lo <= 1e-9 * std::max(1.0, std::abs(hi))) {
        // No distance dependence: only 1/a + c is identifiable.
        out.params = {1.0, 0.0, mean - 1.0};
        out.ill_conditioned = true;
        return out;
    }

    const int m = static_cast<int>(samples.size());
    detail::LeastSquaresFunctor fn{
        3, m,
        [&](const Eigen::VectorXd &p, Eigen::VectorXd &f) {
            for (int k = 0; k < m; ++k) {
                const double d = samples[k].distance;
                f[k] = 1.0 / (p[0] + p[1] * d * d) + p[2] - samples[k].measured;
            }
        },
        [&](const Eigen::VectorXd &p, Eigen::MatrixXd &J) {
            for (int k = 0; k < m; ++k) {
                const double d2 = samples[k].distance * samples[k].distance;
                const double q = p[0] + p[1] * d2;
                J(k, 0) = -1.0 / (q * q);
                J(k, 1) = -d2 / (q * q);
                J(k, 2) = 1.0;
            }
        }};
    Eigen::VectorXd x(3);
    x << 0.0, 1.0, 0.0;
    const auto res = detail::solve_least_squares(fn, x);
    if (!res.converged) throw FitDidNotConverge("fit_falloff: did not converge", res.x);
    out.params = {res.x[0], res.x[1], res.x[2]};
    out.residual_rms = res.rms;
    out.iterations = res.iterations;

    Eigen::MatrixXd J(m, 3);
    fn.jacobian(res.x, J);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto sv = svd.singularValues();
    out.ill_conditioned = sv[2] <= 1e-12 * sv[0];
    if (!out.params.positive_on())
        throw NumericalError("fit_falloff: fitted a + b d^2 is not positive on [0.2, 2] m");
    return out;
}

struct BacklightFitOptions {
    bool fit_gamma = true;     // false: keep initial_gamma fixed
    double initial_s = 1.0;
    double initial_gamma = 1.0;
    double initial_backlight = 0.05;
    double saturation = 0.98;  // captures above this are excluded
    int max_iterations = 200;
};

struct BacklightFit {
    double s = 1.0;
    double gamma = 1.0;
    std::vector<Rgb> backlight;
    double loss = 0.0;  // mean squared error over valid samples
    std::vector<double> loss_trace;
    int iterations = 0;
};

namespace detail {

// Per-channel data for the backlight fit: unit-radiance renders U (N x P),
// captures C (N x P) and validity m (N x P).
struct BacklightChannel {
    Eigen::MatrixXd U, C, m;
    Eigen::MatrixXd A; // sum_p M_p U_ip U_jp
    Eigen::MatrixXd X; // sum_p m_kp U_kp U_ip
};

// Linear stage: C_k = a_k U_k + D with a shared backlight image D, which is
// eliminated per pixel. a_k = s((1 + B_k)^g - B_k^g), D = s sum_i B_i^g U_i.
// known[k] is false when superpixel k lights no valid sample.
struct OwnAndCommon {
    Eigen::VectorXd a, D, M;
    std::vector<bool> known;
};

inline OwnAndCommon own_and_common(const BacklightChannel &d) {
    OwnAndCommon r;
    r.M = d.m.colwise().sum().transpose();
    const Eigen::VectorXd Minv = (r.M.array() > 0.0).select(r.M.array().inverse(), 0.0).matrix();
    const Eigen::MatrixXd MU = d.m.cwiseProduct(d.U);
    const Eigen::RowVectorXd sumC = d.m.cwiseProduct(d.C).colwise().sum();
    const Eigen::VectorXd Cbar = sumC.transpose().cwiseProduct(Minv);
    const Eigen::VectorXd own = MU.cwiseProduct(d.U).rowwise().sum();
    Eigen::MatrixXd G = -(MU * Minv.asDiagonal() * MU.transpose());
    G.diagonal() += own;
    const Eigen::VectorXd h = MU.cwiseProduct(d.C).rowwise().sum() - MU * Cbar;
    const double scale = own.maxCoeff();
    r.known.resize(own.size());
    for (Eigen::Index k = 0; k < own.size(); ++k) {
        r.known[k] = own[k] > 1e-12 * scale;
        if (!r.known[k]) G(k, k) += 1.0;
    }
    r.a = G.ldlt().solve(h);
    r.D = (sumC - r.a.transpose() * MU).transpose().cwiseProduct(Minv);
    return r;
}

// B in [0, 1] with (1 + B)^g - B^g = t, clamped to the attainable range.
inline double invert_own(double t, double g) {
    if (std::abs(g - 1.0) < 1e-9) return 0.0;
    auto h = [g](double B) { return std::pow(1.0 + B, g) - std::pow(B, g); };
    const bool rising = g > 1.0;
    double lo = 0.0, hi = 1.0;
    if (rising ? t <= h(lo) : t >= h(lo)) return lo;
    if (rising ? t >= h(hi) : t <= h(hi)) return hi;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        ((h(mid) < t) == rising ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

// Fits s, gamma and per-superpixel backlight from OLAT captures of an object
// with known geometry and reflectance. Capture k was taken under the one-hot
// pattern e_k, so it equals sum_i U_i s (delta_ik + B_i)^gamma. A profile
// search over (s, gamma) seeds damped Gauss-Newton over (log s, log gamma, B)
// with B projected onto [0,1]; only steps that lower the loss are accepted.
inline BacklightFit fit_backlight(const OlatStack &captures, const SceneMaps &scene,
                                  const Reflectance &refl, const DisplayModel &display,
                                  const FalloffParams &fp, const BacklightFitOptions &opt = {}) {
    const size_t N = display.size();
    if (captures.size() != N) throw DataError("fit_backlight: need one capture per superpixel");
    for (const auto &img : captures.images)
        if (img.width() != scene.width() || img.height() != scene.height() || img.channels() != 3)
            throw DataError("fit_backlight: capture shape does not match scene");

    DisplayModel unit = display;
    unit.backlight.assign(N, Rgb::Zero());
    const OlatStack basis = render_olat_stack(scene, unit, refl, fp, false);

    std::vector<size_t> pixels;
    for (size_t p = 0; p < scene.mask.size(); ++p)
        if (scene.mask[p]) pixels.push_back(p);
    const Eigen::Index P = static_cast<Eigen::Index>(pixels.size());
    const Eigen::Index n = static_cast<Eigen::Index>(N);

    std::array<detail::BacklightChannel, 3> ch;
    size_t valid = 0;
    for (int c = 0; c < 3; ++c) {
        auto &d = ch[c];
        d.U.resize(n, P);
        d.C.resize(n, P);
        d.m.resize(n, P);
        for (Eigen::Index k = 0; k < n; ++k) {
            for (Eigen::Index q = 0; q < P; ++q) {
                const size_t idx = pixels[q] * 3 + c;
                d.U(k, q) = basis.images[k][idx];
                d.C(k, q) = captures.images[k][idx];
                const bool ok = d.C(k, q) <= opt.saturation;
                d.m(k, q) = ok ? 1.0 : 0.0;
                valid += ok;
            }
        }
        const Eigen::VectorXd M = d.m.colwise().sum().transpose();
        d.A = d.U * M.asDiagonal() * d.U.transpose();
        d.X = (d.m.cwiseProduct(d.U)) * d.U.transpose();
    }
    if (valid < 3 * N + 2 || P == 0)
        throw DataError("fit_backlight: insufficient unsaturated pixels");

    // parameter layout: [log s, log gamma, B_r(0..N), B_g, B_b]
    const Eigen::Index dim = 2 + 3 * n;
    Eigen::VectorXd theta(dim);
    theta[0] = std::log(opt.initial_s);
    theta[1] = std::log(opt.initial_gamma);
    theta.tail(3 * n).setConstant(opt.initial_backlight);

    // Initialization by profiling (s, gamma): B follows from a_k by inversion
    // and the pair is scored on both a and the shared backlight image D.
    {
        std::array<detail::OwnAndCommon, 3> oc;
        for (int c = 0; c < 3; ++c) oc[c] = detail::own_and_common(ch[c]);
        Eigen::VectorXd B(n);
        auto fill_B = [&](int c, double s, double g) {
            for (Eigen::Index k = 0; k < n; ++k)
                B[k] = oc[c].known[k] ? detail::invert_own(oc[c].a[k] / s, g) : opt.initial_backlight;
        };
        auto profile = [&](double s, double g) {
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                fill_B(c, s, g);
                const Eigen::ArrayXd phiB = B.array().pow(g);
                const Eigen::ArrayXd own = (1.0 + B.array()).pow(g) - phiB;
                for (Eigen::Index k = 0; k < n; ++k)
                    if (oc[c].known[k]) sum += std::pow(s * own[k] - oc[c].a[k], 2);
                const Eigen::VectorXd Dm = s * (phiB.matrix().transpose() * ch[c].U).transpose();
                sum += ((Dm - oc[c].D).array().square() * (oc[c].M.array() > 0.0).cast<double>()).sum();
            }
            return sum;
        };
        std::vector<double> gammas;
        if (opt.fit_gamma)
            for (double g = 0.4; g <= 4.0 + 1e-9; g += 0.05) gammas.push_back(g);
        else
            gammas.push_back(opt.initial_gamma);
        double best = std::numeric_limits<double>::infinity(), best_s = opt.initial_s, best_g = opt.initial_gamma;
        for (double g : gammas) {
            // coarse log-s grid, then golden-section refinement around the best node
            const double ls0 = std::log(0.05), ls1 = std::log(20.0);
            const int nodes = 25;
            int bi = 0;
            double bv = std::numeric_limits<double>::infinity();
            for (int i = 0; i < nodes; ++i) {
                const double v = profile(std::exp(ls0 + (ls1 - ls0) * i / (nodes - 1)), g);
                if (v < bv) bv = v, bi = i;
            }
            const double step = (ls1 - ls0) / (nodes - 1);
            double a = ls0 + step * std::max(bi - 1, 0), b = ls0 + step * std::min(bi + 1, nodes - 1);
            const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
            double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
            double f1 = profile(std::exp(x1), g), f2 = profile(std::exp(x2), g);
            for (int it = 0; it < 40; ++it) {
                if (f1 < f2) {
                    b = x2, x2 = x1, f2 = f1, x1 = b - phi * (b - a), f1 = profile(std::exp(x1), g);
                } else {
                    a = x1, x1 = x2, f1 = f2, x2 = a + phi * (b - a), f2 = profile(std::exp(x2), g);
                }
            }
            const double ls = 0.5 * (a + b), v = profile(std::exp(ls), g);
            if (v < best) best = v, best_s = std::exp(ls), best_g = g;
        }
        theta[0] = std::log(best_s);
        theta[1] = std::log(best_g);
        for (int c = 0; c < 3; ++c) {
            fill_B(c, best_s, best_g);
            theta.segment(2 + c * n, n) = B;
        }
    }

    auto loss_of = [&](const Eigen::VectorXd &th) {
        const double s = std::exp(th[0]), g = std::exp(th[1]);
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            const auto &d = ch[c];
            const Eigen::VectorXd B = th.segment(2 + c * n, n);
            const Eigen::VectorXd phiB = B.array().pow(g);
            const Eigen::VectorXd own = (1.0 + B.array()).pow(g) - phiB.array();
            const Eigen::RowVectorXd bl = phiB.transpose() * d.U;
            const Eigen::MatrixXd model = s * ((own.asDiagonal() * d.U).rowwise() + bl);
            sum += (model - d.C).cwiseProduct(d.m).squaredNorm();
        }
        return sum / static_cast<double>(valid);
    };

    BacklightFit out;
    double loss = loss_of(theta);
    out.loss_trace.push_back(loss);
    double lambda = 1e-3;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const double s = std::exp(theta[0]), g = std::exp(theta[1]);
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
        for (int c = 0; c < 3; ++c) {
            const auto &d = ch[c];
            const Eigen::Index off = 2 + c * n;
            const Eigen::ArrayXd B = theta.segment(off, n).array();
            const Eigen::ArrayXd Bs = B.max(1e-12);
            const Eigen::ArrayXd phiB = B.pow(g);
            const Eigen::ArrayXd phi1 = (1.0 + B).pow(g);
            const Eigen::ArrayXd lnB = (B > 0.0).select(Bs.log(), 0.0);
            const Eigen::ArrayXd own = phi1 - phiB;
            const Eigen::ArrayXd own_g = phi1 * (1.0 + B).log() - phiB * lnB;
            const Eigen::ArrayXd beta = s * g * Bs.pow(g - 1.0);
            const Eigen::ArrayXd eta = s * g * ((1.0 + B).pow(g - 1.0)) - beta;

            const Eigen::RowVectorXd bl = phiB.matrix().transpose() * d.U;
            const Eigen::RowVectorXd blg = (phiB * lnB).matrix().transpose() * d.U;
            const Eigen::MatrixXd model = s * ((own.matrix().asDiagonal() * d.U).rowwise() + bl);
            const Eigen::MatrixXd Js = model;
            const Eigen::MatrixXd Jg =
                (g * s) * ((own_g.matrix().asDiagonal() * d.U).rowwise() + blg);
            const Eigen::MatrixXd r = (model - d.C).cwiseProduct(d.m);
            const Eigen::MatrixXd mJs = Js.cwiseProduct(d.m);
            const Eigen::MatrixXd mJg = Jg.cwiseProduct(d.m);

            H(0, 0) += mJs.cwiseProduct(Js).sum();
            H(0, 1) += mJs.cwiseProduct(Jg).sum();
            H(1, 1) += mJg.cwiseProduct(Jg).sum();
            grad[0] += r.cwiseProduct(Js).sum();
            grad[1] += r.cwiseProduct(Jg).sum();

            // cross terms with B: beta_i sum_p U_ip Y(p) + eta_i sum_p m_ip J(i,p) U_ip
            const Eigen::VectorXd Ys = mJs.colwise().sum().transpose();
            const Eigen::VectorXd Yg = mJg.colwise().sum().transpose();
            const Eigen::VectorXd R = r.colwise().sum().transpose();
            const Eigen::ArrayXd own_s = mJs.cwiseProduct(d.U).rowwise().sum().array();
            const Eigen::ArrayXd own_gg = mJg.cwiseProduct(d.U).rowwise().sum().array();
            const Eigen::ArrayXd own_r = r.cwiseProduct(d.U).rowwise().sum().array();
            H.block(0, off, 1, n) += (beta * (d.U * Ys).array() + eta * own_s).matrix().transpose();
            H.block(1, off, 1, n) += (beta * (d.U * Yg).array() + eta * own_gg).matrix().transpose();
            grad.segment(off, n) += (beta * (d.U * R).array() + eta * own_r).matrix();

            Eigen::MatrixXd HB = (beta.matrix() * beta.matrix().transpose()).cwiseProduct(d.A);
            const Eigen::MatrixXd cross = (eta.matrix() * beta.matrix().transpose()).cwiseProduct(d.X);
            HB += cross + cross.transpose();
            HB.diagonal() += (eta * eta).matrix().cwiseProduct(d.X.diagonal());
            H.block(off, off, n, n) += HB;
        }
        H(1, 0) = H(0, 1);
        H.block(2, 0, 3 * n, 2) = H.block(0, 2, 2, 3 * n).transpose();
        if (!opt.fit_gamma) {
            H.row(1).setZero();
            H.col(1).setZero();
            H(1, 1) = 1.0;
            grad[1] = 0.0;
        }

        bool accepted = false;
        double step_norm = 0.0;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            Eigen::MatrixXd Hd = H;
            Hd.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
            const Eigen::VectorXd delta = Hd.ldlt().solve(-grad);
            Eigen::VectorXd cand = theta + delta;
            cand.tail(3 * n) = cand.tail(3 * n).cwiseMax(0.0).cwiseMin(1.0);
            const double cand_loss = loss_of(cand);
            if (std::isfinite(cand_loss) && cand_loss <= loss) {
                step_norm = (cand - theta).norm() / std::max(theta.norm(), 1e-12);
                theta = cand;
                loss = cand_loss;
                out.loss_trace.push_back(loss);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
            } else {
                lambda *= 4.0;
            }
        }
        if (!accepted || step_norm < detail::kFitStepTolerance || loss < 1e-30) break;
    }

    out.s = std::exp(theta[0]);
    out.gamma = std::exp(theta[1]);
    out.backlight.resize(N);
    for (size_t i = 0; i < N; ++i)
        for (int c = 0; c < 3; ++c) out.backlight[i][c] = theta[2 + c * n + static_cast<Eigen::Index>(i)];
    out.loss = loss;
    out.iterations = it;
    return out;
}

} // namespace dispir
