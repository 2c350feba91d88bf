// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/ellipse.h"
#include "evgrid/common.h"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <numbers>

namespace ns_evgrid {

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Matrix2d Rot(double alpha) {
    const double c = std::cos(alpha), s = std::sin(alpha);
    return (Eigen::Matrix2d() << c, -s, s, c).finished();
}

double WrapHalfTurn(double a) {
    a = std::fmod(a, kPi);
    if (a < 0.0) a += kPi;
    if (a >= kPi) a -= kPi;
    return a;
}

/**
 * internal parameterization: image-frame center u(tau) = u0 + v * tau (relative to the data
 * centroid) and log semi-axes at both ends of the event time span
 */
struct TvState {
    Eigen::Matrix<double, 9, 1> p;  // u0x u0y vx vy lxs lxe lys lye alpha
};

enum : int { U0X = 0, U0Y, VX, VY, LXS, LXE, LYS, LYE, ALPHA, NPARAM };

struct TvProblem {
    std::vector<Eigen::Vector3d> pts;  // centroid-relative x, y and tau
    double tauMin = 0.0, tauSpan = 1.0;
    bool staticOnly = false;

    [[nodiscard]] double Weight(double tau) const {
        return staticOnly ? 0.0 : (tau - tauMin) / tauSpan;
    }

    double Eval(const Eigen::Matrix<double, 9, 1> &p,
                std::vector<double> *res,
                Eigen::Matrix<double, Eigen::Dynamic, NPARAM> *jac) const {
        const double ca = std::cos(p(ALPHA)), sa = std::sin(p(ALPHA));
        const double exs = std::exp(p(LXS)), exe = std::exp(p(LXE));
        const double eys = std::exp(p(LYS)), eye = std::exp(p(LYE));
        double cost = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double tau = pts[i].z();
            const double w = Weight(tau);
            const double lx = (1.0 - w) * exs + w * exe;
            const double ly = (1.0 - w) * eys + w * eye;
            const double dx = pts[i].x() - (p(U0X) + p(VX) * tau);
            const double dy = pts[i].y() - (p(U0Y) + p(VY) * tau);
            const double X = ca * dx - sa * dy;
            const double Y = sa * dx + ca * dy;
            const double lx2 = lx * lx, ly2 = ly * ly;
            const double r = ly2 * X * X + lx2 * Y * Y - lx2 * ly2;
            cost += r * r;
            if (res) (*res)[i] = r;
            if (jac) {
                const double drX = 2.0 * ly2 * X, drY = 2.0 * lx2 * Y;
                const double drdx = drX * ca + drY * sa;   // dr / d(dx)
                const double drdy = -drX * sa + drY * ca;  // dr / d(dy)
                const double drlx = 2.0 * lx * (Y * Y - ly2);
                const double drly = 2.0 * ly * (X * X - lx2);
                auto row = jac->row(static_cast<Eigen::Index>(i));
                row(U0X) = -drdx;
                row(U0Y) = -drdy;
                row(VX) = -drdx * tau;
                row(VY) = -drdy * tau;
                row(LXS) = drlx * (1.0 - w) * exs;
                row(LXE) = drlx * w * exe;
                row(LYS) = drly * (1.0 - w) * eys;
                row(LYE) = drly * w * eye;
                row(ALPHA) = 2.0 * X * Y * (lx2 - ly2);
            }
        }
        return cost;
    }
};

}  // namespace

const char *ToString(EllipseFitStatus status) {
    switch (status) {
        case EllipseFitStatus::Ok: return "ok";
        case EllipseFitStatus::InsufficientEvents: return "insufficient events";
        case EllipseFitStatus::NotAnEllipse: return "initial conic is not an ellipse";
        case EllipseFitStatus::Diverged: return "solver diverged";
        case EllipseFitStatus::AxisCollapse: return "axis collapse";
    }
    return "unknown";
}

Eigen::Vector2d TimeVaryingEllipse::ImageCenter(double t) const {
    const double tau = t - t_ref;
    return Rot(alpha).transpose() * Eigen::Vector2d(cx(tau), cy(tau));
}

double Residual(const TimeVaryingEllipse &e, const Event &event) {
    return Residual(e, TimedPoint{event.t, Eigen::Vector2d(event.x, event.y)});
}

double Residual(const TimeVaryingEllipse &e, const TimedPoint &point) {
    const double tau = point.t - e.t_ref;
    const Eigen::Vector2d xr = Rot(e.alpha) * point.xy;
    const double lx = e.lx(tau), ly = e.ly(tau);
    const double X = xr.x() - e.cx(tau), Y = xr.y() - e.cy(tau);
    return ly * ly * X * X + lx * lx * Y * Y - lx * lx * ly * ly;
}

TimeVaryingEllipse Canonicalize(TimeVaryingEllipse e) {
    // R(alpha + pi) = -R(alpha): shifting by a half turn negates the rotated-frame center
    while (e.alpha < 0.0 || e.alpha >= kPi) {
        const double step = e.alpha < 0.0 ? kPi : -kPi;
        e.alpha += step;
        e.cx = LinearPoly{-e.cx.slope, -e.cx.offset};
        e.cy = LinearPoly{-e.cy.slope, -e.cy.offset};
    }
    return e;
}

std::optional<StaticEllipse> FitStaticEllipse(std::span<const Eigen::Vector2d> points) {
    if (points.size() < 6) return std::nullopt;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto &p : points) mean += p;
    mean /= static_cast<double>(points.size());
    double scale = 0.0;
    for (const auto &p : points) scale += (p - mean).norm();
    scale /= static_cast<double>(points.size());
    if (!(scale > 0.0)) return std::nullopt;

    // ellipse-specific direct fit, numerically stable partitioned form
    Eigen::Matrix3d S1 = Eigen::Matrix3d::Zero(), S2 = Eigen::Matrix3d::Zero(),
                    S3 = Eigen::Matrix3d::Zero();
    for (const auto &p : points) {
        const Eigen::Vector2d q = (p - mean) / scale;
        const Eigen::Vector3d d1(q.x() * q.x(), q.x() * q.y(), q.y() * q.y());
        const Eigen::Vector3d d2(q.x(), q.y(), 1.0);
        S1 += d1 * d1.transpose();
        S2 += d1 * d2.transpose();
        S3 += d2 * d2.transpose();
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu3(S3);
    if (!lu3.isInvertible()) return std::nullopt;
    const Eigen::Matrix3d T = -lu3.solve(S2.transpose());
    Eigen::Matrix3d M = S1 + S2 * T;
    Eigen::Matrix3d C1inv;
    C1inv << 0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0;
    M = C1inv * M;

    Eigen::EigenSolver<Eigen::Matrix3d> es(M);
    if (es.info() != Eigen::Success) return std::nullopt;
    int pick = -1;
    double bestCond = 0.0;
    Eigen::Vector3d a1;
    for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d v = es.eigenvectors().col(k).real();
        const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
        if (cond > bestCond) {
            bestCond = cond;
            pick = k;
            a1 = v;
        }
    }
    if (pick < 0) return std::nullopt;
    const Eigen::Vector3d a2 = T * a1;
    const double A = a1(0), B = a1(1), C = a1(2), D = a2(0), E = a2(1), F = a2(2);

    Eigen::Matrix2d Q;
    Q << 2.0 * A, B, B, 2.0 * C;
    const Eigen::Vector2d c0 = Q.fullPivLu().solve(Eigen::Vector2d(-D, -E));
    const double F0 = A * c0.x() * c0.x() + B * c0.x() * c0.y() + C * c0.y() * c0.y() +
                      D * c0.x() + E * c0.y() + F;
    Eigen::Matrix2d Mq;
    Mq << A, B / 2.0, B / 2.0, C;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> sa(Mq);
    const Eigen::Vector2d mu = sa.eigenvalues();
    const double s1 = -F0 / mu(0), s2 = -F0 / mu(1);
    if (!(s1 > 0.0) || !(s2 > 0.0) || !std::isfinite(s1) || !std::isfinite(s2)) return std::nullopt;

    StaticEllipse out;
    out.center = mean + scale * c0;
    out.semi_axes = Eigen::Vector2d(std::sqrt(s1), std::sqrt(s2)) * scale;
    const Eigen::Vector2d v1 = sa.eigenvectors().col(0);
    // R(alpha) maps the first principal direction onto +x'
    out.alpha = WrapHalfTurn(-std::atan2(v1.y(), v1.x()));
    return out;
}

EllipseFitResult FitTimeVaryingEllipse(std::span<const Event> events,
                                       double tRef,
                                       const EllipseFitParams &params) {
    std::vector<TimedPoint> points;
    points.reserve(events.size());
    for (const auto &ev : events) points.push_back(TimedPoint{ev.t, Eigen::Vector2d(ev.x, ev.y)});
    return FitTimeVaryingEllipse(points, tRef, params);
}

EllipseFitResult FitTimeVaryingEllipse(std::span<const TimedPoint> events,
                                       double tRef,
                                       const EllipseFitParams &params) {
    EllipseFitResult result;
    if (events.size() < std::max<std::size_t>(params.min_events, 6)) {
        result.status = EllipseFitStatus::InsufficientEvents;
        return result;
    }

    std::vector<Eigen::Vector2d> xy;
    xy.reserve(events.size());
    for (const auto &ev : events) xy.push_back(ev.xy);
    const auto init = FitStaticEllipse(xy);
    if (!init) {
        result.status = EllipseFitStatus::NotAnEllipse;
        return result;
    }

    TvProblem prob;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto &p : xy) mean += p;
    mean /= static_cast<double>(xy.size());
    double tauMin = events.front().t - tRef, tauMax = tauMin;
    for (const auto &ev : events) {
        tauMin = std::min(tauMin, ev.t - tRef);
        tauMax = std::max(tauMax, ev.t - tRef);
    }
    prob.tauMin = tauMin;
    prob.tauSpan = tauMax - tauMin;
    prob.staticOnly = prob.tauSpan < 1e-9;
    if (prob.staticOnly) prob.tauSpan = 1.0;
    for (const auto &ev : events) prob.pts.emplace_back(ev.xy.x() - mean.x(), ev.xy.y() - mean.y(), ev.t - tRef);

    Eigen::Matrix<double, 9, 1> p;
    p << init->center.x() - mean.x(), init->center.y() - mean.y(), 0.0, 0.0,
        std::log(init->semi_axes.x()), std::log(init->semi_axes.x()), std::log(init->semi_axes.y()),
        std::log(init->semi_axes.y()), init->alpha;
    // u(tau) = u0 + v * tau; the static fit describes the middle of the span, v = 0 keeps it
    std::array<bool, NPARAM> frozen{};
    if (prob.staticOnly) frozen[VX] = frozen[VY] = frozen[LXE] = frozen[LYE] = true;

    const std::size_t m = prob.pts.size();
    std::vector<double> res(m);
    Eigen::Matrix<double, Eigen::Dynamic, NPARAM> J(static_cast<Eigen::Index>(m), NPARAM);
    double cost = prob.Eval(p, &res, &J);
    result.initial_cost = cost;
    double lambda = 1e-3;
    int it = 0;
    for (; it < params.max_iters; ++it) {
        Eigen::Matrix<double, NPARAM, NPARAM> H = J.transpose() * J;
        Eigen::Matrix<double, NPARAM, 1> g =
            J.transpose() * Eigen::Map<const Eigen::VectorXd>(res.data(), static_cast<Eigen::Index>(m));
        for (int k = 0; k < NPARAM; ++k) {
            if (!frozen[k]) continue;
            H.row(k).setZero();
            H.col(k).setZero();
            H(k, k) = 1.0;
            g(k) = 0.0;
        }
        const double diagMax = H.diagonal().maxCoeff();
        bool accepted = false;
        double newCost = cost;
        Eigen::Matrix<double, 9, 1> pNew;
        while (lambda < 1e16) {
            Eigen::Matrix<double, NPARAM, NPARAM> A = H;
            for (int k = 0; k < NPARAM; ++k) A(k, k) += lambda * (H(k, k) + 1e-12 * diagMax);
            const Eigen::Matrix<double, NPARAM, 1> delta = A.ldlt().solve(-g);
            if (!delta.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            pNew = p + delta;
            newCost = prob.Eval(pNew, nullptr, nullptr);
            if (std::isfinite(newCost) && newCost < cost) {
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) break;
        const double rel = (cost - newCost) / std::max(cost, 1e-300);
        p = pNew;
        cost = prob.Eval(p, &res, &J);
        lambda = std::max(lambda / 10.0, 1e-12);
        if (rel < params.tol) {
            ++it;
            break;
        }
    }
    result.iterations = it;
    result.final_cost = cost;
    if (!p.allFinite() || !std::isfinite(cost)) {
        result.status = EllipseFitStatus::Diverged;
        return result;
    }

    // back to the rotated-frame polynomial form
    TimeVaryingEllipse e;
    e.t_ref = tRef;
    e.alpha = p(ALPHA);
    const Eigen::Matrix2d R = Rot(e.alpha);
    const Eigen::Vector2d v(p(VX), p(VY));
    const Eigen::Vector2d u0 = mean + Eigen::Vector2d(p(U0X), p(U0Y));
    const Eigen::Vector2d cOff = R * u0, cSlope = R * v;
    e.cx = LinearPoly{cSlope.x(), cOff.x()};
    e.cy = LinearPoly{cSlope.y(), cOff.y()};
    const double exs = std::exp(p(LXS)), exe = std::exp(p(LXE));
    const double eys = std::exp(p(LYS)), eye = std::exp(p(LYE));
    if (prob.staticOnly) {
        e.lx = LinearPoly{0.0, exs};
        e.ly = LinearPoly{0.0, eys};
    } else {
        const double kx = (exe - exs) / prob.tauSpan, ky = (eye - eys) / prob.tauSpan;
        e.lx = LinearPoly{kx, exs - kx * tauMin};
        e.ly = LinearPoly{ky, eys - ky * tauMin};
    }
    e = Canonicalize(e);
    if (std::min({exs, exe, eys, eye}) <= params.min_axis) {
        result.status = EllipseFitStatus::AxisCollapse;
        return result;
    }
    result.ellipse = e;
    return result;
}

EllipseFitResult FitTimeVaryingEllipse(const ClusterPair &pair,
                                       std::span<const EventCluster> clusters,
                                       double tRef,
                                       const EllipseFitParams &params) {
    std::vector<Event> events;
    for (const auto idx : {pair.chasing, pair.running}) {
        if (idx >= clusters.size()) throw Error("cluster pair refers to a missing cluster");
        for (const auto &fe : clusters[idx].members) events.push_back(fe.event);
    }
    return FitTimeVaryingEllipse(events, tRef, params);
}

std::optional<Ellipse2D> Sample(const TimeVaryingEllipse &e, double t) {
    const double tau = t - e.t_ref;
    const double lx = e.lx(tau), ly = e.ly(tau);
    if (!(lx > 0.0) || !(ly > 0.0)) return std::nullopt;
    Ellipse2D out;
    out.center = e.ImageCenter(t);
    out.semi_axes = Eigen::Vector2d(lx, ly);
    out.alpha = e.alpha;
    return out;
}

}  // namespace ns_evgrid
