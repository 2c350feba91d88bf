// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "evgrid/common.h"
#include "evgrid/ellipse.h"
#include "evgrid/sim.h"
#include "support.h"

#include <cmath>
#include <map>
#include <numbers>

using namespace ns_evgrid;
using ns_evgrid_test::EllipsePoint;

namespace {

constexpr double kPi = std::numbers::pi;

struct Truth {
    Eigen::Vector2d center{160.0, 120.0};
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
    double a = 20.0, b = 12.0, alpha = 0.3;
};

std::vector<TimedPoint> SampleTruth(const Truth &tr, int n, double noise, std::uint64_t seed, double span = 0.02) {
    SplitMix64 rng(seed);
    std::vector<TimedPoint> pts;
    for (int i = 0; i < n; ++i) {
        const double t = span * rng.Uniform();
        const double phi = 2.0 * kPi * rng.Uniform();
        Eigen::Vector2d p = EllipsePoint(tr.center + tr.velocity * t, tr.a, tr.b, tr.alpha, phi);
        if (noise > 0.0) p += noise * Eigen::Vector2d(rng.Gaussian(), rng.Gaussian());
        pts.push_back({t, p});
    }
    return pts;
}

// the same geometric ellipse can also be written with swapped axes and a quarter turn
void CheckShape(const Ellipse2D &e, double a, double b, double alpha, double tol) {
    const double d0 = std::abs(e.semi_axes.x() - a) + std::abs(e.semi_axes.y() - b);
    const double d1 = std::abs(e.semi_axes.x() - b) + std::abs(e.semi_axes.y() - a);
    const double want = d0 <= d1 ? alpha : alpha + kPi / 2.0;
    CHECK(std::min(d0, d1) < tol);
    double dAlpha = std::fmod(std::abs(e.alpha - want), kPi);
    dAlpha = std::min(dAlpha, kPi - dAlpha);
    CHECK(dAlpha < tol);
}

TimeVaryingEllipse RandomEllipse(SplitMix64 &rng) {
    TimeVaryingEllipse e;
    e.t_ref = rng.Uniform();
    e.cx = {rng.Uniform() * 200 - 100, rng.Uniform() * 300};
    e.cy = {rng.Uniform() * 200 - 100, rng.Uniform() * 300};
    e.lx = {rng.Uniform() * 20 - 10, 3 + rng.Uniform() * 20};
    e.ly = {rng.Uniform() * 20 - 10, 3 + rng.Uniform() * 20};
    e.alpha = rng.Uniform() * kPi;
    return e;
}

// on-curve point of a parameterized ellipse, computed by inverting the rotation directly
TimedPoint OnCurve(const TimeVaryingEllipse &e, double t, double phi) {
    const double tau = t - e.t_ref;
    const Eigen::Vector2d xr(e.cx(tau) + e.lx(tau) * std::cos(phi), e.cy(tau) + e.ly(tau) * std::sin(phi));
    const double c = std::cos(e.alpha), s = std::sin(e.alpha);
    return {t, Eigen::Vector2d(c * xr.x() + s * xr.y(), -s * xr.x() + c * xr.y())};
}

}  // namespace

TEST_CASE("residual examples") {
    TimeVaryingEllipse unit;
    unit.lx = {0.0, 1.0};
    unit.ly = {0.0, 1.0};
    CHECK(Residual(unit, Event{0.37, 1, 0, 1}) == 0.0);
    CHECK(Residual(unit, Event{5.0, 0, 1, 1}) == 0.0);
    CHECK(Residual(unit, Event{0.0, 0, 0, 1}) == -1.0);

    TimeVaryingEllipse moving;
    moving.cx = {10.0, 0.0};
    moving.lx = {0.0, 3.0};
    moving.ly = {0.0, 3.0};
    for (double tau : {0.0, 0.013, 0.5, 2.0})
        CHECK(std::abs(Residual(moving, TimedPoint{tau, Eigen::Vector2d(10.0 * tau + 3.0, 0.0)})) < 1e-9);
}

TEST_CASE("residual vanishes on random on-curve points") {
    SplitMix64 rng(31);
    for (int i = 0; i < 2000; ++i) {
        const auto e = RandomEllipse(rng);
        const double t = e.t_ref + (rng.Uniform() - 0.5) * 0.04;
        const auto p = OnCurve(e, t, 2 * kPi * rng.Uniform());
        const double scale = std::pow(std::max(e.lx(t - e.t_ref), e.ly(t - e.t_ref)), 4);
        CHECK(std::abs(Residual(e, p)) <= 1e-9 * std::max(1.0, scale));
    }
}

TEST_CASE("half-turn reparameterization leaves residuals unchanged") {
    SplitMix64 rng(32);
    for (int i = 0; i < 300; ++i) {
        const auto e = RandomEllipse(rng);
        // R(alpha + pi) = -R(alpha), so the rotated-frame center changes sign
        auto flipped = e;
        flipped.alpha = e.alpha + kPi;
        flipped.cx = {-e.cx.slope, -e.cx.offset};
        flipped.cy = {-e.cy.slope, -e.cy.offset};
        // a quarter turn swaps the roles of the two axes
        auto swapped = e;
        swapped.alpha = e.alpha + kPi / 2.0;
        swapped.lx = e.ly;
        swapped.ly = e.lx;
        swapped.cx = {-e.cy.slope, -e.cy.offset};
        swapped.cy = e.cx;
        for (int k = 0; k < 10; ++k) {
            const TimedPoint p{e.t_ref + rng.Uniform() * 0.02,
                               Eigen::Vector2d(rng.Uniform() * 300, rng.Uniform() * 300)};
            const double r = Residual(e, p);
            const double tol = 1e-9 * std::max(1.0, std::abs(r));
            CHECK(std::abs(Residual(flipped, p) - r) < tol);
            CHECK(std::abs(Residual(swapped, p) - r) < tol);
        }
        const auto canon = Canonicalize(flipped);
        CHECK(canon.alpha >= 0.0);
        CHECK(canon.alpha < kPi);
        CHECK(canon.alpha == doctest::Approx(e.alpha));
        CHECK(canon.cx.offset == doctest::Approx(e.cx.offset));
        CHECK(canon.cy.slope == doctest::Approx(e.cy.slope));
        CHECK((Canonicalize(e).ImageCenter(0.3) - e.ImageCenter(0.3)).norm() < 1e-9);
    }
}

TEST_CASE("sampling constant and linear polynomials") {
    TimeVaryingEllipse e;
    e.t_ref = 1.0;
    e.cx = {0.0, 5.0};
    e.cy = {0.0, 7.0};
    e.lx = {0.0, 4.0};
    e.ly = {0.0, 2.0};
    for (double t : {0.0, 1.0, 3.5}) {
        const auto s = Sample(e, t);
        REQUIRE(s);
        CHECK(s->center == Eigen::Vector2d(5.0, 7.0));
        CHECK(s->semi_axes == Eigen::Vector2d(4.0, 2.0));
        CHECK(s->alpha == 0.0);
    }
    e.cx = {10.0, 5.0};
    const auto s = Sample(e, 1.02);
    REQUIRE(s);
    CHECK(s->center.x() == doctest::Approx(5.2));

    e.lx = {-100.0, 1.0};
    CHECK_FALSE(Sample(e, 1.02));
}

TEST_CASE("sampling is linear in time") {
    SplitMix64 rng(33);
    for (int i = 0; i < 200; ++i) {
        const auto e = RandomEllipse(rng);
        const double t1 = e.t_ref + rng.Uniform() * 0.02, t2 = e.t_ref + rng.Uniform() * 0.02;
        const auto mid = e.ImageCenter(0.5 * (t1 + t2));
        CHECK((mid - 0.5 * (e.ImageCenter(t1) + e.ImageCenter(t2))).norm() < 1e-9);
    }
}

TEST_CASE("too few events is reported") {
    std::vector<Event> five;
    for (int i = 0; i < 5; ++i) five.push_back({0.001 * i, 10 + i, 10, 1});
    const auto r = FitTimeVaryingEllipse(five, 0.0);
    CHECK(r.status == EllipseFitStatus::InsufficientEvents);
    CHECK_FALSE(r.ellipse);
}

TEST_CASE("a line of points is not an ellipse") {
    std::vector<TimedPoint> line;
    for (int i = 0; i < 30; ++i) line.push_back({0.0005 * i, Eigen::Vector2d(i, 2.0 * i)});
    const auto r = FitTimeVaryingEllipse(line, 0.0);
    CHECK(r.status != EllipseFitStatus::Ok);
    CHECK_FALSE(r.ellipse);
}

TEST_CASE("static conic fit recovers an exact ellipse") {
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 50; ++i) pts.push_back(EllipsePoint({160, 120}, 20, 12, 0.3, 2 * kPi * i / 50));
    const auto e = FitStaticEllipse(pts);
    REQUIRE(e);
    CHECK((e->center - Eigen::Vector2d(160, 120)).norm() < 1e-9);
    CheckShape(Ellipse2D{e->center, e->semi_axes, e->alpha}, 20, 12, 0.3, 1e-9);
}

TEST_CASE("static time-varying fit, noise free") {
    const auto pts = SampleTruth(Truth{}, 100, 0.0, 1);
    const auto r = FitTimeVaryingEllipse(pts, 0.0);
    REQUIRE(r.status == EllipseFitStatus::Ok);
    REQUIRE(r.ellipse);
    const auto &e = *r.ellipse;
    CHECK(r.final_cost <= r.initial_cost);
    for (double t : {0.0, 0.01, 0.02}) {
        const auto s = Sample(e, t);
        REQUIRE(s);
        CHECK((s->center - Eigen::Vector2d(160, 120)).norm() < 1e-6);
        CheckShape(*s, 20, 12, 0.3, 1e-6);
    }
    CHECK((e.ImageCenter(1.0) - e.ImageCenter(0.0)).norm() < 1e-6);
    CHECK(std::abs(e.lx.slope) < 1e-6);
    CHECK(std::abs(e.ly.slope) < 1e-6);
    for (const auto &p : pts) CHECK(std::abs(Residual(e, p)) < 1e-9 * 20 * 20 * 12 * 12);
}

TEST_CASE("translating time-varying fit, noise free") {
    Truth tr;
    tr.velocity = Eigen::Vector2d(50, -30);
    const auto pts = SampleTruth(tr, 100, 0.0, 2);
    const auto r = FitTimeVaryingEllipse(pts, 0.0);
    REQUIRE(r.ellipse);
    const auto &e = *r.ellipse;
    const Eigen::Vector2d vel = e.ImageCenter(1.0) - e.ImageCenter(0.0);
    CHECK((vel - tr.velocity).norm() < 0.01 * tr.velocity.norm());
    CHECK((vel - tr.velocity).norm() < 1e-6);
    for (double t : {0.0, 0.01, 0.02}) {
        const auto s = Sample(e, t);
        REQUIRE(s);
        CHECK((s->center - (tr.center + tr.velocity * t)).norm() < 1e-6);
        CheckShape(*s, 20, 12, 0.3, 1e-6);
    }
}

TEST_CASE("200 noisy points locate the center to 0.05 px") {
    for (const Eigen::Vector2d &v : {Eigen::Vector2d(0, 0), Eigen::Vector2d(50, -30)}) {
        Truth tr;
        tr.velocity = v;
        for (std::uint64_t seed = 100; seed < 110; ++seed) {
            const auto r = FitTimeVaryingEllipse(SampleTruth(tr, 200, 0.2, seed), 0.0);
            REQUIRE(r.ellipse);
            CHECK(r.final_cost <= r.initial_cost);
            const auto s = Sample(*r.ellipse, 0.01);
            REQUIRE(s);
            CAPTURE(seed);
            CHECK((s->center - (tr.center + tr.velocity * 0.01)).norm() < 0.05);
        }
    }
}

TEST_CASE("fits of simulated circles land on the projected centers") {
    const BoardSpec board{};
    const auto traj = MakeOrbitTrajectory(board, OrbitParams{});
    const auto intr = ns_evgrid_test::TruthIntrinsics();
    for (double t0 : {2.0, 7.5}) {
        const auto sim = RenderEdgeEvents(board, traj, intr, SensorGeometry{}, SimConfig{}, t0, t0 + 0.02);
        std::map<int, std::vector<Event>> perCircle;
        for (std::size_t i = 0; i < sim.events.size(); ++i) perCircle[sim.tags[i].circle].push_back(sim.events[i]);
        const auto truth = GroundTruthCenters(board, traj, intr, t0 + 0.02);
        int good = 0;
        for (const auto &[circle, events] : perCircle) {
            const auto r = FitTimeVaryingEllipse(events, t0);
            if (!r.ellipse) continue;
            const auto s = Sample(*r.ellipse, t0 + 0.02);
            good += s && (s->center - truth[static_cast<std::size_t>(circle)]).norm() < 0.5;
        }
        CAPTURE(t0);
        CHECK(good >= 40);
    }
}
