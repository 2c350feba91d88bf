// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_ELLIPSE_H
#define EVGRID_ELLIPSE_H

#include "evgrid/cluster.h"
#include "evgrid/event_io.h"

#include <Eigen/Core>
#include <optional>
#include <span>

namespace ns_evgrid {

// p(tau) = slope * tau + offset
struct LinearPoly {
    double slope = 0.0;
    double offset = 0.0;

    [[nodiscard]] double operator()(double tau) const { return slope * tau + offset; }
};

/**
 * ellipse whose center and semi-axes move linearly in time, with a fixed rotation. A pixel x
 * is first rotated, x' = R(alpha) * x, and the center polynomials (cx, cy) live in that
 * rotated frame; lx is the semi-axis along x', ly along y'.
 */
struct TimeVaryingEllipse {
    double t_ref = 0.0;
    LinearPoly cx, cy, lx, ly;
    double alpha = 0.0;  // [0, pi)

    // center in image coordinates at absolute time t, i.e. R(alpha)^T * (cx, cy)
    [[nodiscard]] Eigen::Vector2d ImageCenter(double t) const;
};

struct Ellipse2D {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();  // image coordinates
    Eigen::Vector2d semi_axes = Eigen::Vector2d::Ones();
    double alpha = 0.0;
};

// static conic fit result in image coordinates; alpha follows the same x' = R(alpha) x convention
struct StaticEllipse {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    Eigen::Vector2d semi_axes = Eigen::Vector2d::Ones();
    double alpha = 0.0;
};

struct EllipseFitParams {
    std::size_t min_events = 12;
    int max_iters = 100;
    double tol = 1e-10;  // relative cost decrease
    double min_axis = 0.5;
};

enum class EllipseFitStatus { Ok, InsufficientEvents, NotAnEllipse, Diverged, AxisCollapse };

const char *ToString(EllipseFitStatus status);

struct EllipseFitResult {
    EllipseFitStatus status = EllipseFitStatus::Ok;
    std::optional<TimeVaryingEllipse> ellipse;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
};

// a sub-pixel sample of an edge; events are the integer-pixel special case
struct TimedPoint {
    double t = 0.0;
    Eigen::Vector2d xy = Eigen::Vector2d::Zero();
};

// algebraic residual ly^2 (x'-cx)^2 + lx^2 (y'-cy)^2 - lx^2 ly^2 at the event's local time
double Residual(const TimeVaryingEllipse &ellipse, const TimedPoint &point);
double Residual(const TimeVaryingEllipse &ellipse, const Event &event);

// direct least-squares ellipse-specific conic fit; nullopt when the conic is not an ellipse
std::optional<StaticEllipse> FitStaticEllipse(std::span<const Eigen::Vector2d> points);

EllipseFitResult FitTimeVaryingEllipse(std::span<const TimedPoint> points,
                                       double tRef,
                                       const EllipseFitParams &params = {});
EllipseFitResult FitTimeVaryingEllipse(std::span<const Event> events,
                                       double tRef,
                                       const EllipseFitParams &params = {});

// raw events of both clusters of a pair
EllipseFitResult FitTimeVaryingEllipse(const ClusterPair &pair,
                                       std::span<const EventCluster> clusters,
                                       double tRef,
                                       const EllipseFitParams &params = {});

// evaluates the polynomials at t; nullopt when an axis is non-positive there
std::optional<Ellipse2D> Sample(const TimeVaryingEllipse &ellipse, double t);

// brings alpha into [0, pi) without changing the represented curve
TimeVaryingEllipse Canonicalize(TimeVaryingEllipse ellipse);

}  // namespace ns_evgrid

#endif
