// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_NORMAL_FLOW_H
#define EVGRID_NORMAL_FLOW_H

#include "evgrid/event_io.h"

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ns_evgrid {

/**
 * spatiotemporal plane a*x + b*y + t + c = 0 (time coefficient fixed to one), so the local
 * time surface reads t(x, y) = -(a*x + b*y + c)
 */
struct PlaneModel {
    double a = 0.0;  // s/px
    double b = 0.0;  // s/px
    double c = 0.0;  // s

    [[nodiscard]] double Residual(double x, double y, double t) const { return a * x + b * y + t + c; }
};

struct NormalFlow {
    Eigen::Vector2d v = Eigen::Vector2d::Zero();  // px/s
};

struct FlowEvent {
    Event event;
    NormalFlow flow;
    double inlier_rate = 0.0;
};

struct RansacParams {
    int iterations = 50;
    // adaptive threshold: max(floor, frac * time span of the neighborhood)
    double inlier_thresh_frac = 0.2;
    double inlier_thresh_floor = 1e-3;
    // absolute threshold in seconds; overrides the adaptive rule when set
    std::optional<double> inlier_threshold;
    int min_points = 5;
};

struct PlaneFit {
    PlaneModel plane;
    double inlier_rate = 0.0;
    int inliers = 0;
    double threshold = 0.0;  // s, the inlier threshold that was applied
};

struct FlowParams {
    int radius = 2;
    RansacParams ransac{};
    double r_thd = 0.6;
    // drop events that are themselves outliers of the plane fitted around them
    bool require_center_inlier = true;
    std::uint64_t seed = 0x5EEDULL;
};

// active events within Chebyshev distance 'radius' of the center pixel (center included)
std::vector<Event> Neighborhood(const ActiveEventSurface &surface, const Event &center, int radius);

/**
 * RANSAC over 3-point hypotheses followed by a least-squares polish on the consensus set.
 * Returns nullopt for too few points or when every sampled triple is collinear in (x, y).
 */
std::optional<PlaneFit> FitPlaneRansac(std::span<const Event> neighbors,
                                       const RansacParams &params,
                                       std::uint64_t seed);

// n = -(a, b) / (a^2 + b^2); nullopt for flat planes (a^2 + b^2 < 1e-18)
std::optional<NormalFlow> FlowFromPlane(const PlaneModel &plane);

// inlier events (rate > r_thd) with their flows, row-major by pixel
std::vector<FlowEvent> EstimateFlows(const ActiveEventSurface &surface, const FlowParams &params);

}  // namespace ns_evgrid

#endif
