// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/normal_flow.h"
#include "evgrid/common.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace ns_evgrid {

namespace {

constexpr double kDegenerateDet = 1e-12;

// plane through three (x, y, t) samples; nullopt when collinear in (x, y)
std::optional<PlaneModel> PlaneFromTriple(const Eigen::Vector3d &p0,
                                          const Eigen::Vector3d &p1,
                                          const Eigen::Vector3d &p2) {
    Eigen::Matrix3d A;
    A << p0.x(), p0.y(), 1.0, p1.x(), p1.y(), 1.0, p2.x(), p2.y(), 1.0;
    const double det = A.determinant();
    if (std::abs(det) < kDegenerateDet) return std::nullopt;
    const Eigen::Vector3d rhs(-p0.z(), -p1.z(), -p2.z());
    const Eigen::Vector3d abc = A.partialPivLu().solve(rhs);
    return PlaneModel{abc(0), abc(1), abc(2)};
}

int CountInliers(const std::vector<Eigen::Vector3d> &pts,
                 const PlaneModel &plane,
                 double thd,
                 std::vector<char> *mask) {
    int count = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const bool in = std::abs(plane.Residual(pts[i].x(), pts[i].y(), pts[i].z())) <= thd;
        if (mask) (*mask)[i] = in;
        count += in;
    }
    return count;
}

// ordinary least squares on the selected points; nullopt if rank deficient
std::optional<PlaneModel> RefinePlane(const std::vector<Eigen::Vector3d> &pts,
                                      const std::vector<char> &mask) {
    Eigen::Matrix3d AtA = Eigen::Matrix3d::Zero();
    Eigen::Vector3d Atb = Eigen::Vector3d::Zero();
    int n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!mask[i]) continue;
        const Eigen::Vector3d row(pts[i].x(), pts[i].y(), 1.0);
        AtA += row * row.transpose();
        Atb -= row * pts[i].z();
        ++n;
    }
    if (n < 3) return std::nullopt;
    Eigen::LDLT<Eigen::Matrix3d> ldlt(AtA);
    if (ldlt.info() != Eigen::Success || std::abs(AtA.determinant()) < kDegenerateDet) {
        return std::nullopt;
    }
    const Eigen::Vector3d abc = ldlt.solve(Atb);
    if (!abc.allFinite()) return std::nullopt;
    return PlaneModel{abc(0), abc(1), abc(2)};
}

}  // namespace

std::vector<Event> Neighborhood(const ActiveEventSurface &surface, const Event &center, int radius) {
    std::vector<Event> out;
    const auto &geo = surface.Geometry();
    const int x0 = std::max(0, center.x - radius), x1 = std::min(geo.width - 1, center.x + radius);
    const int y0 = std::max(0, center.y - radius), y1 = std::min(geo.height - 1, center.y + radius);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (const Event *ev = surface.At(x, y)) out.push_back(*ev);
        }
    }
    return out;
}

std::optional<PlaneFit> FitPlaneRansac(std::span<const Event> neighbors,
                                       const RansacParams &params,
                                       std::uint64_t seed) {
    const int n = static_cast<int>(neighbors.size());
    if (n < std::max(3, params.min_points)) return std::nullopt;

    // shift times to the local minimum to keep the offset well conditioned
    double tMin = neighbors.front().t, tMax = neighbors.front().t;
    for (const auto &ev : neighbors) {
        tMin = std::min(tMin, ev.t);
        tMax = std::max(tMax, ev.t);
    }
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(neighbors.size());
    for (const auto &ev : neighbors) pts.emplace_back(ev.x, ev.y, ev.t - tMin);

    const double thd = params.inlier_threshold
                           ? *params.inlier_threshold
                           : std::max(params.inlier_thresh_floor,
                                      params.inlier_thresh_frac * (tMax - tMin));

    SplitMix64 rng(seed);
    std::optional<PlaneModel> best;
    int bestCount = -1;
    for (int it = 0; it < params.iterations; ++it) {
        const auto i0 = static_cast<int>(rng.Below(n));
        auto i1 = static_cast<int>(rng.Below(n - 1));
        if (i1 >= i0) ++i1;
        auto i2 = static_cast<int>(rng.Below(n - 2));
        if (i2 >= std::min(i0, i1)) ++i2;
        if (i2 >= std::max(i0, i1)) ++i2;

        const auto plane = PlaneFromTriple(pts[i0], pts[i1], pts[i2]);
        if (!plane) continue;
        const int count = CountInliers(pts, *plane, thd, nullptr);
        if (count > bestCount) {
            bestCount = count;
            best = plane;
        }
    }
    if (!best) return std::nullopt;

    std::vector<char> mask(pts.size(), 0);
    CountInliers(pts, *best, thd, &mask);
    if (const auto refined = RefinePlane(pts, mask)) {
        const int refinedCount = CountInliers(pts, *refined, thd, nullptr);
        if (refinedCount >= bestCount) {
            best = refined;
            bestCount = refinedCount;
        }
    }

    PlaneFit fit;
    fit.plane = *best;
    fit.plane.c -= tMin;
    fit.inliers = bestCount;
    fit.inlier_rate = static_cast<double>(bestCount) / static_cast<double>(n);
    fit.threshold = thd;
    return fit;
}

std::optional<NormalFlow> FlowFromPlane(const PlaneModel &plane) {
    const double sq = plane.a * plane.a + plane.b * plane.b;
    if (!(sq >= 1e-18) || !std::isfinite(sq)) return std::nullopt;
    NormalFlow flow;
    flow.v = -Eigen::Vector2d(plane.a, plane.b) / sq;
    return flow;
}

std::vector<FlowEvent> EstimateFlows(const ActiveEventSurface &surface, const FlowParams &params) {
    std::vector<FlowEvent> out;
    const auto &geo = surface.Geometry();
    for (const auto &ev : surface.ActiveEvents()) {
        const auto neighbors = Neighborhood(surface, ev, params.radius);
        const auto pixelSeed = SplitMix64::Mix(params.seed, geo.Index(ev.x, ev.y));
        const auto fit = FitPlaneRansac(neighbors, params.ransac, pixelSeed);
        if (!fit || !(fit->inlier_rate > params.r_thd)) continue;
        if (params.require_center_inlier && std::abs(fit->plane.Residual(ev.x, ev.y, ev.t)) > fit->threshold) {
            continue;
        }
        const auto flow = FlowFromPlane(fit->plane);
        if (!flow) continue;
        out.push_back(FlowEvent{ev, *flow, fit->inlier_rate});
    }
    return out;
}

}  // namespace ns_evgrid
