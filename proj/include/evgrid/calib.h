// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_CALIB_H
#define EVGRID_CALIB_H

#include "evgrid/camera.h"
#include "evgrid/grid.h"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace ns_evgrid {

struct CalibrationResult {
    Intrinsics intrinsics;
    std::vector<std::pair<double, Pose>> poses;  // (window time, board -> camera)
    double rms_reproj = 0.0;                     // plain RMS, no robust weighting
    std::vector<double> per_view_rms;
    std::vector<Eigen::Vector2d> residuals;      // projected - measured, observation order
    std::vector<double> cost_history;            // robust cost after every accepted step
    int iterations = 0;
};

struct BundleAdjustParams {
    double huber_delta = 1.0;  // px; <= 0 disables the robust loss
    int max_iters = 100;
    double rel_tol = 1e-12;
    bool fix_intrinsics = false;
};

/**
 * closed-form pinhole estimate (fx, fy, cx, cy; zero skew, zero distortion) from the plane
 * homographies of the given views. Throws Error when the constraint system is rank deficient,
 * e.g. all views share the same orientation.
 */
Intrinsics EstimateIntrinsicsClosedForm(std::span<const GridObservation> observations);

// board pose from a homography expressed in normalized image coordinates
Pose PoseFromHomography(const Eigen::Matrix3d &Hnorm);

struct InitParams {
    int n_trials = 10;
    int views_per_trial = 8;
    std::uint64_t seed = 0x5EEDULL;
    int refine_iters = 30;
};

/**
 * random-subset initialization: every trial samples views, runs the closed-form estimate and
 * a short refinement of all eight intrinsics; the trial with the lowest RMS wins
 */
Intrinsics InitIntrinsics(std::span<const GridObservation> observations, const InitParams &params = {});

Pose SolvePnp(const GridObservation &obs, const Intrinsics &intr);

CalibrationResult BundleAdjust(std::span<const GridObservation> observations,
                               const Intrinsics &initIntr,
                               std::span<const Pose> initPoses,
                               const BundleAdjustParams &params = {});

// robust cost used by the optimizer: sum of Huber(|e|^2)
double RobustCost(std::span<const GridObservation> observations,
                  const Intrinsics &intr,
                  std::span<const Pose> poses,
                  double huberDelta);

}  // namespace ns_evgrid

#endif
