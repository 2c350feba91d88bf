// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_CAMERA_H
#define EVGRID_CAMERA_H

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace ns_evgrid {

/**
 * pinhole projection with radial-tangential distortion:
 *   x'' = x' (1 + k1 r^2 + k2 r^4) + 2 p1 x' y' + p2 (r^2 + 2 x'^2)
 *   y'' = y' (1 + k1 r^2 + k2 r^4) + 2 p2 x' y' + p1 (r^2 + 2 y'^2)
 *   u = fx x'' + cx,  v = fy y'' + cy
 */
struct Intrinsics {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    double k1 = 0.0, k2 = 0.0, p1 = 0.0, p2 = 0.0;

    static constexpr int Dim = 8;

    [[nodiscard]] Eigen::Matrix<double, 8, 1> ToVector() const {
        return (Eigen::Matrix<double, 8, 1>() << fx, fy, cx, cy, k1, k2, p1, p2).finished();
    }
    static Intrinsics FromVector(const Eigen::Matrix<double, 8, 1> &v) {
        return Intrinsics{v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7)};
    }
    [[nodiscard]] Eigen::Matrix3d K() const;
};

// world (board) to camera: p_c = R * p_w + t
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    [[nodiscard]] Eigen::Vector3d Apply(const Eigen::Vector3d &pw) const { return rotation * pw + translation; }
};

Eigen::Matrix3d Hat(const Eigen::Vector3d &w);
Eigen::Matrix3d ExpSO3(const Eigen::Vector3d &w);
Eigen::Vector3d LogSO3(const Eigen::Matrix3d &R);
// closest rotation in the Frobenius sense (det = +1)
Eigen::Matrix3d OrthonormalizeRotation(const Eigen::Matrix3d &M);

Eigen::Vector2d Distort(const Eigen::Vector2d &normalized, const Intrinsics &intr);

// inverse of Distort by fixed-point iteration
Eigen::Vector2d Undistort(const Eigen::Vector2d &distorted, const Intrinsics &intr, int iterations = 20);

// pixel -> undistorted normalized image coordinates
Eigen::Vector2d PixelToNormalized(const Eigen::Vector2d &pixel, const Intrinsics &intr, int iterations = 20);

// throws Error for points with non-positive depth
Eigen::Vector2d Project(const Eigen::Vector3d &pointCam, const Intrinsics &intr);

struct ProjectionJacobian {
    Eigen::Vector2d pixel;
    Eigen::Matrix<double, 2, 8> d_intr;
    Eigen::Matrix<double, 2, 3> d_point;  // w.r.t. the camera-frame point
};

// nullopt for non-positive depth
std::optional<ProjectionJacobian> ProjectWithJacobian(const Eigen::Vector3d &pointCam, const Intrinsics &intr);

}  // namespace ns_evgrid

#endif
