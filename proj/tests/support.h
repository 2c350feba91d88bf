// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_TESTS_SUPPORT_H
#define EVGRID_TESTS_SUPPORT_H

#include "evgrid/camera.h"
#include "evgrid/event_io.h"
#include "evgrid/grid.h"

#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ns_evgrid_test {

// reference DAVIS346-class intrinsics used as simulator truth throughout the suites
inline ns_evgrid::Intrinsics TruthIntrinsics() {
    return ns_evgrid::Intrinsics{255.98, 256.10, 169.85, 121.73, -0.423, 0.254, 8.29e-4, 6.33e-4};
}

inline std::filesystem::path ScratchDir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("evgrid_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string ReadFile(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void WriteFile(const std::filesystem::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// point on an ellipse written directly from its geometric definition (not through the library)
inline Eigen::Vector2d EllipsePoint(const Eigen::Vector2d &center, double a, double b, double alpha, double phi) {
    // x' = R(alpha) x, so image-frame axes are the rows of R(alpha)
    const double c = std::cos(alpha), s = std::sin(alpha);
    const Eigen::Vector2d ex(c, -s), ey(s, c);
    return center + a * std::cos(phi) * ex + b * std::sin(phi) * ey;
}

// board -> camera pose looking at the board centroid from 'distance' with small tilts
inline ns_evgrid::Pose LookAtBoard(const ns_evgrid::BoardSpec &board, double distance, double rx, double ry, double rz,
                                   const Eigen::Vector3d &shift = Eigen::Vector3d::Zero()) {
    const auto pts = ns_evgrid::BoardPoints(board);
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto &p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    const Eigen::Matrix3d R = (Eigen::AngleAxisd(rz, Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(ry, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(rx, Eigen::Vector3d::UnitX()))
                                  .toRotationMatrix();
    ns_evgrid::Pose pose;
    pose.rotation = R;
    pose.translation = Eigen::Vector3d(0.0, 0.0, distance) + shift - R * centroid;
    return pose;
}

// noise-free observation of every board point through the distorted pinhole model
inline ns_evgrid::GridObservation ObserveBoard(const ns_evgrid::BoardSpec &board,
                                               const ns_evgrid::Pose &pose,
                                               const ns_evgrid::Intrinsics &intr,
                                               double t = 0.0) {
    ns_evgrid::GridObservation obs;
    obs.t = t;
    for (const auto &p : ns_evgrid::BoardPoints(board)) {
        obs.correspondences.push_back({ns_evgrid::Project(pose.Apply(p), intr), p});
    }
    return obs;
}

}  // namespace ns_evgrid_test

#endif
