// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/camera.h"
#include "evgrid/common.h"

#include <Eigen/Dense>
#include <cmath>

namespace ns_evgrid {

Eigen::Matrix3d Intrinsics::K() const {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = fx;
    K(1, 1) = fy;
    K(0, 2) = cx;
    K(1, 2) = cy;
    return K;
}

Eigen::Matrix3d Hat(const Eigen::Vector3d &w) {
    Eigen::Matrix3d m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

Eigen::Matrix3d ExpSO3(const Eigen::Vector3d &w) {
    const double theta = w.norm();
    if (theta < 1e-12) return Eigen::Matrix3d::Identity() + Hat(w);
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Eigen::Vector3d LogSO3(const Eigen::Matrix3d &R) {
    const Eigen::AngleAxisd aa(R);
    return aa.angle() * aa.axis();
}

Eigen::Matrix3d OrthonormalizeRotation(const Eigen::Matrix3d &M) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * D * svd.matrixV().transpose();
}

Eigen::Vector2d Distort(const Eigen::Vector2d &n, const Intrinsics &in) {
    const double x = n.x(), y = n.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + in.k1 * r2 + in.k2 * r2 * r2;
    return {x * radial + 2.0 * in.p1 * x * y + in.p2 * (r2 + 2.0 * x * x),
            y * radial + 2.0 * in.p2 * x * y + in.p1 * (r2 + 2.0 * y * y)};
}

Eigen::Vector2d Undistort(const Eigen::Vector2d &d, const Intrinsics &in, int iterations) {
    Eigen::Vector2d n = d;
    for (int i = 0; i < iterations; ++i) {
        const double x = n.x(), y = n.y();
        const double r2 = x * x + y * y;
        const double radial = 1.0 + in.k1 * r2 + in.k2 * r2 * r2;
        const Eigen::Vector2d tangential(2.0 * in.p1 * x * y + in.p2 * (r2 + 2.0 * x * x),
                                         2.0 * in.p2 * x * y + in.p1 * (r2 + 2.0 * y * y));
        n = (d - tangential) / radial;
    }
    return n;
}

Eigen::Vector2d PixelToNormalized(const Eigen::Vector2d &px, const Intrinsics &in, int iterations) {
    const Eigen::Vector2d d((px.x() - in.cx) / in.fx, (px.y() - in.cy) / in.fy);
    return Undistort(d, in, iterations);
}

Eigen::Vector2d Project(const Eigen::Vector3d &pc, const Intrinsics &in) {
    if (!(pc.z() > 0.0)) throw Error("projection of a point with non-positive depth");
    const Eigen::Vector2d d = Distort(Eigen::Vector2d(pc.x() / pc.z(), pc.y() / pc.z()), in);
    return {in.fx * d.x() + in.cx, in.fy * d.y() + in.cy};
}

std::optional<ProjectionJacobian> ProjectWithJacobian(const Eigen::Vector3d &pc, const Intrinsics &in) {
    if (!(pc.z() > 0.0)) return std::nullopt;
    const double iz = 1.0 / pc.z();
    const double x = pc.x() * iz, y = pc.y() * iz;
    const double r2 = x * x + y * y;
    const double radial = 1.0 + in.k1 * r2 + in.k2 * r2 * r2;
    const double xd = x * radial + 2.0 * in.p1 * x * y + in.p2 * (r2 + 2.0 * x * x);
    const double yd = y * radial + 2.0 * in.p2 * x * y + in.p1 * (r2 + 2.0 * y * y);

    ProjectionJacobian out;
    out.pixel = {in.fx * xd + in.cx, in.fy * yd + in.cy};

    out.d_intr.setZero();
    out.d_intr(0, 0) = xd;
    out.d_intr(1, 1) = yd;
    out.d_intr(0, 2) = 1.0;
    out.d_intr(1, 3) = 1.0;
    out.d_intr(0, 4) = in.fx * x * r2;
    out.d_intr(1, 4) = in.fy * y * r2;
    out.d_intr(0, 5) = in.fx * x * r2 * r2;
    out.d_intr(1, 5) = in.fy * y * r2 * r2;
    out.d_intr(0, 6) = in.fx * 2.0 * x * y;
    out.d_intr(1, 6) = in.fy * (r2 + 2.0 * y * y);
    out.d_intr(0, 7) = in.fx * (r2 + 2.0 * x * x);
    out.d_intr(1, 7) = in.fy * 2.0 * x * y;

    // d(distorted) / d(normalized)
    const double dRadial = in.k1 + 2.0 * in.k2 * r2;  // d radial / d r2
    Eigen::Matrix2d dDist;
    dDist(0, 0) = radial + x * dRadial * 2.0 * x + 2.0 * in.p1 * y + in.p2 * 6.0 * x;
    dDist(0, 1) = x * dRadial * 2.0 * y + 2.0 * in.p1 * x + in.p2 * 2.0 * y;
    dDist(1, 0) = y * dRadial * 2.0 * x + 2.0 * in.p2 * y + in.p1 * 2.0 * x;
    dDist(1, 1) = radial + y * dRadial * 2.0 * y + 2.0 * in.p2 * x + in.p1 * 6.0 * y;

    Eigen::Matrix<double, 2, 3> dNorm;
    dNorm << iz, 0.0, -x * iz, 0.0, iz, -y * iz;

    const Eigen::Matrix2d F = (Eigen::Matrix2d() << in.fx, 0.0, 0.0, in.fy).finished();
    out.d_point = F * dDist * dNorm;
    return out;
}

}  // namespace ns_evgrid
