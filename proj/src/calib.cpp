// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/calib.h"
#include "evgrid/common.h"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ns_evgrid {

namespace {

double Huber(double sq, double delta) {
    if (delta <= 0.0 || sq <= delta * delta) return sq;
    return 2.0 * delta * std::sqrt(sq) - delta * delta;
}

double HuberWeight(double sq, double delta) {
    if (delta <= 0.0 || sq <= delta * delta) return 1.0;
    return delta / std::sqrt(sq);
}

Eigen::Matrix<double, 6, 1> ZhangRow(const Eigen::Matrix3d &H, int i, int j) {
    Eigen::Matrix<double, 6, 1> v;
    v << H(0, i) * H(0, j), H(0, i) * H(1, j) + H(1, i) * H(0, j), H(1, i) * H(1, j),
        H(2, i) * H(0, j) + H(0, i) * H(2, j), H(2, i) * H(1, j) + H(1, i) * H(2, j), H(2, i) * H(2, j);
    return v;
}

struct NormalEquations {
    Eigen::Matrix<double, 8, 8> A;
    Eigen::Matrix<double, 8, 1> gi;
    std::vector<Eigen::Matrix<double, 8, 6>> B;
    std::vector<Eigen::Matrix<double, 6, 6>> C;
    std::vector<Eigen::Matrix<double, 6, 1>> gp;
};

bool BuildNormalEquations(std::span<const GridObservation> obs,
                          const Intrinsics &intr,
                          std::span<const Pose> poses,
                          double delta,
                          NormalEquations &ne) {
    ne.A.setZero();
    ne.gi.setZero();
    ne.B.assign(obs.size(), Eigen::Matrix<double, 8, 6>::Zero());
    ne.C.assign(obs.size(), Eigen::Matrix<double, 6, 6>::Zero());
    ne.gp.assign(obs.size(), Eigen::Matrix<double, 6, 1>::Zero());
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const Pose &pose = poses[k];
        for (const auto &c : obs[k].correspondences) {
            const Eigen::Vector3d rp = pose.rotation * c.board;
            const auto pj = ProjectWithJacobian(rp + pose.translation, intr);
            if (!pj) return false;
            const Eigen::Vector2d e = pj->pixel - c.image;
            const double w = HuberWeight(e.squaredNorm(), delta);
            Eigen::Matrix<double, 2, 6> Jp;
            Jp.leftCols<3>() = -pj->d_point * Hat(rp);
            Jp.rightCols<3>() = pj->d_point;
            const auto &Ji = pj->d_intr;
            ne.A.noalias() += w * Ji.transpose() * Ji;
            ne.gi.noalias() += w * Ji.transpose() * e;
            ne.B[k].noalias() += w * Ji.transpose() * Jp;
            ne.C[k].noalias() += w * Jp.transpose() * Jp;
            ne.gp[k].noalias() += w * Jp.transpose() * e;
        }
    }
    return true;
}

}  // namespace

double RobustCost(std::span<const GridObservation> observations,
                  const Intrinsics &intr,
                  std::span<const Pose> poses,
                  double huberDelta) {
    double cost = 0.0;
    for (std::size_t k = 0; k < observations.size(); ++k) {
        for (const auto &c : observations[k].correspondences) {
            const Eigen::Vector3d pc = poses[k].Apply(c.board);
            if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
            cost += Huber((Project(pc, intr) - c.image).squaredNorm(), huberDelta);
        }
    }
    return cost;
}

Intrinsics EstimateIntrinsicsClosedForm(std::span<const GridObservation> observations) {
    if (observations.size() < 2) throw Error("closed-form intrinsics need at least 2 views");

    // condition pixel coordinates before building the constraint system
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    std::size_t count = 0;
    for (const auto &o : observations) {
        for (const auto &c : o.correspondences) {
            mean += c.image;
            ++count;
        }
    }
    mean /= static_cast<double>(count);
    double spread = 0.0;
    for (const auto &o : observations) {
        for (const auto &c : o.correspondences) spread += (c.image - mean).norm();
    }
    spread /= static_cast<double>(count);
    if (!(spread > 0.0)) throw Error("closed-form intrinsics: degenerate image points");
    Eigen::Matrix3d N;
    N << 1.0 / spread, 0.0, -mean.x() / spread, 0.0, 1.0 / spread, -mean.y() / spread, 0.0, 0.0, 1.0;

    Eigen::MatrixXd V(2 * observations.size() + 1, 6);
    for (std::size_t k = 0; k < observations.size(); ++k) {
        std::vector<Eigen::Vector2d> src, dst;
        for (const auto &c : observations[k].correspondences) {
            src.push_back(c.board.head<2>());
            dst.push_back((N * c.image.homogeneous()).head<2>());
        }
        const auto H = EstimateHomography(src, dst);
        if (!H) throw Error("closed-form intrinsics: homography estimation failed");
        const Eigen::Matrix3d Hs = *H / H->norm();
        V.row(static_cast<Eigen::Index>(2 * k)) = ZhangRow(Hs, 0, 1).transpose();
        V.row(static_cast<Eigen::Index>(2 * k + 1)) = (ZhangRow(Hs, 0, 0) - ZhangRow(Hs, 1, 1)).transpose();
    }
    // zero skew
    V.row(V.rows() - 1) << 0.0, 1.0, 0.0, 0.0, 0.0, 0.0;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(V, Eigen::ComputeFullV);
    const auto sv = svd.singularValues();
    if (sv.size() < 6 || sv(4) < 1e-9 * sv(0)) {
        throw Error("closed-form intrinsics: rank-deficient constraints (views lack orientation diversity)");
    }
    Eigen::Matrix<double, 6, 1> b = svd.matrixV().col(5);
    const double B11 = b(0), B12 = b(1), B22 = b(2), B13 = b(3), B23 = b(4), B33 = b(5);
    const double den = B11 * B22 - B12 * B12;
    if (std::abs(den) < 1e-300 || std::abs(B11) < 1e-300) throw Error("closed-form intrinsics: degenerate solution");
    const double v0 = (B12 * B13 - B11 * B23) / den;
    const double lambda = B33 - (B13 * B13 + v0 * (B12 * B13 - B11 * B23)) / B11;
    const double alpha2 = lambda / B11, beta2 = lambda * B11 / den;
    if (!(alpha2 > 0.0) || !(beta2 > 0.0)) throw Error("closed-form intrinsics: no positive-definite solution");
    const double alpha = std::sqrt(alpha2), beta = std::sqrt(beta2);
    const double gamma = -B12 * alpha2 * beta / lambda;
    const double u0 = gamma * v0 / beta - B13 * alpha2 / lambda;

    // undo the conditioning: K = N^-1 * Kn
    Eigen::Matrix3d Kn;
    Kn << alpha, 0.0, u0, 0.0, beta, v0, 0.0, 0.0, 1.0;
    const Eigen::Matrix3d K = N.inverse() * Kn;
    Intrinsics out;
    out.fx = K(0, 0);
    out.fy = K(1, 1);
    out.cx = K(0, 2);
    out.cy = K(1, 2);
    if (!(out.fx > 0.0) || !(out.fy > 0.0) || !std::isfinite(out.cx) || !std::isfinite(out.cy)) {
        throw Error("closed-form intrinsics: invalid focal length");
    }
    return out;
}

Pose PoseFromHomography(const Eigen::Matrix3d &Hn) {
    Eigen::Vector3d h1 = Hn.col(0), h2 = Hn.col(1), h3 = Hn.col(2);
    const double scale = 2.0 / (h1.norm() + h2.norm());
    if (!std::isfinite(scale)) throw Error("pose from homography: degenerate homography");
    if (h3.z() * scale < 0.0) {
        h1 = -h1;
        h2 = -h2;
        h3 = -h3;
    }
    Eigen::Matrix3d R;
    R.col(0) = h1 * scale;
    R.col(1) = h2 * scale;
    R.col(2) = R.col(0).cross(R.col(1));
    Pose pose;
    pose.rotation = OrthonormalizeRotation(R);
    pose.translation = h3 * scale;
    return pose;
}

Intrinsics InitIntrinsics(std::span<const GridObservation> observations, const InitParams &params) {
    const auto per = static_cast<std::size_t>(params.views_per_trial);
    if (per < 2 || observations.size() < per) {
        throw Error("intrinsic initialization needs at least " + std::to_string(per) + " observations");
    }
    SplitMix64 rng(params.seed);
    std::optional<Intrinsics> best;
    double bestRms = std::numeric_limits<double>::infinity();
    std::string lastError = "no trials run";

    for (int trial = 0; trial < params.n_trials; ++trial) {
        // partial Fisher-Yates draw of distinct views
        std::vector<std::size_t> idx(observations.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < per; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.Below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        std::vector<GridObservation> sample;
        for (std::size_t i = 0; i < per; ++i) sample.push_back(observations[idx[i]]);

        try {
            const Intrinsics closed = EstimateIntrinsicsClosedForm(sample);
            std::vector<Pose> poses;
            const Eigen::Matrix3d Kinv = closed.K().inverse();
            for (const auto &o : sample) {
                std::vector<Eigen::Vector2d> src, dst;
                for (const auto &c : o.correspondences) {
                    src.push_back(c.board.head<2>());
                    dst.push_back((Kinv * c.image.homogeneous()).hnormalized());
                }
                const auto H = EstimateHomography(src, dst);
                if (!H) throw Error("homography estimation failed");
                poses.push_back(PoseFromHomography(*H));
            }
            BundleAdjustParams ba;
            ba.huber_delta = 0.0;
            ba.max_iters = params.refine_iters;
            const auto refined = BundleAdjust(sample, closed, poses, ba);
            if (std::isfinite(refined.rms_reproj) && refined.rms_reproj < bestRms) {
                bestRms = refined.rms_reproj;
                best = refined.intrinsics;
            }
        } catch (const Error &e) {
            lastError = e.what();
        }
    }
    if (!best) throw Error("intrinsic initialization failed in every trial: " + lastError);
    return *best;
}

Pose SolvePnp(const GridObservation &obs, const Intrinsics &intr) {
    if (obs.correspondences.size() < 4) throw Error("PnP needs at least 4 correspondences");
    std::vector<Eigen::Vector2d> src, dst;
    for (const auto &c : obs.correspondences) {
        if (std::abs(c.board.z()) > 1e-12) throw Error("PnP expects planar board points (z = 0)");
        src.push_back(c.board.head<2>());
        dst.push_back(PixelToNormalized(c.image, intr));
    }
    const auto H = EstimateHomography(src, dst);
    if (!H) throw Error("PnP: homography decomposition degenerate");
    const Pose init = PoseFromHomography(*H);

    BundleAdjustParams ba;
    ba.fix_intrinsics = true;
    ba.huber_delta = 0.0;
    ba.max_iters = 50;
    const GridObservation single[1] = {obs};
    const Pose poses[1] = {init};
    const auto res = BundleAdjust(single, intr, poses, ba);
    const Pose &out = res.poses.front().second;
    for (const auto &c : obs.correspondences) {
        if (!(out.Apply(c.board).z() > 0.0)) throw Error("PnP: board behind the camera");
    }
    return out;
}

CalibrationResult BundleAdjust(std::span<const GridObservation> observations,
                               const Intrinsics &initIntr,
                               std::span<const Pose> initPoses,
                               const BundleAdjustParams &params) {
    if (observations.size() != initPoses.size()) throw Error("bundle adjustment: view / pose count mismatch");
    if (observations.empty()) throw Error("bundle adjustment: no observations");

    Intrinsics intr = initIntr;
    std::vector<Pose> poses(initPoses.begin(), initPoses.end());
    double cost = RobustCost(observations, intr, poses, params.huber_delta);
    if (!std::isfinite(cost)) throw Error("bundle adjustment: initial projections are not finite");

    CalibrationResult result;
    result.cost_history.push_back(cost);
    double lambda = 1e-4;
    NormalEquations ne;
    bool converged = false;
    int it = 0;
    for (; it < params.max_iters; ++it) {
        if (!BuildNormalEquations(observations, intr, poses, params.huber_delta, ne)) {
            throw Error("bundle adjustment: point behind camera");
        }
        bool accepted = false;
        while (lambda < 1e12) {
            // Schur complement on the intrinsic block; pose blocks are 6x6 diagonal
            Eigen::Matrix<double, 8, 8> S = ne.A;
            Eigen::Matrix<double, 8, 1> rhs = -ne.gi;
            for (int d = 0; d < 8; ++d) S(d, d) += lambda * (ne.A(d, d) + 1e-12);
            std::vector<Eigen::Matrix<double, 6, 6>> Cinv(observations.size());
            bool ok = true;
            for (std::size_t k = 0; k < observations.size(); ++k) {
                Eigen::Matrix<double, 6, 6> C = ne.C[k];
                for (int d = 0; d < 6; ++d) C(d, d) += lambda * (ne.C[k](d, d) + 1e-12);
                Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(C);
                if (ldlt.info() != Eigen::Success) {
                    ok = false;
                    break;
                }
                Cinv[k] = ldlt.solve(Eigen::Matrix<double, 6, 6>::Identity());
                if (!params.fix_intrinsics) {
                    S.noalias() -= ne.B[k] * Cinv[k] * ne.B[k].transpose();
                    rhs.noalias() += ne.B[k] * Cinv[k] * ne.gp[k];
                }
            }
            if (!ok) throw Error("bundle adjustment: rank-deficient pose block");
            Eigen::Matrix<double, 8, 1> dIntr = Eigen::Matrix<double, 8, 1>::Zero();
            if (!params.fix_intrinsics) {
                Eigen::LDLT<Eigen::Matrix<double, 8, 8>> ldlt(S);
                if (ldlt.info() != Eigen::Success) throw Error("bundle adjustment: rank-deficient normal equations");
                dIntr = ldlt.solve(rhs);
            }
            Intrinsics cand = Intrinsics::FromVector(intr.ToVector() + dIntr);
            std::vector<Pose> candPoses = poses;
            for (std::size_t k = 0; k < observations.size(); ++k) {
                const Eigen::Matrix<double, 6, 1> dp = Cinv[k] * (-ne.gp[k] - ne.B[k].transpose() * dIntr);
                candPoses[k].rotation = ExpSO3(dp.head<3>()) * poses[k].rotation;
                candPoses[k].translation += dp.tail<3>();
            }
            const double newCost = (dIntr.allFinite() && cand.fx > 0.0 && cand.fy > 0.0)
                                       ? RobustCost(observations, cand, candPoses, params.huber_delta)
                                       : std::numeric_limits<double>::infinity();
            if (std::isfinite(newCost) && newCost < cost) {
                const double rel = (cost - newCost) / std::max(cost, 1e-300);
                intr = cand;
                poses = std::move(candPoses);
                cost = newCost;
                result.cost_history.push_back(cost);
                spdlog::debug("bundle adjustment step {}: cost {:.9e}", it, cost);
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                converged = rel < params.rel_tol;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted || converged) {
            ++it;
            break;
        }
    }

    result.iterations = it;
    result.intrinsics = intr;
    double sse = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < observations.size(); ++k) {
        double viewSse = 0.0;
        for (const auto &c : observations[k].correspondences) {
            const Eigen::Vector2d e = Project(poses[k].Apply(c.board), intr) - c.image;
            result.residuals.push_back(e);
            viewSse += e.squaredNorm();
        }
        const auto m = observations[k].correspondences.size();
        result.per_view_rms.push_back(m ? std::sqrt(viewSse / static_cast<double>(m)) : 0.0);
        result.poses.emplace_back(observations[k].t, poses[k]);
        sse += viewSse;
        n += m;
    }
    result.rms_reproj = n ? std::sqrt(sse / static_cast<double>(n)) : 0.0;
    return result;
}

}  // namespace ns_evgrid
