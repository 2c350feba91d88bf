// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/sim.h"

#include "evgrid/common.h"
#include "evgrid/config.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <numbers>

namespace ns_evgrid {

Trajectory::Trajectory(std::vector<Keyframe> keyframes)
    : _keys(std::move(keyframes)) {
    if (_keys.empty()) {
        throw Error("trajectory needs at least one keyframe");
    }
    for (std::size_t i = 1; i < _keys.size(); ++i) {
        if (!(_keys[i].t > _keys[i - 1].t)) {
            throw Error("trajectory keyframe times must be strictly increasing");
        }
    }
}

Pose Trajectory::At(double t) const {
    if (_keys.empty()) {
        throw Error("empty trajectory");
    }
    if (t <= _keys.front().t) return _keys.front().pose;
    if (t >= _keys.back().t) return _keys.back().pose;

    auto it = std::upper_bound(_keys.begin(), _keys.end(), t,
                               [](double v, const Keyframe &k) { return v < k.t; });
    const Keyframe &b = *it;
    const Keyframe &a = *(it - 1);
    const double s = (t - a.t) / (b.t - a.t);

    const Eigen::Quaterniond qa(a.pose.rotation), qb(b.pose.rotation);
    Pose out;
    out.rotation = qa.slerp(s, qb).toRotationMatrix();
    out.translation = (1.0 - s) * a.pose.translation + s * b.pose.translation;
    return out;
}

Trajectory MakeOrbitTrajectory(const BoardSpec &board, const OrbitParams &p, double tStart) {
    board.Validate();
    if (!(p.duration > 0.0) || !(p.keyframe_dt > 0.0) || !(p.distance > 0.0)) {
        throw Error("orbit duration, keyframe_dt and distance must be positive");
    }
    const auto pts = BoardPoints(board);
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto &q : pts) centroid += q;
    centroid /= static_cast<double>(pts.size());

    const auto n = static_cast<std::size_t>(std::ceil(p.duration / p.keyframe_dt)) + 1;
    std::vector<Trajectory::Keyframe> keys;
    keys.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * p.keyframe_dt;
        const double loop = p.loop_rate * t;
        Eigen::Vector3d offset(p.loop_radius * std::cos(loop) + p.sweep_x * std::sin(p.sweep_x_rate * t),
                               p.loop_radius * std::sin(loop) + p.sweep_y * std::sin(p.sweep_y_rate * t + 0.7),
                               p.distance + p.sweep_z * std::sin(p.sweep_z_rate * t + 1.9));
        const Eigen::Matrix3d R =
            (Eigen::AngleAxisd(p.roll * std::sin(p.roll_rate * t + 0.3), Eigen::Vector3d::UnitZ()) *
             Eigen::AngleAxisd(p.tilt_y * std::sin(p.tilt_y_rate * t + 2.1), Eigen::Vector3d::UnitY()) *
             Eigen::AngleAxisd(p.tilt_x * std::sin(p.tilt_x_rate * t + 0.9), Eigen::Vector3d::UnitX()))
                .toRotationMatrix();
        Pose pose;
        pose.rotation = R;
        pose.translation = offset - R * centroid;
        keys.push_back({tStart + t, pose});
    }
    return Trajectory(std::move(keys));
}

namespace {

struct PlaneFrame {
    Eigen::Matrix3d rotation;
    Eigen::Vector3d translation;
    Eigen::Vector3d normal;
    double offset;

    explicit PlaneFrame(const Pose &pose)
        : rotation(pose.rotation),
          translation(pose.translation),
          normal(pose.rotation.col(2)),
          offset(normal.dot(pose.translation)) {}

    // board-plane (x, y) hit by the ray, or false when the plane is behind / parallel
    bool Intersect(const Eigen::Vector3d &ray, Eigen::Vector2d &xy) const {
        const double den = normal.dot(ray);
        if (std::abs(den) < 1e-12) return false;
        const double s = offset / den;
        if (!(s > 0.0)) return false;
        const Eigen::Vector3d d = s * ray - translation;
        xy = {rotation.col(0).dot(d), rotation.col(1).dot(d)};
        return true;
    }
};

struct PixelBox {
    int x0, y0, x1, y1;  // inclusive
};

std::optional<PixelBox> CircleBox(const Eigen::Vector3d &center,
                                  double radius,
                                  const Pose &a,
                                  const Pose &b,
                                  const Intrinsics &intr,
                                  const SensorGeometry &geometry) {
    constexpr int Samples = 16;
    double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
    for (const Pose *pose : {&a, &b}) {
        for (int k = 0; k < Samples; ++k) {
            const double phi = 2.0 * std::numbers::pi * k / Samples;
            const Eigen::Vector3d pw = center + radius * Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0);
            const Eigen::Vector3d pc = pose->Apply(pw);
            if (pc.z() <= 1e-6) return std::nullopt;
            const Eigen::Vector2d px = Project(pc, intr);
            xmin = std::min(xmin, px.x());
            xmax = std::max(xmax, px.x());
            ymin = std::min(ymin, px.y());
            ymax = std::max(ymax, px.y());
        }
    }
    constexpr double Margin = 2.0;
    PixelBox box{static_cast<int>(std::floor(xmin - Margin)), static_cast<int>(std::floor(ymin - Margin)),
                 static_cast<int>(std::ceil(xmax + Margin)), static_cast<int>(std::ceil(ymax + Margin))};
    box.x0 = std::max(box.x0, 0);
    box.y0 = std::max(box.y0, 0);
    box.x1 = std::min(box.x1, geometry.width - 1);
    box.y1 = std::min(box.y1, geometry.height - 1);
    if (box.x0 > box.x1 || box.y0 > box.y1) return std::nullopt;
    return box;
}

void AddNoiseAndFinish(SimOutput &out, const SensorGeometry &geometry, const SimConfig &cfg, double t0, double t1) {
    if (cfg.jitter_sigma > 0.0) {
        SplitMix64 rng(SplitMix64::Mix(cfg.seed, 2));
        for (auto &e : out.events) e.t += cfg.jitter_sigma * rng.Gaussian();
    }
    if (cfg.noise_rate > 0.0 && t1 > t0) {
        // Poisson process over the whole sensor, exponential inter-arrival times
        SplitMix64 rng(SplitMix64::Mix(cfg.seed, 3));
        const double rate = cfg.noise_rate * static_cast<double>(geometry.PixelCount());
        double t = t0;
        while (true) {
            double u = rng.Uniform();
            while (u <= 0.0) u = rng.Uniform();
            t -= std::log(u) / rate;
            if (t >= t1) break;
            const auto idx = rng.Below(geometry.PixelCount());
            Event e;
            e.t = t;
            e.x = static_cast<int>(idx % geometry.width);
            e.y = static_cast<int>(idx / geometry.width);
            e.p = rng.Below(2) == 0 ? -1 : 1;
            out.events.push_back(e);
            out.tags.push_back(EventTag{});
        }
    }

    std::vector<std::size_t> order(out.events.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return out.events[i].t < out.events[j].t; });
    SimOutput sorted;
    sorted.events.reserve(order.size());
    sorted.tags.reserve(order.size());
    for (auto i : order) {
        sorted.events.push_back(out.events[i]);
        sorted.tags.push_back(out.tags[i]);
    }
    out = std::move(sorted);
}

void ValidateConfig(const SimConfig &cfg) {
    if (!(cfg.contrast_threshold > 0.0)) throw Error("contrast_threshold must be positive");
    if (!(cfg.noise_rate >= 0.0)) throw Error("noise_rate must be non-negative");
    if (!(cfg.jitter_sigma >= 0.0)) throw Error("jitter_sigma must be non-negative");
    if (!(cfg.substep > 0.0)) throw Error("substep must be positive");
}

}  // namespace

SimOutput RenderEdgeEvents(const BoardSpec &board,
                           const Trajectory &traj,
                           const Intrinsics &intr,
                           const SensorGeometry &geometry,
                           const SimConfig &cfg,
                           double t0,
                           double t1) {
    ValidateConfig(cfg);
    board.Validate();
    SimOutput out;
    const bool edgesVisible = cfg.board_contrast >= cfg.contrast_threshold;

    if (edgesVisible && t1 > t0) {
        std::vector<Eigen::Vector3d> rays(geometry.PixelCount());
        for (int y = 0; y < geometry.height; ++y) {
            for (int x = 0; x < geometry.width; ++x) {
                const Eigen::Vector2d n = PixelToNormalized({x, y}, intr, 50);
                rays[geometry.Index(x, y)] = {n.x(), n.y(), 1.0};
            }
        }
        const auto centers = BoardPoints(board);
        const double r2 = board.circle_radius * board.circle_radius;
        const auto steps = static_cast<long long>(std::ceil((t1 - t0) / cfg.substep - 1e-9));

        Pose poseA = traj.At(t0);
        for (long long k = 0; k < steps; ++k) {
            const double ta = t0 + static_cast<double>(k) * cfg.substep;
            const double tb = std::min(t0 + static_cast<double>(k + 1) * cfg.substep, t1);
            const Pose poseB = traj.At(tb);
            const PlaneFrame fa(poseA), fb(poseB);

            for (std::size_t c = 0; c < centers.size(); ++c) {
                const auto box = CircleBox(centers[c], board.circle_radius, poseA, poseB, intr, geometry);
                if (!box) continue;
                const Eigen::Vector2d cxy = centers[c].head<2>();
                for (int y = box->y0; y <= box->y1; ++y) {
                    for (int x = box->x0; x <= box->x1; ++x) {
                        const auto &ray = rays[geometry.Index(x, y)];
                        Eigen::Vector2d qa, qb;
                        if (!fa.Intersect(ray, qa) || !fb.Intersect(ray, qb)) continue;
                        // |qa + s (qb - qa) - c|^2 = r^2 for s in [0, 1)
                        const Eigen::Vector2d d = qb - qa, f = qa - cxy;
                        const double a = d.squaredNorm();
                        if (a < 1e-30) continue;
                        const double b = 2.0 * f.dot(d);
                        const double disc = b * b - 4.0 * a * (f.squaredNorm() - r2);
                        if (!(disc > 0.0)) continue;
                        const double sq = std::sqrt(disc);
                        const double roots[2] = {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)};
                        for (int side = 0; side < 2; ++side) {
                            const double s = roots[side];
                            if (s < 0.0 || s >= 1.0) continue;
                            const bool entering = side == 0;  // pixel turns dark
                            out.events.push_back(Event{ta + s * (tb - ta), x, y, entering ? -1 : 1});
                            out.tags.push_back(EventTag{static_cast<int>(c), entering});
                        }
                    }
                }
            }
            poseA = poseB;
        }
    }
    AddNoiseAndFinish(out, geometry, cfg, t0, t1);
    return out;
}

std::vector<Eigen::Vector2d> GroundTruthCenters(const BoardSpec &board,
                                                const Trajectory &traj,
                                                const Intrinsics &intr,
                                                double t) {
    const Pose pose = traj.At(t);
    std::vector<Eigen::Vector2d> out;
    for (const auto &p : BoardPoints(board)) {
        const Eigen::Vector3d pc = pose.Apply(p);
        if (pc.z() <= 0.0) {
            throw Error("circle center behind the camera");
        }
        out.push_back(Project(pc, intr));
    }
    return out;
}

SimOutput RenderTranslatingEdge(const EdgeScene &scene,
                                const SensorGeometry &geometry,
                                const SimConfig &cfg,
                                double t0,
                                double t1) {
    ValidateConfig(cfg);
    if (!(scene.speed > 0.0)) throw Error("edge speed must be positive");
    const Eigen::Vector2d u = scene.normal.normalized();
    SimOutput out;
    if (cfg.board_contrast >= cfg.contrast_threshold) {
        for (int y = 0; y < geometry.height; ++y) {
            for (int x = 0; x < geometry.width; ++x) {
                const double t = (u.dot(Eigen::Vector2d(x, y)) - scene.offset) / scene.speed;
                if (t >= t0 && t < t1) {
                    out.events.push_back(Event{t, x, y, -1});
                    out.tags.push_back(EventTag{0, true});
                }
            }
        }
    }
    AddNoiseAndFinish(out, geometry, cfg, t0, t1);
    return out;
}

Scenario DefaultScenario() {
    Scenario s;
    s.intrinsics = Intrinsics{255.98, 256.10, 169.85, 121.73, -0.423, 0.254, 8.29e-4, 6.33e-4};
    return s;
}

Scenario ParseScenario(std::istream &in) {
    const KeyValues kv = ParseKeyValues(in);
    Scenario s = DefaultScenario();

    s.geometry.width = static_cast<int>(kv.GetInt("sensor.width", s.geometry.width));
    s.geometry.height = static_cast<int>(kv.GetInt("sensor.height", s.geometry.height));
    if (s.geometry.width <= 0 || s.geometry.height <= 0) throw Error("scenario: sensor size must be positive");

    auto &K = s.intrinsics;
    K.fx = kv.GetDouble("intr.fx", K.fx);
    K.fy = kv.GetDouble("intr.fy", K.fy);
    K.cx = kv.GetDouble("intr.cx", K.cx);
    K.cy = kv.GetDouble("intr.cy", K.cy);
    K.k1 = kv.GetDouble("intr.k1", K.k1);
    K.k2 = kv.GetDouble("intr.k2", K.k2);
    K.p1 = kv.GetDouble("intr.p1", K.p1);
    K.p2 = kv.GetDouble("intr.p2", K.p2);
    if (!(K.fx > 0.0) || !(K.fy > 0.0)) throw Error("scenario: focal lengths must be positive");

    s.board.rows = static_cast<int>(kv.GetInt("board.rows", s.board.rows));
    s.board.cols = static_cast<int>(kv.GetInt("board.cols", s.board.cols));
    s.board.spacing = kv.GetDouble("board.spacing_m", s.board.spacing);
    s.board.circle_radius = kv.GetDouble("board.circle_radius_m", s.board.spacing / 5.0);
    s.board.Validate();

    auto &o = s.orbit;
    o.duration = kv.GetDouble("duration", o.duration);
    o.keyframe_dt = kv.GetDouble("orbit.keyframe_dt", o.keyframe_dt);
    o.distance = kv.GetDouble("orbit.distance", o.distance);
    o.loop_radius = kv.GetDouble("orbit.loop_radius", o.loop_radius);
    o.loop_rate = kv.GetDouble("orbit.loop_rate", o.loop_rate);
    o.sweep_x = kv.GetDouble("orbit.sweep_x", o.sweep_x);
    o.sweep_x_rate = kv.GetDouble("orbit.sweep_x_rate", o.sweep_x_rate);
    o.sweep_y = kv.GetDouble("orbit.sweep_y", o.sweep_y);
    o.sweep_y_rate = kv.GetDouble("orbit.sweep_y_rate", o.sweep_y_rate);
    o.sweep_z = kv.GetDouble("orbit.sweep_z", o.sweep_z);
    o.sweep_z_rate = kv.GetDouble("orbit.sweep_z_rate", o.sweep_z_rate);
    o.tilt_x = kv.GetDouble("orbit.tilt_x", o.tilt_x);
    o.tilt_x_rate = kv.GetDouble("orbit.tilt_x_rate", o.tilt_x_rate);
    o.tilt_y = kv.GetDouble("orbit.tilt_y", o.tilt_y);
    o.tilt_y_rate = kv.GetDouble("orbit.tilt_y_rate", o.tilt_y_rate);
    o.roll = kv.GetDouble("orbit.roll", o.roll);
    o.roll_rate = kv.GetDouble("orbit.roll_rate", o.roll_rate);

    s.sim.contrast_threshold = kv.GetDouble("sim.contrast_threshold", s.sim.contrast_threshold);
    s.sim.board_contrast = kv.GetDouble("sim.board_contrast", s.sim.board_contrast);
    s.sim.noise_rate = kv.GetDouble("sim.noise_rate", s.sim.noise_rate);
    s.sim.jitter_sigma = kv.GetDouble("sim.jitter_sigma", s.sim.jitter_sigma);
    s.sim.substep = kv.GetDouble("sim.substep", s.sim.substep);
    s.sim.seed = kv.GetU64("sim.seed", s.sim.seed);
    ValidateConfig(s.sim);

    s.t0 = kv.GetDouble("t0", s.t0);
    s.truth_step = kv.GetDouble("truth_step", s.truth_step);
    if (!(s.truth_step > 0.0)) throw Error("scenario: truth_step must be positive");

    kv.RequireAllUsed("scenario");
    return s;
}

Scenario LoadScenario(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open scenario file '" + path + "'");
    }
    return ParseScenario(in);
}

void WriteTruth(std::ostream &out, const Scenario &s, const Trajectory &traj) {
    const auto old = out.precision(17);
    const auto &K = s.intrinsics;
    out << "# intr.fx = " << K.fx << "\n# intr.fy = " << K.fy << "\n# intr.cx = " << K.cx
        << "\n# intr.cy = " << K.cy << "\n# intr.k1 = " << K.k1 << "\n# intr.k2 = " << K.k2
        << "\n# intr.p1 = " << K.p1 << "\n# intr.p2 = " << K.p2 << '\n';
    out << "# sensor.width = " << s.geometry.width << "\n# sensor.height = " << s.geometry.height << '\n';
    out << "# board.rows = " << s.board.rows << "\n# board.cols = " << s.board.cols
        << "\n# board.spacing_m = " << s.board.spacing << "\n# board.circle_radius_m = " << s.board.circle_radius
        << '\n';
    out << "# sim.contrast_threshold = " << s.sim.contrast_threshold << "\n# sim.board_contrast = "
        << s.sim.board_contrast << "\n# sim.noise_rate = " << s.sim.noise_rate << "\n# sim.jitter_sigma = "
        << s.sim.jitter_sigma << "\n# sim.substep = " << s.sim.substep << "\n# sim.seed = " << s.sim.seed << '\n';
    out << "# t0 = " << s.t0 << "\n# duration = " << s.orbit.duration << "\n# truth_step = " << s.truth_step
        << '\n';

    const auto rows = static_cast<long long>(std::floor(s.orbit.duration / s.truth_step + 1e-9));
    for (long long k = 0; k <= rows; ++k) {
        const double t = s.t0 + static_cast<double>(k) * s.truth_step;
        const auto centers = GroundTruthCenters(s.board, traj, K, t);
        for (std::size_t i = 0; i < centers.size(); ++i) {
            out << t << ' ' << i << ' ' << centers[i].x() << ' ' << centers[i].y() << '\n';
        }
    }
    out.precision(old);
}

}  // namespace ns_evgrid
