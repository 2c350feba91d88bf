// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/app.h"

#include "evgrid/common.h"
#include "evgrid/report.h"
#include "evgrid/sim.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

namespace ns_evgrid {

void RunConfig::Validate() const {
    if (!(window_len > 0.0)) throw Error("window length must be positive");
    if (threads < 0) throw Error("thread count must be non-negative");
    if (geometry.width <= 0 || geometry.height <= 0) throw Error("sensor size must be positive");
    if (min_observations < 1) throw Error("calib.min_observations must be at least 1");
    if (!(center_noise_px >= 0.0)) throw Error("calib.center_noise_px must be non-negative");
    if (recognition.flow.radius < 1) throw Error("nf.radius must be at least 1");
    if (recognition.cluster.min_size < 1) throw Error("cluster.min_size must be at least 1");
}

void ApplyKeyValues(const KeyValues &kv, RunConfig &c) {
    c.window_len = kv.GetDouble("window", c.window_len);
    c.seed = kv.GetU64("seed", c.seed);
    c.geometry.width = static_cast<int>(kv.GetInt("sensor.width", c.geometry.width));
    c.geometry.height = static_cast<int>(kv.GetInt("sensor.height", c.geometry.height));

    auto &nf = c.recognition.flow;
    nf.radius = static_cast<int>(kv.GetInt("nf.radius", nf.radius));
    nf.ransac.iterations = static_cast<int>(kv.GetInt("nf.ransac_iters", nf.ransac.iterations));
    nf.ransac.inlier_thresh_frac = kv.GetDouble("nf.inlier_thresh_frac", nf.ransac.inlier_thresh_frac);
    nf.ransac.inlier_thresh_floor = kv.GetDouble("nf.inlier_thresh_floor", nf.ransac.inlier_thresh_floor);
    if (kv.Has("nf.inlier_threshold")) nf.ransac.inlier_threshold = kv.GetDouble("nf.inlier_threshold", 0.0);
    nf.ransac.min_points = static_cast<int>(kv.GetInt("nf.min_points", nf.ransac.min_points));
    nf.r_thd = kv.GetDouble("nf.r_thd", nf.r_thd);
    if (kv.Has("nf.seed")) c.nf_seed = kv.GetU64("nf.seed", 0);
    if (kv.Has("nf.require_center_inlier")) {
        nf.require_center_inlier = kv.GetInt("nf.require_center_inlier", 1) != 0;
    }

    auto &cl = c.recognition.cluster;
    cl.min_size = static_cast<std::size_t>(kv.GetInt("cluster.min_size", static_cast<long long>(cl.min_size)));
    cl.theta_thd = kv.GetDouble("cluster.theta_thd", cl.theta_thd);

    auto &el = c.recognition.ellipse;
    el.min_events = static_cast<std::size_t>(kv.GetInt("ellipse.min_events", static_cast<long long>(el.min_events)));
    el.max_iters = static_cast<int>(kv.GetInt("ellipse.max_iters", el.max_iters));
    el.tol = kv.GetDouble("ellipse.tol", el.tol);
    el.min_axis = kv.GetDouble("ellipse.min_axis", el.min_axis);

    auto &gr = c.recognition.grid;
    gr.gate_frac = kv.GetDouble("grid.gate_frac", gr.gate_frac);
    gr.seed_neighbors = static_cast<int>(kv.GetInt("grid.seed_neighbors", gr.seed_neighbors));

    c.min_observations =
        static_cast<std::size_t>(kv.GetInt("calib.min_observations", static_cast<long long>(c.min_observations)));
    c.ba.huber_delta = kv.GetDouble("calib.huber_delta", c.ba.huber_delta);
    c.ba.max_iters = static_cast<int>(kv.GetInt("calib.max_iters", c.ba.max_iters));
    c.init.n_trials = static_cast<int>(kv.GetInt("calib.init_trials", c.init.n_trials));
    c.init.views_per_trial = static_cast<int>(kv.GetInt("calib.views_per_trial", c.init.views_per_trial));
    c.init.refine_iters = static_cast<int>(kv.GetInt("calib.init_refine_iters", c.init.refine_iters));
    c.center_noise_px = kv.GetDouble("calib.center_noise_px", c.center_noise_px);

    kv.RequireAllUsed("config");
}

nlohmann::ordered_json ConfigEcho(const RunConfig &c) {
    nlohmann::ordered_json j;
    j["window"] = c.window_len;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["sensor.width"] = c.geometry.width;
    j["sensor.height"] = c.geometry.height;
    const auto &nf = c.recognition.flow;
    j["nf.radius"] = nf.radius;
    j["nf.ransac_iters"] = nf.ransac.iterations;
    j["nf.inlier_thresh_frac"] = nf.ransac.inlier_thresh_frac;
    j["nf.inlier_thresh_floor"] = nf.ransac.inlier_thresh_floor;
    if (nf.ransac.inlier_threshold) {
        j["nf.inlier_threshold"] = *nf.ransac.inlier_threshold;
    } else {
        j["nf.inlier_threshold"] = nullptr;
    }
    j["nf.min_points"] = nf.ransac.min_points;
    j["nf.r_thd"] = nf.r_thd;
    j["nf.require_center_inlier"] = nf.require_center_inlier;
    j["nf.seed"] = nf.seed;
    j["cluster.min_size"] = c.recognition.cluster.min_size;
    j["cluster.theta_thd"] = c.recognition.cluster.theta_thd;
    const auto &el = c.recognition.ellipse;
    j["ellipse.min_events"] = el.min_events;
    j["ellipse.max_iters"] = el.max_iters;
    j["ellipse.tol"] = el.tol;
    j["ellipse.min_axis"] = el.min_axis;
    j["grid.gate_frac"] = c.recognition.grid.gate_frac;
    j["grid.seed_neighbors"] = c.recognition.grid.seed_neighbors;
    j["calib.min_observations"] = c.min_observations;
    j["calib.huber_delta"] = c.ba.huber_delta;
    j["calib.max_iters"] = c.ba.max_iters;
    j["calib.init_trials"] = c.init.n_trials;
    j["calib.views_per_trial"] = c.init.views_per_trial;
    j["calib.init_refine_iters"] = c.init.refine_iters;
    j["calib.init_seed"] = c.init.seed;
    j["calib.center_noise_px"] = c.center_noise_px;
    return j;
}

std::vector<std::optional<GridObservation>> RecognizeAll(std::span<const EventWindow> windows,
                                                         const SensorGeometry &geometry,
                                                         const BoardSpec &board,
                                                         const RecognitionConfig &config,
                                                         int threads) {
    std::vector<std::optional<GridObservation>> out(windows.size());
    if (windows.empty()) return out;
    const auto workers = static_cast<std::size_t>(std::max(1, threads));

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failureMutex;
    auto work = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= windows.size()) return;
            try {
                out[i] = RecognizeWindow(windows[i], geometry, board, config);
            } catch (...) {
                std::lock_guard lock(failureMutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, windows.size()); ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

void PerturbCenters(std::vector<std::optional<GridObservation>> &perWindow, double sigma, std::uint64_t seed) {
    if (!(sigma > 0.0)) return;
    for (std::size_t w = 0; w < perWindow.size(); ++w) {
        if (!perWindow[w]) continue;
        SplitMix64 rng(SplitMix64::Mix(seed, w));
        for (auto &c : perWindow[w]->correspondences) {
            c.image.x() += sigma * rng.Gaussian();
            c.image.y() += sigma * rng.Gaussian();
        }
    }
}

CalibrationResult CalibrateObservations(std::span<const GridObservation> observations, const RunConfig &config) {
    if (observations.size() < config.min_observations) {
        throw Error("insufficient observations: " + std::to_string(observations.size()) + " < " +
                    std::to_string(config.min_observations));
    }
    const Intrinsics init = InitIntrinsics(observations, config.init);
    spdlog::info("initial intrinsics: fx={:.3f} fy={:.3f} cx={:.3f} cy={:.3f} k1={:.4f} k2={:.4f}", init.fx, init.fy,
                 init.cx, init.cy, init.k1, init.k2);

    std::vector<GridObservation> kept;
    std::vector<Pose> poses;
    for (const auto &obs : observations) {
        try {
            poses.push_back(SolvePnp(obs, init));
            kept.push_back(obs);
        } catch (const Error &e) {
            spdlog::warn("view at t={:.6f} dropped: {}", obs.t, e.what());
        }
    }
    if (kept.size() < config.min_observations) {
        throw Error("insufficient observations after pose recovery: " + std::to_string(kept.size()));
    }
    return BundleAdjust(kept, init, poses, config.ba);
}

namespace {

RunConfig Effective(RunConfig c) {
    if (c.threads == 0) c.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    c.recognition.flow.seed = c.nf_seed.value_or(c.seed);
    c.init.seed = SplitMix64::Mix(c.seed, 1);
    return c;
}

BoardSpec LoadBoard(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open board file '" + path + "'");
    return ParseBoardSpec(in);
}

std::vector<Event> LoadEvents(const std::string &path, const SensorGeometry &geometry) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open event file '" + path + "'");
    return ParseEventStream(in, geometry);
}

}  // namespace

int RunCalibrate(const RunConfig &input) {
    try {
        input.Validate();
        const RunConfig config = Effective(input);
        const BoardSpec board = LoadBoard(config.board_path);
        const auto events = LoadEvents(config.events_path, config.geometry);
        spdlog::info("loaded {} events", events.size());

        const auto windows = WindowEvents(events, config.window_len);
        auto perWindow = RecognizeAll(windows, config.geometry, board, config.recognition, config.threads);
        PerturbCenters(perWindow, config.center_noise_px, SplitMix64::Mix(config.seed, 2));

        std::vector<GridObservation> observations;
        for (std::size_t i = 0; i < perWindow.size(); ++i) {
            spdlog::debug("window {} [{:.6f}, {:.6f}): {}", i, windows[i].t_start, windows[i].t_end,
                          perWindow[i] ? "grid detected" : "no grid");
            if (perWindow[i]) observations.push_back(*perWindow[i]);
        }
        const double rate = windows.empty() ? 0.0 : static_cast<double>(observations.size()) / windows.size();
        spdlog::info("grid detected in {} of {} windows ({:.2f}%)", observations.size(), windows.size(),
                     100.0 * rate);

        const auto result = CalibrateObservations(observations, config);
        spdlog::info("calibrated: fx={:.4f} fy={:.4f} cx={:.4f} cy={:.4f} k1={:.5f} k2={:.5f} p1={:.6f} p2={:.6f}",
                     result.intrinsics.fx, result.intrinsics.fy, result.intrinsics.cx, result.intrinsics.cy,
                     result.intrinsics.k1, result.intrinsics.k2, result.intrinsics.p1, result.intrinsics.p2);
        spdlog::info("sigma_proj = {:.4f} px over {} views", result.rms_reproj, result.poses.size());

        auto echo = ConfigEcho(config);
        echo["board.rows"] = board.rows;
        echo["board.cols"] = board.cols;
        echo["board.spacing_m"] = board.spacing;
        echo["board.circle_radius_m"] = board.circle_radius;
        echo["windows"] = windows.size();
        echo["detections"] = observations.size();

        std::ofstream out(config.out_path, std::ios::binary);
        if (!out) throw Error("cannot open report file '" + config.out_path + "'");
        WriteReport(result, config.geometry, echo, out);
        out.close();
        if (!out) throw Error("failed writing report file '" + config.out_path + "'");
        return 0;
    } catch (const std::exception &e) {
        spdlog::error("calibration failed: {}", e.what());
        std::error_code ec;
        std::filesystem::remove(input.out_path, ec);
        return 1;
    }
}

int RunSimulate(const std::string &scenarioPath, const std::string &outEvents, const std::string &outTruth) {
    try {
        const Scenario s = LoadScenario(scenarioPath);
        const Trajectory traj = MakeOrbitTrajectory(s.board, s.orbit, s.t0);
        const auto sim =
            RenderEdgeEvents(s.board, traj, s.intrinsics, s.geometry, s.sim, s.t0, s.t0 + s.orbit.duration);
        // jitter and noise may step slightly outside the sensor time range; keep events on the sensor
        std::vector<Event> events;
        events.reserve(sim.events.size());
        for (const auto &e : sim.events) {
            if (s.geometry.Contains(e.x, e.y)) events.push_back(e);
        }
        spdlog::info("simulated {} events over {:.3f} s", events.size(), s.orbit.duration);

        std::ofstream ev(outEvents, std::ios::binary);
        if (!ev) throw Error("cannot open '" + outEvents + "'");
        WriteEventStream(ev, events);
        ev.close();
        if (!ev) throw Error("failed writing '" + outEvents + "'");

        std::ofstream tr(outTruth, std::ios::binary);
        if (!tr) throw Error("cannot open '" + outTruth + "'");
        WriteTruth(tr, s, traj);
        tr.close();
        if (!tr) throw Error("failed writing '" + outTruth + "'");
        return 0;
    } catch (const std::exception &e) {
        spdlog::error("simulation failed: {}", e.what());
        return 1;
    }
}

namespace {

class Raster {
public:
    Raster(int w, int h)
        : _w(w), _h(h), _rgb(static_cast<std::size_t>(w) * h * 3, 40) {}

    void Set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= _w || y >= _h) return;
        const auto i = (static_cast<std::size_t>(y) * _w + x) * 3;
        _rgb[i] = r;
        _rgb[i + 1] = g;
        _rgb[i + 2] = b;
    }

    void Line(Eigen::Vector2d a, Eigen::Vector2d b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
        const int n = static_cast<int>(std::ceil((b - a).norm())) + 1;
        for (int k = 0; k <= n; ++k) {
            const Eigen::Vector2d p = a + (b - a) * (static_cast<double>(k) / n);
            Set(static_cast<int>(std::lround(p.x())), static_cast<int>(std::lround(p.y())), r, g, bl);
        }
    }

    void Write(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot open '" + path + "'");
        out << "P6\n" << _w << ' ' << _h << "\n255\n";
        out.write(reinterpret_cast<const char *>(_rgb.data()), static_cast<std::streamsize>(_rgb.size()));
        if (!out) throw Error("failed writing '" + path + "'");
    }

private:
    int _w, _h;
    std::vector<std::uint8_t> _rgb;
};

std::ofstream OpenDump(const std::filesystem::path &dir, const std::string &name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot open '" + (dir / name).string() + "'");
    out.precision(17);
    return out;
}

}  // namespace

int RunInspect(const RunConfig &input, std::size_t windowIndex, const std::string &outDir) {
    try {
        input.Validate();
        const RunConfig config = Effective(input);
        const BoardSpec board = LoadBoard(config.board_path);
        const auto events = LoadEvents(config.events_path, config.geometry);
        const auto windows = WindowEvents(events, config.window_len);
        if (windowIndex >= windows.size()) {
            throw Error("window index " + std::to_string(windowIndex) + " out of range (" +
                        std::to_string(windows.size()) + " windows)");
        }
        const auto &window = windows[windowIndex];
        RecognitionTrace trace;
        const auto obs = RecognizeWindow(window, config.geometry, board, config.recognition, &trace);

        const std::filesystem::path dir(outDir);
        std::filesystem::create_directories(dir);

        {
            auto f = OpenDump(dir, "active_events.txt");
            for (const auto &e : trace.active_events) f << e.t << ' ' << e.x << ' ' << e.y << ' ' << e.p << '\n';
        }
        {
            auto f = OpenDump(dir, "flows.txt");
            for (const auto &fe : trace.flow_events) {
                f << fe.event.t << ' ' << fe.event.x << ' ' << fe.event.y << ' ' << fe.event.p << ' '
                  << fe.flow.v.x() << ' ' << fe.flow.v.y() << ' ' << fe.inlier_rate << '\n';
            }
        }
        {
            auto f = OpenDump(dir, "clusters.txt");
            auto m = OpenDump(dir, "cluster_members.txt");
            for (const auto &c : trace.clusters) {
                f << c.id << ' ' << c.polarity << ' ' << ToString(c.label) << ' ' << c.members.size() << ' '
                  << c.mean_pos.x() << ' ' << c.mean_pos.y() << ' ' << c.mean_flow_dir.x() << ' '
                  << c.mean_flow_dir.y() << '\n';
                for (const auto &fe : c.members) m << c.id << ' ' << fe.event.x << ' ' << fe.event.y << '\n';
            }
        }
        {
            auto f = OpenDump(dir, "pairs.txt");
            for (const auto &p : trace.pairs) {
                f << trace.clusters[p.chasing].id << ' ' << trace.clusters[p.running].id << ' ' << p.distance << '\n';
            }
        }
        {
            auto f = OpenDump(dir, "ellipses.txt");
            for (const auto &el : trace.ellipses) {
                const auto s = Sample(el, window.t_end);
                if (!s) continue;
                f << s->center.x() << ' ' << s->center.y() << ' ' << s->semi_axes.x() << ' ' << s->semi_axes.y()
                  << ' ' << s->alpha << '\n';
            }
        }
        {
            auto f = OpenDump(dir, "grid.txt");
            if (trace.grid) {
                for (std::size_t k = 0; k < trace.grid->indices.size(); ++k) {
                    const auto &c = trace.centers[trace.grid->indices[k]];
                    f << k << ' ' << trace.grid->indices[k] << ' ' << c.x() << ' ' << c.y() << '\n';
                }
            }
        }

        Raster img(config.geometry.width, config.geometry.height);
        for (const auto &e : trace.active_events) {
            if (e.p > 0) {
                img.Set(e.x, e.y, 230, 60, 60);
            } else {
                img.Set(e.x, e.y, 60, 120, 230);
            }
        }
        for (const auto &el : trace.ellipses) {
            const auto s = Sample(el, window.t_end);
            if (!s) continue;
            const Eigen::Matrix2d Rt = Eigen::Rotation2Dd(s->alpha).toRotationMatrix().transpose();
            Eigen::Vector2d prev;
            for (int k = 0; k <= 64; ++k) {
                const double phi = 2.0 * std::numbers::pi * k / 64;
                const Eigen::Vector2d p =
                    s->center + Rt * Eigen::Vector2d(s->semi_axes.x() * std::cos(phi), s->semi_axes.y() * std::sin(phi));
                if (k > 0) img.Line(prev, p, 240, 220, 60);
                prev = p;
            }
        }
        if (trace.grid) {
            for (std::size_t k = 1; k < trace.grid->indices.size(); ++k) {
                img.Line(trace.centers[trace.grid->indices[k - 1]], trace.centers[trace.grid->indices[k]], 80, 230,
                         80);
            }
        }
        img.Write((dir / "overlay.ppm").string());

        spdlog::info("window {}: {} active events, {} flows, {} clusters, {} pairs, {} ellipses, grid {}",
                     windowIndex, trace.active_events.size(), trace.flow_events.size(), trace.clusters.size(),
                     trace.pairs.size(), trace.ellipses.size(), obs ? "found" : "not found");
        return 0;
    } catch (const std::exception &e) {
        spdlog::error("inspect failed: {}", e.what());
        return 1;
    }
}

}  // namespace ns_evgrid
