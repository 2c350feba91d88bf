// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_SIM_H
#define EVGRID_SIM_H

#include "evgrid/camera.h"
#include "evgrid/event_io.h"
#include "evgrid/grid.h"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace ns_evgrid {

// board -> camera poses, linear in translation and spherical-linear in rotation between keys
class Trajectory {
public:
    struct Keyframe {
        double t;
        Pose pose;
    };

    Trajectory() = default;
    explicit Trajectory(std::vector<Keyframe> keyframes);

    [[nodiscard]] Pose At(double t) const;  // clamped outside the key range
    [[nodiscard]] const std::vector<Keyframe> &Keyframes() const { return _keys; }
    [[nodiscard]] double StartTime() const { return _keys.front().t; }
    [[nodiscard]] double EndTime() const { return _keys.back().t; }

private:
    std::vector<Keyframe> _keys;
};

/**
 * smooth hand-held style motion in front of the camera: a fast small loop of the board
 * center (keeps every edge moving) superimposed on slow sweeps across the field of view and
 * slow tilts. Angles in radians, lengths in meters, rates in rad/s.
 */
struct OrbitParams {
    double duration = 30.0;
    double keyframe_dt = 0.005;
    double distance = 0.55;
    double loop_radius = 0.03;
    double loop_rate = 20.0;
    double sweep_x = 0.04, sweep_x_rate = 0.37;
    double sweep_y = 0.12, sweep_y_rate = 0.53;
    double sweep_z = 0.05, sweep_z_rate = 0.29;
    double tilt_x = 0.45, tilt_x_rate = 0.61;
    double tilt_y = 0.35, tilt_y_rate = 0.43;
    double roll = 0.12, roll_rate = 0.31;
};

// board centered on the optical axis at rest pose
Trajectory MakeOrbitTrajectory(const BoardSpec &board, const OrbitParams &params, double tStart = 0.0);

struct SimConfig {
    double contrast_threshold = 0.2;  // log-intensity step of the board edge must exceed it
    double board_contrast = 1.0;      // |log(light) - log(dark)|
    double noise_rate = 0.0;          // background events / pixel / second
    double jitter_sigma = 0.0;        // s
    double substep = 1e-3;            // s
    std::uint64_t seed = 1;
};

// generating circle and edge side of a simulated event (-1 for background noise)
struct EventTag {
    int circle = -1;
    bool leading = false;
};

struct SimOutput {
    std::vector<Event> events;
    std::vector<EventTag> tags;
};

/**
 * dark circles on a light board: a pixel emits one event whenever a circle boundary crosses
 * its center, negative when the circle arrives (leading edge) and positive when it leaves.
 * Timestamps are the interpolated crossing instants. Output is time sorted.
 */
SimOutput RenderEdgeEvents(const BoardSpec &board,
                           const Trajectory &traj,
                           const Intrinsics &intr,
                           const SensorGeometry &geometry,
                           const SimConfig &cfg,
                           double t0,
                           double t1);

// projections of all circle centers at time t (row-major board order)
std::vector<Eigen::Vector2d> GroundTruthCenters(const BoardSpec &board,
                                                const Trajectory &traj,
                                                const Intrinsics &intr,
                                                double t);


/**
 * straight dark/light boundary translating across the sensor in pixel space. The dark side
 * is {x : x . normal < offset + speed * t}, so the boundary advances along 'normal' and every
 * pixel it sweeps turns dark (negative polarity). Normal flow of every event is speed * normal.
 */
struct EdgeScene {
    Eigen::Vector2d normal = Eigen::Vector2d::UnitX();  // unit
    double speed = 100.0;                               // px/s, > 0
    double offset = 0.0;                                // px at t = 0
};

SimOutput RenderTranslatingEdge(const EdgeScene &scene,
                                const SensorGeometry &geometry,
                                const SimConfig &cfg,
                                double t0,
                                double t1);

// everything 'simulate' needs, loaded from a key-value scenario file
struct Scenario {
    SensorGeometry geometry{};
    Intrinsics intrinsics{};
    BoardSpec board{};
    OrbitParams orbit{};
    SimConfig sim{};
    double t0 = 0.0;
    double truth_step = 0.02;  // s between ground-truth rows of the sidecar
};

// defaults reproduce the 4x11 DAVIS346-like reference setup
Scenario DefaultScenario();
Scenario ParseScenario(std::istream &in);
Scenario LoadScenario(const std::string &path);

// "# key = value" header echoing the scenario, then one "t circle_index cx_px cy_px" row per circle
void WriteTruth(std::ostream &out, const Scenario &scenario, const Trajectory &traj);

}  // namespace ns_evgrid

#endif
