// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_APP_H
#define EVGRID_APP_H

#include "evgrid/calib.h"
#include "evgrid/config.h"
#include "evgrid/grid.h"
#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ns_evgrid {

struct RunConfig {
    std::string events_path;
    std::string board_path;
    std::string out_path = "report.json";
    double window_len = 0.02;  // s
    std::uint64_t seed = 0x5EEDULL;
    std::optional<std::uint64_t> nf_seed;  // defaults to 'seed'
    int threads = 0;  // 0: available parallelism

    SensorGeometry geometry{};
    RecognitionConfig recognition{};
    InitParams init{};
    BundleAdjustParams ba{};
    std::size_t min_observations = 10;
    // std of Gaussian noise added to every detected center before calibration (px)
    double center_noise_px = 0.0;

    void Validate() const;
};

/**
 * overrides 'config' with the dotted keys found in 'kv' (window, seed, sensor.*, nf.*,
 * cluster.*, ellipse.*, grid.*, calib.*). Unknown keys raise Error.
 */
void ApplyKeyValues(const KeyValues &kv, RunConfig &config);

// every effective parameter, defaults included
nlohmann::ordered_json ConfigEcho(const RunConfig &config);

// recognition of all windows on a worker pool; results keep the window order
std::vector<std::optional<GridObservation>> RecognizeAll(std::span<const EventWindow> windows,
                                                         const SensorGeometry &geometry,
                                                         const BoardSpec &board,
                                                         const RecognitionConfig &config,
                                                         int threads);

// adds seeded Gaussian noise to every image point; each window draws from its own stream
void PerturbCenters(std::vector<std::optional<GridObservation>> &perWindow, double sigma, std::uint64_t seed);

// initialization, per-view PnP and bundle adjustment; throws Error on failure
CalibrationResult CalibrateObservations(std::span<const GridObservation> observations, const RunConfig &config);

// command entry points: 0 on success, nonzero with a message on stderr otherwise
int RunCalibrate(const RunConfig &config);
int RunSimulate(const std::string &scenarioPath, const std::string &outEvents, const std::string &outTruth);
int RunInspect(const RunConfig &config, std::size_t windowIndex, const std::string &outDir);

}  // namespace ns_evgrid

#endif
