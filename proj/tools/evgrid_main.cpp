// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/app.h"
#include "evgrid/common.h"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace {

bool Given(const CLI::App &cmd, const std::string &name) {
    const auto *opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

// config file first, explicit flags on top
void WithConfig(ns_evgrid::RunConfig &config, const std::string &configPath, const CLI::App &cmd) {
    const std::string events = config.events_path, board = config.board_path, out = config.out_path;
    const double window = config.window_len;
    const auto seed = config.seed;
    const int threads = config.threads;
    if (!configPath.empty()) {
        ns_evgrid::ApplyKeyValues(ns_evgrid::LoadKeyValues(configPath), config);
    }
    if (Given(cmd, "--window")) config.window_len = window;
    if (Given(cmd, "--seed")) config.seed = seed;
    if (Given(cmd, "--threads")) config.threads = threads;
    config.events_path = events;
    config.board_path = board;
    config.out_path = out;
}

}  // namespace

int main(int argc, char **argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("evgrid"));
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"event-camera intrinsic calibration from circle-grid targets"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "log per-window outcomes");

    ns_evgrid::RunConfig calibCfg;
    std::string calibConfigPath;
    auto *calib = app.add_subcommand("calib", "recognize grids in an event file and calibrate intrinsics");
    calib->add_option("--events", calibCfg.events_path, "event file (t x y p)")->required();
    calib->add_option("--board", calibCfg.board_path, "board description")->required();
    calib->add_option("--window", calibCfg.window_len, "window length in seconds");
    calib->add_option("--out", calibCfg.out_path, "report path");
    calib->add_option("--threads", calibCfg.threads, "recognition workers (0: all cores)");
    calib->add_option("--seed", calibCfg.seed, "random seed");
    calib->add_option("--config", calibConfigPath, "key-value configuration file");

    std::string scenario, outEvents, outTruth;
    auto *simulate = app.add_subcommand("simulate", "render a synthetic event stream");
    simulate->add_option("--scenario", scenario, "scenario file")->required();
    simulate->add_option("--out-events", outEvents, "event file to write")->required();
    simulate->add_option("--out-truth", outTruth, "ground-truth sidecar to write")->required();

    ns_evgrid::RunConfig inspectCfg;
    std::string inspectConfigPath, outDir;
    std::size_t windowIndex = 0;
    auto *inspect = app.add_subcommand("inspect", "dump every recognition stage of one window");
    inspect->add_option("--events", inspectCfg.events_path, "event file (t x y p)")->required();
    inspect->add_option("--board", inspectCfg.board_path, "board description")->required();
    inspect->add_option("--window-index", windowIndex, "window to inspect")->required();
    inspect->add_option("--out-dir", outDir, "output directory")->required();
    inspect->add_option("--window", inspectCfg.window_len, "window length in seconds");
    inspect->add_option("--seed", inspectCfg.seed, "random seed");
    inspect->add_option("--config", inspectConfigPath, "key-value configuration file");

    CLI11_PARSE(app, argc, argv);
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        if (calib->parsed()) {
            WithConfig(calibCfg, calibConfigPath, *calib);
            return ns_evgrid::RunCalibrate(calibCfg);
        }
        if (simulate->parsed()) {
            return ns_evgrid::RunSimulate(scenario, outEvents, outTruth);
        }
        if (inspect->parsed()) {
            WithConfig(inspectCfg, inspectConfigPath, *inspect);
            return ns_evgrid::RunInspect(inspectCfg, windowIndex, outDir);
        }
    } catch (const std::exception &e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 1;
}
