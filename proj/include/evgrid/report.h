// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_REPORT_H
#define EVGRID_REPORT_H

#include "evgrid/calib.h"
#include "evgrid/event_io.h"

#include "json.hpp"
#include <ostream>
#include <vector>

namespace ns_evgrid {

struct ResidualHistogram {
    double bin_width = 0.05;  // px, over residual norms
    std::vector<std::size_t> counts;  // last bin collects everything beyond the range
};

ResidualHistogram MakeHistogram(std::span<const Eigen::Vector2d> residuals, double binWidth = 0.05, int bins = 20);

/**
 * sampled map from distorted pixels to undistorted pixels (same pinhole matrix, no
 * distortion), on a regular grid that always includes the last row and column
 */
struct UndistortMap {
    int step = 8;
    int width = 0, height = 0;
    std::vector<int> xs, ys;             // sample coordinates
    std::vector<Eigen::Vector2d> table;  // row-major over (ys, xs)

    // bilinear lookup for a distorted pixel inside the sensor
    [[nodiscard]] Eigen::Vector2d Lookup(const Eigen::Vector2d &pixel) const;
};

UndistortMap MakeUndistortMap(const Intrinsics &intr, const SensorGeometry &geometry, int step = 8);

nlohmann::ordered_json ReportJson(const CalibrationResult &result,
                                  const SensorGeometry &geometry,
                                  const nlohmann::ordered_json &configEcho);

// throws Error when the sink fails
void WriteReport(const CalibrationResult &result,
                 const SensorGeometry &geometry,
                 const nlohmann::ordered_json &configEcho,
                 std::ostream &sink);

}  // namespace ns_evgrid

#endif
