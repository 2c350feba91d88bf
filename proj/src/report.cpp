// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/report.h"
#include "evgrid/common.h"

#include <algorithm>
#include <cmath>

namespace ns_evgrid {

ResidualHistogram MakeHistogram(std::span<const Eigen::Vector2d> residuals, double binWidth, int bins) {
    if (!(binWidth > 0.0) || bins < 1) throw Error("histogram needs a positive bin width and bin count");
    ResidualHistogram h;
    h.bin_width = binWidth;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (const auto &r : residuals) {
        const auto b = static_cast<std::size_t>(std::min<double>(std::floor(r.norm() / binWidth), bins - 1));
        ++h.counts[b];
    }
    return h;
}

UndistortMap MakeUndistortMap(const Intrinsics &intr, const SensorGeometry &geometry, int step) {
    if (step < 1) throw Error("undistortion map step must be >= 1");
    UndistortMap m;
    m.step = step;
    m.width = geometry.width;
    m.height = geometry.height;
    for (int x = 0; x < geometry.width; x += step) m.xs.push_back(x);
    if (m.xs.back() != geometry.width - 1) m.xs.push_back(geometry.width - 1);
    for (int y = 0; y < geometry.height; y += step) m.ys.push_back(y);
    if (m.ys.back() != geometry.height - 1) m.ys.push_back(geometry.height - 1);
    for (const int y : m.ys) {
        for (const int x : m.xs) {
            const Eigen::Vector2d n = PixelToNormalized(Eigen::Vector2d(x, y), intr, 50);
            m.table.emplace_back(intr.fx * n.x() + intr.cx, intr.fy * n.y() + intr.cy);
        }
    }
    return m;
}

Eigen::Vector2d UndistortMap::Lookup(const Eigen::Vector2d &p) const {
    auto cell = [](const std::vector<int> &axis, double v, std::size_t &i0, double &f) {
        const auto it = std::upper_bound(axis.begin(), axis.end(), v);
        std::size_t hi = static_cast<std::size_t>(it - axis.begin());
        hi = std::clamp<std::size_t>(hi, 1, axis.size() - 1);
        i0 = hi - 1;
        f = (v - axis[i0]) / static_cast<double>(axis[hi] - axis[i0]);
    };
    std::size_t ix, iy;
    double fx, fy;
    cell(xs, p.x(), ix, fx);
    cell(ys, p.y(), iy, fy);
    const std::size_t w = xs.size();
    const auto &a = table[iy * w + ix], &b = table[iy * w + ix + 1];
    const auto &c = table[(iy + 1) * w + ix], &d = table[(iy + 1) * w + ix + 1];
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

nlohmann::ordered_json ReportJson(const CalibrationResult &result,
                                  const SensorGeometry &geometry,
                                  const nlohmann::ordered_json &configEcho) {
    using nlohmann::ordered_json;
    const auto &in = result.intrinsics;
    ordered_json j;
    j["intrinsics"] = {{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx}, {"cy", in.cy},
                       {"k1", in.k1}, {"k2", in.k2}, {"p1", in.p1}, {"p2", in.p2}};
    j["rms_reproj"] = result.rms_reproj;
    ordered_json perView = ordered_json::array();
    for (std::size_t k = 0; k < result.per_view_rms.size(); ++k) {
        perView.push_back({{"t", result.poses[k].first}, {"rms", result.per_view_rms[k]}});
    }
    j["per_view"] = std::move(perView);
    j["n_views"] = result.per_view_rms.size();

    const auto hist = MakeHistogram(result.residuals);
    j["residual_histogram"] = {{"bin_width", hist.bin_width}, {"counts", hist.counts}};

    const auto map = MakeUndistortMap(in, geometry);
    ordered_json table = ordered_json::array();
    for (const auto &p : map.table) table.push_back({p.x(), p.y()});
    j["undistort_map"] = {{"step", map.step}, {"width", map.width}, {"height", map.height},
                          {"xs", map.xs},     {"ys", map.ys},       {"table", std::move(table)}};
    j["config_echo"] = configEcho;
    return j;
}

void WriteReport(const CalibrationResult &result,
                 const SensorGeometry &geometry,
                 const nlohmann::ordered_json &configEcho,
                 std::ostream &sink) {
    sink << ReportJson(result, geometry, configEcho).dump(2) << '\n';
    sink.flush();
    if (!sink) throw Error("failed to write calibration report");
}

}  // namespace ns_evgrid
