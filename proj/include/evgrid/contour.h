// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_CONTOUR_H
#define EVGRID_CONTOUR_H

#include <cstdint>
#include <vector>

namespace ns_evgrid {

/**
 * 8-connected component labeling of a binary image by contour tracing: every component's
 * outer border (and the border of each hole) is followed clockwise, and interior pixels
 * inherit the label of their left neighbor during the raster scan.
 *
 * 'mask' is row-major (width * height), nonzero = foreground. Returned labels are 0 for
 * background and 1..n for components numbered in raster order of their top-left pixel.
 */
struct LabelImage {
    int width = 0;
    int height = 0;
    int count = 0;
    std::vector<std::int32_t> labels;
};

LabelImage LabelComponents(const std::vector<std::uint8_t> &mask, int width, int height);

}  // namespace ns_evgrid

#endif
