// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/contour.h"
#include "evgrid/common.h"

namespace ns_evgrid {

namespace {

// clockwise neighborhood in image coordinates (y down), starting at east
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

constexpr std::int32_t kMarked = -1;

class Tracer {
public:
    Tracer(const std::vector<std::uint8_t> &mask, int width, int height, std::vector<std::int32_t> &labels)
        : _mask(mask), _w(width), _h(height), _labels(labels) {}

    [[nodiscard]] bool Fg(int x, int y) const {
        return x >= 0 && y >= 0 && x < _w && y < _h && _mask[y * _w + x] != 0;
    }

    /**
     * searches the 8 neighbors clockwise from 'dir'; background pixels passed over are marked
     * so that inner contours are traced only once. Returns the direction found or -1.
     */
    int Step(int x, int y, int dir) {
        for (int i = 0; i < 8; ++i) {
            const int d = (dir + i) % 8;
            const int nx = x + kDx[d], ny = y + kDy[d];
            if (Fg(nx, ny)) return d;
            if (nx >= 0 && ny >= 0 && nx < _w && ny < _h) _labels[ny * _w + nx] = kMarked;
        }
        return -1;
    }

    // follows a contour starting at (sx, sy) with initial search direction 'dir'
    void Trace(int sx, int sy, int dir, std::int32_t label) {
        _labels[sy * _w + sx] = label;
        int d = Step(sx, sy, dir);
        if (d < 0) return;  // isolated pixel
        const int tx = sx + kDx[d], ty = sy + kDy[d];
        int x = tx, y = ty;
        int prevX = sx, prevY = sy;
        while (true) {
            _labels[y * _w + x] = label;
            // the previous contour point lies at (d + 4); resume the clockwise search after it
            const int nd = Step(x, y, (d + 6) % 8);
            prevX = x;
            prevY = y;
            x += kDx[nd];
            y += kDy[nd];
            d = nd;
            // stop once the start pixel is left again toward the second contour pixel
            if (prevX == sx && prevY == sy && x == tx && y == ty) break;
        }
    }

private:
    const std::vector<std::uint8_t> &_mask;
    int _w, _h;
    std::vector<std::int32_t> &_labels;
};

}  // namespace

LabelImage LabelComponents(const std::vector<std::uint8_t> &mask, int width, int height) {
    if (width < 0 || height < 0 || mask.size() != static_cast<std::size_t>(width) * height) {
        throw Error("label image: mask size does not match dimensions");
    }
    LabelImage out;
    out.width = width;
    out.height = height;
    out.labels.assign(mask.size(), 0);
    auto &labels = out.labels;
    Tracer tracer(mask, width, height, labels);

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (!mask[y * width + x]) continue;
            std::int32_t &lab = labels[y * width + x];

            // outer contour: first touch of a new component from above
            if (lab <= 0 && !tracer.Fg(x, y - 1)) {
                lab = ++out.count;
                tracer.Trace(x, y, 7, lab);
            }
            // inner contour: unmarked background directly below
            if (y + 1 < height && !mask[(y + 1) * width + x] && labels[(y + 1) * width + x] != kMarked) {
                if (lab <= 0) lab = labels[y * width + x - 1];
                tracer.Trace(x, y, 3, lab);
            }
            if (lab <= 0) lab = labels[y * width + x - 1];
        }
    }
    for (auto &l : labels) {
        if (l < 0) l = 0;
    }
    return out;
}

}  // namespace ns_evgrid
