// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_EVENT_IO_H
#define EVGRID_EVENT_IO_H

#include <cstdint>
#include <istream>
#include <limits>
#include <span>
#include <vector>

namespace ns_evgrid {

struct Event {
    double t = 0.0;  // seconds
    int x = 0;       // column
    int y = 0;       // row
    int p = 1;       // polarity, -1 or +1

    friend bool operator==(const Event &, const Event &) = default;
};

struct SensorGeometry {
    int width = 346;
    int height = 260;

    [[nodiscard]] bool Contains(int x, int y) const {
        return x >= 0 && y >= 0 && x < width && y < height;
    }
    [[nodiscard]] std::size_t PixelCount() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    [[nodiscard]] std::size_t Index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(x);
    }
};

// half-open time window [t_start, t_end)
struct EventWindow {
    double t_start = 0.0;
    double t_end = 0.0;
    std::vector<Event> events;
};

/**
 * Surface of active events: the most recent event at every pixel of one window.
 * Pixels that saw no event carry the 'NoEvent' sentinel in the time map and polarity 0.
 */
class ActiveEventSurface {
public:
    static constexpr double NoEvent = std::numeric_limits<double>::lowest();

    ActiveEventSurface() = default;
    explicit ActiveEventSurface(SensorGeometry geometry);

    [[nodiscard]] const SensorGeometry &Geometry() const { return _geometry; }

    [[nodiscard]] bool HasEvent(int x, int y) const {
        return _geometry.Contains(x, y) && _index[_geometry.Index(x, y)] >= 0;
    }
    [[nodiscard]] double Time(int x, int y) const { return _time[_geometry.Index(x, y)]; }
    [[nodiscard]] int Polarity(int x, int y) const { return _polarity[_geometry.Index(x, y)]; }

    // active events in row-major pixel order
    [[nodiscard]] const std::vector<Event> &ActiveEvents() const { return _active; }

    // active event at a pixel, nullptr if the pixel is empty
    [[nodiscard]] const Event *At(int x, int y) const;

private:
    friend ActiveEventSurface BuildSae(std::span<const Event> events,
                                       const SensorGeometry &geometry);

    SensorGeometry _geometry{};
    std::vector<double> _time;
    std::vector<std::int8_t> _polarity;
    std::vector<std::int32_t> _index;
    std::vector<Event> _active;
};

struct ParseOptions {
    // tolerated backwards step of timestamps (seconds); larger steps are rejected
    double time_slack = 0.0;
};

/**
 * parses the plain-text "t x y p" format (one event per line, '#' comments, polarity in
 * {-1, +1} or {0, 1}); throws Error with the offending line number on malformed input
 */
std::vector<Event> ParseEventStream(std::istream &source,
                                    const SensorGeometry &geometry,
                                    const ParseOptions &options = {});

void WriteEventStream(std::ostream &sink, std::span<const Event> events);

// consecutive windows aligned to the first event; empty windows are kept
std::vector<EventWindow> WindowEvents(std::span<const Event> events, double windowLen);

ActiveEventSurface BuildSae(std::span<const Event> events, const SensorGeometry &geometry);

inline ActiveEventSurface BuildSae(const EventWindow &window, const SensorGeometry &geometry) {
    return BuildSae(window.events, geometry);
}

}  // namespace ns_evgrid

#endif
