// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/event_io.h"
#include "evgrid/common.h"

#include <charconv>
#include <cmath>
#include <ostream>
#include <string>

namespace ns_evgrid {

namespace {

bool IsBlank(char c) { return c == ' ' || c == '\t' || c == '\r'; }

// splits a line into whitespace separated tokens without allocating
int Tokenize(std::string_view line, std::string_view *tokens, int maxTokens) {
    int count = 0;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && IsBlank(line[i])) ++i;
        if (i >= line.size()) break;
        std::size_t j = i;
        while (j < line.size() && !IsBlank(line[j])) ++j;
        if (count == maxTokens) return maxTokens + 1;
        tokens[count++] = line.substr(i, j - i);
        i = j;
    }
    return count;
}

template <typename T>
bool ParseNumber(std::string_view token, T &value) {
    const char *first = token.data();
    const char *last = token.data() + token.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc() && ptr == last;
}

[[noreturn]] void Fail(std::size_t lineNo, const std::string &what) {
    throw Error("event stream line " + std::to_string(lineNo) + ": " + what);
}

}  // namespace

ActiveEventSurface::ActiveEventSurface(SensorGeometry geometry)
    : _geometry(geometry),
      _time(geometry.PixelCount(), NoEvent),
      _polarity(geometry.PixelCount(), 0),
      _index(geometry.PixelCount(), -1) {}

const Event *ActiveEventSurface::At(int x, int y) const {
    if (!_geometry.Contains(x, y)) return nullptr;
    const auto idx = _index[_geometry.Index(x, y)];
    return idx < 0 ? nullptr : &_active[static_cast<std::size_t>(idx)];
}

std::vector<Event> ParseEventStream(std::istream &source,
                                    const SensorGeometry &geometry,
                                    const ParseOptions &options) {
    if (geometry.width <= 0 || geometry.height <= 0) {
        throw Error("sensor geometry must have positive width and height");
    }
    std::vector<Event> events;
    std::string line;
    std::size_t lineNo = 0;
    double lastTime = std::numeric_limits<double>::lowest();
    std::string_view tokens[4];

    while (std::getline(source, line)) {
        ++lineNo;
        std::string_view view(line);
        std::size_t first = 0;
        while (first < view.size() && IsBlank(view[first])) ++first;
        if (first == view.size() || view[first] == '#') continue;

        if (Tokenize(view, tokens, 4) != 4) Fail(lineNo, "expected 4 fields 't x y p'");

        Event ev;
        long long x = 0, y = 0, p = 0;
        if (!ParseNumber(tokens[0], ev.t) || !std::isfinite(ev.t)) {
            Fail(lineNo, "bad timestamp '" + std::string(tokens[0]) + "'");
        }
        if (!ParseNumber(tokens[1], x) || !ParseNumber(tokens[2], y)) {
            Fail(lineNo, "bad pixel coordinate");
        }
        if (!ParseNumber(tokens[3], p)) Fail(lineNo, "bad polarity");
        if (x < 0 || y < 0 || x >= geometry.width || y >= geometry.height) {
            Fail(lineNo, "pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                             ") outside " + std::to_string(geometry.width) + "x" +
                             std::to_string(geometry.height) + " sensor");
        }
        switch (p) {
            case 1: ev.p = 1; break;
            case 0:
            case -1: ev.p = -1; break;
            default: Fail(lineNo, "polarity must be -1, +1, 0 or 1");
        }
        if (ev.t < lastTime - options.time_slack) {
            Fail(lineNo, "timestamp decreases beyond the allowed slack");
        }
        lastTime = std::max(lastTime, ev.t);
        ev.x = static_cast<int>(x);
        ev.y = static_cast<int>(y);
        events.push_back(ev);
    }
    return events;
}

void WriteEventStream(std::ostream &sink, std::span<const Event> events) {
    char buf[64];
    for (const auto &ev : events) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ev.t);
        sink.write(buf, end - buf);
        sink << ' ' << ev.x << ' ' << ev.y << ' ' << ev.p << '\n';
    }
}

std::vector<EventWindow> WindowEvents(std::span<const Event> events, double windowLen) {
    if (!(windowLen > 0.0)) throw Error("window length must be positive");
    std::vector<EventWindow> windows;
    if (events.empty()) return windows;

    const double t0 = events.front().t;
    std::size_t k = 0;
    auto open = [&](std::size_t idx) {
        EventWindow w;
        w.t_start = t0 + static_cast<double>(idx) * windowLen;
        w.t_end = t0 + static_cast<double>(idx + 1) * windowLen;
        windows.push_back(std::move(w));
    };
    open(0);
    for (const auto &ev : events) {
        if (ev.t < windows.back().t_start) {
            throw Error("events must be sorted by time before windowing");
        }
        while (ev.t >= windows.back().t_end) open(++k);
        windows.back().events.push_back(ev);
    }
    return windows;
}

ActiveEventSurface BuildSae(std::span<const Event> events, const SensorGeometry &geometry) {
    ActiveEventSurface sae(geometry);
    for (const auto &ev : events) {
        if (!geometry.Contains(ev.x, ev.y)) throw Error("event outside sensor geometry");
        const auto idx = geometry.Index(ev.x, ev.y);
        // ties in time resolve to the later entry of the list
        if (ev.t >= sae._time[idx]) {
            sae._time[idx] = ev.t;
            sae._polarity[idx] = static_cast<std::int8_t>(ev.p);
        }
    }
    for (int y = 0; y < geometry.height; ++y) {
        for (int x = 0; x < geometry.width; ++x) {
            const auto idx = geometry.Index(x, y);
            if (sae._polarity[idx] == 0) continue;
            sae._index[idx] = static_cast<std::int32_t>(sae._active.size());
            sae._active.push_back(Event{sae._time[idx], x, y, sae._polarity[idx]});
        }
    }
    return sae;
}

}  // namespace ns_evgrid
