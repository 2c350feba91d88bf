// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/config.h"
#include "evgrid/common.h"

#include <charconv>
#include <cmath>
#include <fstream>

namespace ns_evgrid {

namespace {

std::string Trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T ParseOrThrow(const std::string &key, const std::string &text) {
    T value{};
    const char *first = text.data(), *last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw Error("config key '" + key + "': cannot parse '" + text + "'");
    return value;
}

}  // namespace

std::string KeyValues::GetString(const std::string &key, const std::string &def) const {
    _used.insert(key);
    const auto it = _values.find(key);
    return it == _values.end() ? def : it->second;
}

double KeyValues::GetDouble(const std::string &key, double def) const {
    _used.insert(key);
    const auto it = _values.find(key);
    if (it == _values.end()) return def;
    const auto v = ParseOrThrow<double>(key, it->second);
    if (!std::isfinite(v)) throw Error("config key '" + key + "' must be finite");
    return v;
}

long long KeyValues::GetInt(const std::string &key, long long def) const {
    _used.insert(key);
    const auto it = _values.find(key);
    return it == _values.end() ? def : ParseOrThrow<long long>(key, it->second);
}

std::uint64_t KeyValues::GetU64(const std::string &key, std::uint64_t def) const {
    _used.insert(key);
    const auto it = _values.find(key);
    return it == _values.end() ? def : ParseOrThrow<std::uint64_t>(key, it->second);
}

void KeyValues::RequireAllUsed(const std::string &context) const {
    for (const auto &[key, value] : _values) {
        if (!_used.count(key)) throw Error(context + ": unknown key '" + key + "'");
    }
}

KeyValues ParseKeyValues(std::istream &in) {
    KeyValues kv;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = Trim(line);
        if (line.empty()) continue;
        std::string key, value;
        if (const auto eq = line.find('='); eq != std::string::npos) {
            key = Trim(line.substr(0, eq));
            value = Trim(line.substr(eq + 1));
        } else {
            const auto sp = line.find_first_of(" \t");
            if (sp == std::string::npos) throw Error("line " + std::to_string(lineNo) + ": expected 'key = value'");
            key = Trim(line.substr(0, sp));
            value = Trim(line.substr(sp + 1));
        }
        if (key.empty() || value.empty()) {
            throw Error("line " + std::to_string(lineNo) + ": expected 'key = value'");
        }
        kv.Set(key, value);
    }
    return kv;
}

KeyValues LoadKeyValues(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return ParseKeyValues(in);
}

}  // namespace ns_evgrid
