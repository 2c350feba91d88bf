// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_CONFIG_H
#define EVGRID_CONFIG_H

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <string>

namespace ns_evgrid {

/**
 * flat "key = value" text ('#' starts a comment); keys are dotted module paths such as
 * "nf.r_thd". Lookups record which keys were consumed so typos can be reported.
 */
class KeyValues {
public:
    void Set(const std::string &key, const std::string &value) { _values[key] = value; }
    [[nodiscard]] bool Has(const std::string &key) const { return _values.count(key) != 0; }

    [[nodiscard]] std::string GetString(const std::string &key, const std::string &def) const;
    [[nodiscard]] double GetDouble(const std::string &key, double def) const;
    [[nodiscard]] long long GetInt(const std::string &key, long long def) const;
    [[nodiscard]] std::uint64_t GetU64(const std::string &key, std::uint64_t def) const;

    // throws when a key was never looked up
    void RequireAllUsed(const std::string &context) const;

    [[nodiscard]] const std::map<std::string, std::string> &Values() const { return _values; }

private:
    std::map<std::string, std::string> _values;
    mutable std::set<std::string> _used;
};

KeyValues ParseKeyValues(std::istream &in);
KeyValues LoadKeyValues(const std::string &path);

}  // namespace ns_evgrid

#endif
