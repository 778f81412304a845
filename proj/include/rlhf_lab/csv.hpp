#pragma once

#include <cstdio>
#include <string>

namespace rlhf_lab {

// Shortest-round-trip-ish fixed formatting; all CSV output goes through this
// so re-runs are byte-identical.
inline std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace rlhf_lab
