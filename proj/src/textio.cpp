#include "dblf/textio.hpp"

#include <charconv>
#include <cstdio>

namespace dblf {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec == std::errc()) return std::string(buf, res.ptr);
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace dblf
