#pragma once

#include <string>

namespace dblf {

// Shortest decimal form that round-trips the exact double; keeps text
// outputs readable and byte-stable.
std::string format_double(double v);

}  // namespace dblf
