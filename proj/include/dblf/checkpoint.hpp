#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dblf/array.hpp"

namespace dblf {

using NamedArrays = std::vector<std::pair<std::string, ArrayPtr>>;

// Versioned binary container: magic "DBLF", u32 version, then a named
// parameter table (name, shape, raw little-endian f64 values). Round-trips
// are bit-exact.
void save_checkpoint(const std::string& path, const NamedArrays& entries);
NamedArrays load_checkpoint(const std::string& path);

// Lookup helper; throws when the name is absent.
ArrayPtr checkpoint_get(const NamedArrays& entries, const std::string& name);

}  // namespace dblf
