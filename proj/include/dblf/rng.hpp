#pragma once

#include <cstdint>
#include <string_view>

namespace dblf {

// Counter-based random stream: every draw is a pure function of
// (seed, stream name, counter), so any consumer can be replayed exactly
// by reconstructing the stream. No global state.
class RngStream {
public:
    RngStream() : RngStream(0, "default") {}
    RngStream(std::uint64_t seed, std::string_view name);

    std::uint64_t next_u64();
    double uniform();                                   // [0, 1)
    double uniform_range(double lo, double hi);
    double normal();                                    // N(0, 1), one value per call
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive bounds

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// FNV-1a; used to fold stream names into keys.
std::uint64_t hash_name(std::string_view name);

// Derives a sub-seed, e.g. per episode or per worker.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dblf
