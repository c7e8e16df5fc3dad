#pragma once

#include <string>
#include <vector>

#include "dblf/checkpoint.hpp"
#include "dblf/rng.hpp"
#include "dblf/tape.hpp"

namespace dblf {

struct Linear {
    ArrayPtr w;  // [in, out]
    ArrayPtr b;  // [out]
};

// Uniform(-1/sqrt(in), 1/sqrt(in)) init for both weight and bias.
Linear make_linear(int in, int out, RngStream& rng);

ArrayPtr linear(Tape& t, const Linear& l, const ArrayPtr& x);

void collect_params(const Linear& l, const std::string& prefix, NamedArrays& out);
void load_params(Linear& l, const std::string& prefix, const NamedArrays& entries);

std::vector<ArrayPtr> params_of(const NamedArrays& named);

}  // namespace dblf
