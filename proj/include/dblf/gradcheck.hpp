#pragma once

#include <functional>
#include <vector>

#include "dblf/array.hpp"

namespace dblf {

class Tape;

// Compares tape gradients against central finite differences, component by
// component, and returns the worst relative error. loss_fn must rebuild the
// same scalar loss from the given inputs on the passed tape on every call;
// any internal randomness (dropout masks, gaussian noise) has to come from a
// stream reconstructed inside loss_fn so repeated evaluations replay exactly.
double grad_check(const std::function<ArrayPtr(Tape&)>& loss_fn, const std::vector<ArrayPtr>& inputs,
                  double eps = 1e-5);

}  // namespace dblf
