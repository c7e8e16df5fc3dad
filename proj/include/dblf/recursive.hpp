#pragma once

#include <string>

#include "dblf/dataset.hpp"
#include "dblf/delay.hpp"
#include "dblf/dfbt.hpp"
#include "dblf/nn.hpp"

namespace dblf {

struct RecursiveConfig {
    int state_dim = 0;
    int action_dim = 0;
    int hidden = 256;
};

// One-step dynamics network (state, action) -> next state. Belief forecasts
// come from applying it delta times, so its one-step error compounds.
struct RecursiveModel {
    RecursiveConfig cfg;
    Linear l1, l2, head;

    std::vector<ArrayPtr> parameters() const;
    NamedArrays named_parameters() const;
};

RecursiveModel make_recursive(const RecursiveConfig& cfg, std::uint64_t seed);
void save_recursive(const std::string& path, const RecursiveModel& model);
RecursiveModel load_recursive(const std::string& path);

ArrayPtr recursive_forward(Tape& tape, const RecursiveModel& model, const ArrayPtr& state_action);

Vec recursive_step(const RecursiveModel& model, const Vec& state, const Vec& action);

// Exactly effective_delay applications of the one-step map, starting from
// the anchor and feeding back its own predictions.
std::vector<Vec> recursive_forecast(const std::function<Vec(const Vec&, const Vec&)>& one_step,
                                    const AugmentedState& aug);
std::vector<Vec> recursive_forecast(const RecursiveModel& model, const AugmentedState& aug);

// Fits the one-step map to (s, a, s') pairs with the same optimizer settings
// as the direct model, for a like-for-like comparison.
TrainCurve train_recursive(RecursiveModel& model, const Dataset& train_split,
                           const BeliefTrainConfig& cfg, std::uint64_t seed);

// Max L2 one-step error over a dataset (estimates the sup-gap eps_P).
double one_step_error(const RecursiveModel& model, const Dataset& ds, long max_pairs,
                      std::uint64_t seed);

}  // namespace dblf
