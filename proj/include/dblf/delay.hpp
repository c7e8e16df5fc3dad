#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dblf/env.hpp"

namespace dblf {

struct DelaySpec {
    enum class Kind { constant, uniform };
    Kind kind = Kind::constant;
    int delta_max = 1;  // constant delay, or the upper end of U(1, delta_max)
};

DelaySpec::Kind delay_kind_from_string(const std::string& s);
std::string to_string(DelaySpec::Kind kind);

// The information state x_t: the newest observed state, the actions and
// rewards accumulated since it, and how old it is. Entries at virtual
// pre-episode times are the zero padding fixed by the initial augmentation.
struct AugmentedState {
    Vec anchor_state;
    std::vector<Vec> action_queue;   // length == effective_delay
    std::vector<double> reward_queue;
    int effective_delay = 0;
    long time_index = 0;
};

// delta_max fixed-width tokens; token i = (anchor_state | a_i | r_i) for
// i < effective_delay, zero-filled and masked beyond.
struct TokenSequence {
    int delta_max = 0;
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> tokens;  // [delta_max, state_dim + action_dim + 1] row-major
    std::vector<double> mask;    // [delta_max], 1.0 for valid positions

    int width() const { return state_dim + action_dim + 1; }
    int effective_delay() const;
};

AugmentedState initial_augmentation(const Vec& s0, const DelaySpec& spec, int action_dim);
TokenSequence tokenize(const AugmentedState& aug, int delta_max);
AugmentedState detokenize(const TokenSequence& ts);

struct DelayedStep {
    AugmentedState aug;
    double delayed_reward = 0.0;  // sum of rewards revealed this step
    bool done = false;
    bool truncated = false;
};

// Wraps a delay-free environment into a delayed one. The agent sees
// AugmentedStates; the true state and full episode record stay privileged
// (training code and tests only). Under stochastic delays the observation
// pointer advances monotonically: an observation never un-arrives.
class DelayedEnv {
public:
    DelayedEnv(std::shared_ptr<const Env> env, DelaySpec spec, std::uint64_t seed);

    AugmentedState reset();
    DelayedStep step(const Vec& action);

    bool episode_active() const { return active_; }
    long time() const { return t_; }
    const Env& env() const { return *env_; }
    const DelaySpec& delay_spec() const { return spec_; }
    std::uint64_t episode_seed() const { return episode_seed_; }

    // privileged accessors
    const Vec& true_state() const;
    const std::vector<Vec>& states() const { return states_; }
    const Trajectory& trajectory() const { return traj_; }

private:
    AugmentedState make_aug() const;

    std::shared_ptr<const Env> env_;
    DelaySpec spec_;
    std::uint64_t run_seed_ = 0;
    std::uint64_t episode_seed_ = 0;
    long episode_index_ = -1;
    RngStream noise_rng_, delay_rng_;
    std::vector<Vec> states_;
    std::vector<Vec> actions_;
    std::vector<double> rewards_;
    Trajectory traj_;
    long t_ = 0;
    long ptr_ = 0;  // index of the newest revealed state; starts at -delta_max
    bool active_ = false;
};

// Wrap by id; the handle owns a fresh env instance.
std::shared_ptr<DelayedEnv> wrap(const std::string& env_id, const DelaySpec& spec, std::uint64_t seed,
                                 const EnvOptions& opts = {});

// A contiguous training slice around time t of a stored trajectory:
// states s_{t-delta .. t-delta+span}, actions/rewards on the same range and
// the token sequence for x_t. span = max(delta, n).
struct ReplayWindow {
    std::optional<TokenSequence> tokens;  // absent for the delay-free case (delta == 0)
    std::vector<Vec> states;
    std::vector<Vec> actions;
    std::vector<double> rewards;
    std::vector<bool> done;
    std::vector<bool> truncated;
    int delta = 0;
    long t = 0;
};

// Preconditions: t - delta >= 0, t - delta + n <= length, t <= length.
ReplayWindow window_extract(const Trajectory& traj, long t, int delta, int n, int delta_max = -1);

// Number of stride-1 windows tiling a trajectory at a given delta.
long window_count(const Trajectory& traj, int delta);

}  // namespace dblf
