#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "dblf/rng.hpp"

namespace dblf {

using Vec = std::vector<double>;

struct EnvSpec {
    int state_dim = 0;
    int action_dim = 0;
    Vec action_low, action_high;
    double gamma = 0.99;
    int horizon = 200;
    double noise_prob = 0.0;   // per-step probability of additive gaussian state noise
    double noise_scale = 0.0;
    double reward_low = 0.0;   // documented bounds; every emitted reward lies inside
    double reward_high = 0.0;
};

struct Transition {
    Vec state;
    Vec action;
    double reward = 0.0;
    Vec next_state;
    bool done = false;        // true at terminal or horizon
    bool truncated = false;   // horizon (or collection) cut; bootstrappable
    long step_index = 0;
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::vector<Transition> records;

    long length() const { return static_cast<long>(records.size()); }
    // States s_0 .. s_length (the final one is the last next_state).
    const Vec& state_at(long i) const;
    const Vec& action_at(long i) const { return records.at(static_cast<std::size_t>(i)).action; }
    double reward_at(long i) const { return records.at(static_cast<std::size_t>(i)).reward; }
};

struct EnvOptions {
    double noise_prob = 0.0;
    double noise_scale = 0.01;
    double msd_stiffness = 4.0;
    double msd_damping = 0.5;
    bool msd_dirac_init = false;  // reset to the fixed state [1, 0]
};

// Environments are pure dynamics: step maps (state, action, rng) to
// (next_state, reward, done). All episode bookkeeping lives in rollout()
// and the delayed wrapper.
class Env {
public:
    virtual ~Env() = default;
    const EnvSpec& spec() const { return spec_; }
    const std::string& id() const { return id_; }

    virtual Vec reset(RngStream& rng) const = 0;
    // The action is clipped to bounds before the dynamics are applied.
    virtual std::tuple<Vec, double, bool> step(const Vec& state, const Vec& action,
                                               RngStream& rng) const = 0;

protected:
    EnvSpec spec_;
    std::string id_;
};

// env_id in {pendulum, mass_spring_damper, point_mass_reach}.
std::shared_ptr<Env> make_env(const std::string& env_id, const EnvOptions& opts = {});

// Deterministic per (env, seed).
Vec env_reset(const Env& env, std::uint64_t seed);
std::tuple<Vec, double, bool> env_step(const Env& env, const Vec& state, const Vec& action,
                                       RngStream& rng);

class MassSpringDamperEnv : public Env {
public:
    explicit MassSpringDamperEnv(const EnvOptions& opts);
    Vec reset(RngStream& rng) const override;
    std::tuple<Vec, double, bool> step(const Vec& state, const Vec& action,
                                       RngStream& rng) const override;
    // Row-major 2x2 transition matrix and its spectral norm, the exact
    // Lipschitz constant of the dynamics.
    const std::array<double, 4>& transition_matrix() const { return A_; }
    const std::array<double, 2>& input_matrix() const { return B_; }
    double lipschitz() const { return lipschitz_; }

private:
    std::array<double, 4> A_{};
    std::array<double, 2> B_{};
    double lipschitz_ = 0.0;
    bool dirac_init_ = false;
};

using Policy = std::function<Vec(const Vec& state, RngStream& rng)>;

Policy random_policy(const Env& env);
Vec clip_action(const Env& env, const Vec& action);

Trajectory rollout(const Env& env, const Policy& policy, int horizon, std::uint64_t seed);

}  // namespace dblf
