#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dblf/belief.hpp"
#include "dblf/delay.hpp"
#include "dblf/optim.hpp"

namespace dblf {

struct SacConfig {
    int hidden = 256;
    double lr_actor = 3e-4;
    double lr_critic = 1e-3;
    double lr_alpha = 1e-3;
    double tau = 5e-3;        // critic soft-update factor
    double gamma = 0.99;
    int batch = 256;
    int actor_freq = 2;       // actor updates once per this many env steps
    int critic_freq = 1;
    int n_step = 8;           // bootstrapping steps N <= delta
    int warmup_steps = 1000;  // uniform-random action steps before updates
    long buffer_capacity = 100000;
    int eval_interval = 5000;
    int eval_episodes = 5;
    double log_std_lo = -20.0, log_std_hi = 2.0;
    bool strict_paper_sign = false;  // "+ log pi" inside the TD target
    bool twin_critics = true;        // min-of-two target (can be disabled)
};

struct ActorNet {
    Linear l1, l2, mean, log_std;
    std::vector<ArrayPtr> parameters() const;
    void collect(const std::string& prefix, NamedArrays& out) const;
};

struct QNet {
    Linear l1, l2, head;
    std::vector<ArrayPtr> parameters() const;
    void collect(const std::string& prefix, NamedArrays& out) const;
};

struct SacAgent {
    SacConfig cfg;
    EnvSpec env_spec;
    ActorNet actor;
    QNet q1, q2, q1_target, q2_target;
    ArrayPtr log_alpha;
    ArrayPtr action_scale, action_center;  // [action_dim] constants from the bounds
    std::unique_ptr<AdamW> opt_actor, opt_q1, opt_q2, opt_alpha;

    double alpha() const;
    double target_entropy() const { return -static_cast<double>(env_spec.action_dim); }
    NamedArrays named_parameters() const;  // online + target nets + log_alpha
};

SacAgent make_sac_agent(const SacConfig& cfg, const EnvSpec& env_spec, std::uint64_t seed);
void save_sac_agent(const std::string& path, const SacAgent& agent);
SacAgent load_sac_agent(const std::string& path, const SacConfig& cfg);

struct PolicyOut {
    ArrayPtr mean, log_std;
};
PolicyOut actor_forward(Tape& tape, const SacAgent& agent, const ArrayPtr& states);

struct SampledAction {
    ArrayPtr action;    // squashed, within bounds
    ArrayPtr log_prob;  // [B, 1]; null on the deterministic path
};
// rng == nullptr gives the deterministic mean action.
SampledAction sample_squashed(Tape& tape, const SacAgent& agent, const PolicyOut& pol,
                              RngStream* rng);

ArrayPtr q_forward(Tape& tape, const QNet& q, const ArrayPtr& states, const ArrayPtr& actions);

// Exact exponential moving average: target <- (1 - tau) * target + tau * online.
void soft_update(SacAgent& agent);

// Single action from a raw state (no belief involved).
Vec policy_action(const SacAgent& agent, const Vec& state, bool deterministic, RngStream* rng);

Vec act(const SacAgent& agent, const Belief& belief, const AugmentedState& aug, int delta_max,
        std::span<const Vec> true_future, bool deterministic, RngStream* rng);

// Per-sample intermediates shared between the critic target and the actor
// update on the same batch.
struct TargetCache {
    ArrayPtr belief_states;  // [B, sd] s_hat at the bootstrap horizon
    ArrayPtr true_states;    // [B, sd] true s at the bootstrap horizon
    ArrayPtr anchor_states;  // [B, sd]
    ArrayPtr anchor_actions; // [B, ad]
    std::vector<int> horizon;  // bootstrap step per sample (min(N, delta), or earlier on kill)
};

// Y_i = sum_{j<n} gamma^j r_j + gamma^n (min Q_target(s_n, a') - alpha log pi(a'|s_hat_n)),
// a' ~ pi(.|s_hat_n); the bootstrap is dropped when the window hits a true
// terminal, and kept across horizon truncation. N above the window's delay
// throws unless clamp_n_to_delay is set (stochastic-delay windows carry a
// per-sample effective delay and use n = min(N, delay)).
std::vector<double> n_step_target(const std::vector<ReplayWindow>& windows, const SacAgent& agent,
                                  const Belief& belief, double alpha, double gamma, int n_step,
                                  RngStream& rng, TargetCache* cache = nullptr,
                                  bool clamp_n_to_delay = false);

double critic_update(SacAgent& agent, const TargetCache& cache, const std::vector<double>& y);
// Returns (actor loss, mean log pi); also tunes the entropy temperature.
std::pair<double, double> actor_update(SacAgent& agent, const TargetCache& cache, RngStream& rng);

// Ring buffer of whole trajectories with privileged true states. Windows
// never cross episode boundaries; eviction drops the oldest episodes.
class ReplayBuffer {
public:
    ReplayBuffer(long capacity_transitions, int delta, int n_step);
    void begin_episode(std::uint64_t seed);
    void push(const Transition& t);
    long transitions() const { return transitions_; }
    long window_total() const;
    std::vector<ReplayWindow> sample_windows(int batch, const std::optional<DelaySpec>& delay,
                                             RngStream& rng) const;

private:
    std::deque<Trajectory> episodes_;
    long transitions_ = 0;
    long capacity_;
    int delta_;
    int n_step_;
    void evict();
};

struct EvalPoint {
    long step = 0;
    double mean_return = 0.0, std_return = 0.0;
    int n_episodes = 0;
    double alpha = 0.0, critic_loss = 0.0, actor_loss = 0.0;
};

struct TrainAgentResult {
    std::vector<EvalPoint> curve;
    double final_mean_return = 0.0;
    double final_std_return = 0.0;
};

struct TrainHooks {
    std::vector<long> checkpoint_steps;
    std::string checkpoint_prefix;  // writes <prefix>step<k>.dblf and <prefix>final.dblf
};

// Alg. phase 2: online SAC through the delayed wrapper with a frozen belief.
// No delay spec trains the delay-free reference (N forced to 1).
TrainAgentResult train_agent(std::shared_ptr<const Env> env, const std::optional<DelaySpec>& delay,
                             std::shared_ptr<const Belief> belief, SacAgent& agent, long steps,
                             std::uint64_t seed, const TrainHooks& hooks = {});

std::pair<double, double> evaluate_policy(std::shared_ptr<const Env> env,
                                          const std::optional<DelaySpec>& delay,
                                          const Belief* belief, const SacAgent& agent,
                                          int episodes, std::uint64_t seed, bool deterministic);

std::pair<double, double> evaluate_random(std::shared_ptr<const Env> env, int episodes,
                                          std::uint64_t seed);

// (R_alg - R_random) / (R_sac - R_random); 0 at random, 1 at delay-free SAC.
double normalized_return(double r_alg, double r_sac, double r_random);

void write_learning_curve_csv(const std::string& path, const std::vector<EvalPoint>& curve);
std::vector<EvalPoint> read_learning_curve_csv(const std::string& path);

}  // namespace dblf
