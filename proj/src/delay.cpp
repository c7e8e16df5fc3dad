#include "dblf/delay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dblf {

DelaySpec::Kind delay_kind_from_string(const std::string& s) {
    if (s == "constant") return DelaySpec::Kind::constant;
    if (s == "uniform") return DelaySpec::Kind::uniform;
    throw std::invalid_argument("unknown delay kind: " + s);
}

std::string to_string(DelaySpec::Kind kind) {
    return kind == DelaySpec::Kind::constant ? "constant" : "uniform";
}

int TokenSequence::effective_delay() const {
    int n = 0;
    for (double m : mask) n += m != 0.0 ? 1 : 0;
    return n;
}

AugmentedState initial_augmentation(const Vec& s0, const DelaySpec& spec, int action_dim) {
    AugmentedState aug;
    aug.anchor_state = s0;
    aug.effective_delay = spec.delta_max;
    aug.time_index = 0;
    aug.action_queue.assign(static_cast<std::size_t>(spec.delta_max),
                            Vec(static_cast<std::size_t>(action_dim), 0.0));
    aug.reward_queue.assign(static_cast<std::size_t>(spec.delta_max), 0.0);
    return aug;
}

TokenSequence tokenize(const AugmentedState& aug, int delta_max) {
    const int eff = aug.effective_delay;
    if (eff > delta_max) throw std::invalid_argument("tokenize: queue length exceeds delta_max");
    if (static_cast<int>(aug.action_queue.size()) != eff ||
        static_cast<int>(aug.reward_queue.size()) != eff) {
        throw std::invalid_argument("tokenize: queue lengths inconsistent with effective_delay");
    }
    TokenSequence ts;
    ts.delta_max = delta_max;
    ts.state_dim = static_cast<int>(aug.anchor_state.size());
    ts.action_dim = eff > 0 ? static_cast<int>(aug.action_queue[0].size()) : 0;
    const int w = ts.width();
    ts.tokens.assign(static_cast<std::size_t>(delta_max) * w, 0.0);
    ts.mask.assign(static_cast<std::size_t>(delta_max), 0.0);
    for (int i = 0; i < eff; ++i) {
        double* tok = ts.tokens.data() + static_cast<std::size_t>(i) * w;
        std::copy(aug.anchor_state.begin(), aug.anchor_state.end(), tok);
        const Vec& a = aug.action_queue[static_cast<std::size_t>(i)];
        std::copy(a.begin(), a.end(), tok + ts.state_dim);
        tok[ts.state_dim + ts.action_dim] = aug.reward_queue[static_cast<std::size_t>(i)];
        ts.mask[static_cast<std::size_t>(i)] = 1.0;
    }
    return ts;
}

AugmentedState detokenize(const TokenSequence& ts) {
    const int eff = ts.effective_delay();
    if (eff < 1) throw std::invalid_argument("detokenize: no valid tokens");
    AugmentedState aug;
    aug.effective_delay = eff;
    const int w = ts.width();
    aug.anchor_state.assign(ts.tokens.begin(), ts.tokens.begin() + ts.state_dim);
    for (int i = 0; i < eff; ++i) {
        const double* tok = ts.tokens.data() + static_cast<std::size_t>(i) * w;
        aug.action_queue.emplace_back(tok + ts.state_dim, tok + ts.state_dim + ts.action_dim);
        aug.reward_queue.push_back(tok[ts.state_dim + ts.action_dim]);
    }
    return aug;
}

DelayedEnv::DelayedEnv(std::shared_ptr<const Env> env, DelaySpec spec, std::uint64_t seed)
    : env_(std::move(env)), spec_(spec), run_seed_(seed) {
    if (spec_.delta_max < 1) throw std::invalid_argument("DelayedEnv: delta_max must be >= 1");
}

AugmentedState DelayedEnv::reset() {
    ++episode_index_;
    episode_seed_ = mix_seed(run_seed_, static_cast<std::uint64_t>(episode_index_));
    noise_rng_ = RngStream(episode_seed_, "env_noise");
    delay_rng_ = RngStream(episode_seed_, "delay");
    states_.clear();
    actions_.clear();
    rewards_.clear();
    traj_ = Trajectory{};
    traj_.seed = episode_seed_;
    states_.push_back(env_reset(*env_, episode_seed_));
    t_ = 0;
    ptr_ = -static_cast<long>(spec_.delta_max);
    active_ = true;
    return make_aug();
}

DelayedStep DelayedEnv::step(const Vec& action) {
    if (!active_) throw std::runtime_error("DelayedEnv::step after episode end");
    auto [next, reward, done_env] = env_->step(states_.back(), action, noise_rng_);
    actions_.push_back(action);
    rewards_.push_back(reward);

    Transition tr;
    tr.state = states_.back();
    tr.action = action;
    tr.reward = reward;
    tr.next_state = next;
    tr.step_index = t_;
    const bool at_horizon = (t_ + 1 >= env_->spec().horizon);
    tr.done = done_env || at_horizon;
    tr.truncated = !done_env && at_horizon;
    traj_.records.push_back(tr);

    states_.push_back(std::move(next));
    ++t_;

    long new_ptr = 0;
    if (spec_.kind == DelaySpec::Kind::constant) {
        new_ptr = t_ - spec_.delta_max;
    } else {
        const long delta_t = delay_rng_.uniform_int(1, spec_.delta_max);
        new_ptr = std::max(ptr_, t_ - delta_t);
    }
    double revealed = 0.0;
    for (long i = ptr_; i < new_ptr; ++i) {
        if (i >= 0) revealed += rewards_[static_cast<std::size_t>(i)];
    }
    ptr_ = new_ptr;

    active_ = !tr.done;
    return {make_aug(), revealed, done_env, tr.truncated};
}

AugmentedState DelayedEnv::make_aug() const {
    AugmentedState aug;
    aug.time_index = t_;
    aug.effective_delay = static_cast<int>(t_ - ptr_);
    aug.anchor_state = states_[static_cast<std::size_t>(std::max(ptr_, 0L))];
    const int ad = env_->spec().action_dim;
    aug.action_queue.reserve(static_cast<std::size_t>(aug.effective_delay));
    aug.reward_queue.reserve(static_cast<std::size_t>(aug.effective_delay));
    for (long i = ptr_; i < t_; ++i) {
        if (i >= 0) {
            aug.action_queue.push_back(actions_[static_cast<std::size_t>(i)]);
            aug.reward_queue.push_back(rewards_[static_cast<std::size_t>(i)]);
        } else {
            aug.action_queue.emplace_back(static_cast<std::size_t>(ad), 0.0);
            aug.reward_queue.push_back(0.0);
        }
    }
    return aug;
}

const Vec& DelayedEnv::true_state() const {
    if (states_.empty()) throw std::runtime_error("DelayedEnv: no episode started");
    return states_.back();
}

std::shared_ptr<DelayedEnv> wrap(const std::string& env_id, const DelaySpec& spec, std::uint64_t seed,
                                 const EnvOptions& opts) {
    return std::make_shared<DelayedEnv>(make_env(env_id, opts), spec, seed);
}

long window_count(const Trajectory& traj, int delta) {
    return std::max(0L, traj.length() - static_cast<long>(delta));
}

ReplayWindow window_extract(const Trajectory& traj, long t, int delta, int n, int delta_max) {
    if (delta < 0 || n < 1) throw std::invalid_argument("window_extract: need delta >= 0, n >= 1");
    const long len = traj.length();
    if (t - delta < 0 || t - delta + n > len || t > len) {
        throw std::out_of_range("window_extract: window out of range");
    }
    if (delta_max < 0) delta_max = delta;
    ReplayWindow w;
    w.delta = delta;
    w.t = t;
    const long start = t - delta;
    const long span = std::max<long>(delta, n);
    for (long i = 0; i <= span; ++i) w.states.push_back(traj.state_at(start + i));
    for (long i = 0; i < span; ++i) {
        const auto& rec = traj.records[static_cast<std::size_t>(start + i)];
        w.actions.push_back(rec.action);
        w.rewards.push_back(rec.reward);
        w.done.push_back(rec.done);
        w.truncated.push_back(rec.truncated);
    }
    if (delta >= 1) {
        AugmentedState aug;
        aug.anchor_state = traj.state_at(start);
        aug.effective_delay = delta;
        aug.time_index = t;
        for (long i = 0; i < delta; ++i) {
            aug.action_queue.push_back(w.actions[static_cast<std::size_t>(i)]);
            aug.reward_queue.push_back(w.rewards[static_cast<std::size_t>(i)]);
        }
        w.tokens = tokenize(aug, delta_max);
    }
    return w;
}

}  // namespace dblf
