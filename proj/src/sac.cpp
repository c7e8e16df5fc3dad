#include "dblf/sac.hpp"

#include "dblf/textio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dblf {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kSquashEps = 1e-6;

ArrayPtr ones_col(int n) { return DArray::full({n, 1}, 1.0); }

std::vector<Vec> privileged_future(const DelayedEnv& denv, const AugmentedState& aug) {
    const auto& st = denv.states();
    const long ptr = aug.time_index - aug.effective_delay;
    std::vector<Vec> fut;
    fut.reserve(static_cast<std::size_t>(aug.effective_delay));
    for (int i = 1; i <= aug.effective_delay; ++i) {
        fut.push_back(st[static_cast<std::size_t>(std::max(0L, ptr + i))]);
    }
    return fut;
}

}  // namespace

std::vector<ArrayPtr> ActorNet::parameters() const {
    return {l1.w, l1.b, l2.w, l2.b, mean.w, mean.b, log_std.w, log_std.b};
}

void ActorNet::collect(const std::string& prefix, NamedArrays& out) const {
    collect_params(l1, prefix + ".l1", out);
    collect_params(l2, prefix + ".l2", out);
    collect_params(mean, prefix + ".mean", out);
    collect_params(log_std, prefix + ".log_std", out);
}

std::vector<ArrayPtr> QNet::parameters() const {
    return {l1.w, l1.b, l2.w, l2.b, head.w, head.b};
}

void QNet::collect(const std::string& prefix, NamedArrays& out) const {
    collect_params(l1, prefix + ".l1", out);
    collect_params(l2, prefix + ".l2", out);
    collect_params(head, prefix + ".head", out);
}

double SacAgent::alpha() const { return std::exp(log_alpha->data[0]); }

NamedArrays SacAgent::named_parameters() const {
    NamedArrays out;
    actor.collect("actor", out);
    q1.collect("q1", out);
    q2.collect("q2", out);
    q1_target.collect("q1_target", out);
    q2_target.collect("q2_target", out);
    out.emplace_back("log_alpha", log_alpha);
    return out;
}

namespace {

ActorNet make_actor(int state_dim, int action_dim, int hidden, RngStream& rng) {
    ActorNet a;
    a.l1 = make_linear(state_dim, hidden, rng);
    a.l2 = make_linear(hidden, hidden, rng);
    a.mean = make_linear(hidden, action_dim, rng);
    a.log_std = make_linear(hidden, action_dim, rng);
    return a;
}

QNet make_q(int state_dim, int action_dim, int hidden, RngStream& rng) {
    QNet q;
    q.l1 = make_linear(state_dim + action_dim, hidden, rng);
    q.l2 = make_linear(hidden, hidden, rng);
    q.head = make_linear(hidden, 1, rng);
    return q;
}

QNet clone_frozen(const QNet& src) {
    auto copy = [](const Linear& l) {
        Linear c;
        c.w = DArray::from(l.w->shape, l.w->data, false);
        c.b = DArray::from(l.b->shape, l.b->data, false);
        return c;
    };
    QNet t;
    t.l1 = copy(src.l1);
    t.l2 = copy(src.l2);
    t.head = copy(src.head);
    return t;
}

}  // namespace

SacAgent make_sac_agent(const SacConfig& cfg, const EnvSpec& env_spec, std::uint64_t seed) {
    RngStream rng(seed, "sac_init");
    SacAgent a;
    a.cfg = cfg;
    a.env_spec = env_spec;
    a.actor = make_actor(env_spec.state_dim, env_spec.action_dim, cfg.hidden, rng);
    a.q1 = make_q(env_spec.state_dim, env_spec.action_dim, cfg.hidden, rng);
    a.q2 = make_q(env_spec.state_dim, env_spec.action_dim, cfg.hidden, rng);
    a.q1_target = clone_frozen(a.q1);
    a.q2_target = clone_frozen(a.q2);
    a.log_alpha = DArray::scalar(0.0, true);
    Vec scale(static_cast<std::size_t>(env_spec.action_dim));
    Vec center(static_cast<std::size_t>(env_spec.action_dim));
    for (int d = 0; d < env_spec.action_dim; ++d) {
        scale[static_cast<std::size_t>(d)] =
            0.5 * (env_spec.action_high[static_cast<std::size_t>(d)] -
                   env_spec.action_low[static_cast<std::size_t>(d)]);
        center[static_cast<std::size_t>(d)] =
            0.5 * (env_spec.action_high[static_cast<std::size_t>(d)] +
                   env_spec.action_low[static_cast<std::size_t>(d)]);
    }
    a.action_scale = DArray::from({env_spec.action_dim}, std::move(scale));
    a.action_center = DArray::from({env_spec.action_dim}, std::move(center));

    OptConfig actor_oc, critic_oc, alpha_oc;
    actor_oc.lr = cfg.lr_actor;
    critic_oc.lr = cfg.lr_critic;
    alpha_oc.lr = cfg.lr_alpha;
    a.opt_actor = std::make_unique<AdamW>(a.actor.parameters(), actor_oc);
    a.opt_q1 = std::make_unique<AdamW>(a.q1.parameters(), critic_oc);
    a.opt_q2 = std::make_unique<AdamW>(a.q2.parameters(), critic_oc);
    a.opt_alpha = std::make_unique<AdamW>(std::vector<ArrayPtr>{a.log_alpha}, alpha_oc);
    return a;
}

void save_sac_agent(const std::string& path, const SacAgent& agent) {
    NamedArrays entries = agent.named_parameters();
    entries.emplace_back("__config__",
                         DArray::from({3}, {static_cast<double>(agent.cfg.hidden),
                                            static_cast<double>(agent.env_spec.state_dim),
                                            static_cast<double>(agent.env_spec.action_dim)}));
    entries.emplace_back("__action_low__", DArray::from({agent.env_spec.action_dim},
                                                        Vec(agent.env_spec.action_low)));
    entries.emplace_back("__action_high__", DArray::from({agent.env_spec.action_dim},
                                                         Vec(agent.env_spec.action_high)));
    save_checkpoint(path, entries);
}

SacAgent load_sac_agent(const std::string& path, const SacConfig& cfg) {
    const NamedArrays entries = load_checkpoint(path);
    const auto c = checkpoint_get(entries, "__config__");
    EnvSpec spec;
    spec.state_dim = static_cast<int>(c->data[1]);
    spec.action_dim = static_cast<int>(c->data[2]);
    spec.action_low = checkpoint_get(entries, "__action_low__")->data;
    spec.action_high = checkpoint_get(entries, "__action_high__")->data;
    SacConfig use = cfg;
    use.hidden = static_cast<int>(c->data[0]);
    SacAgent agent = make_sac_agent(use, spec, 0);
    for (auto& [name, param] : agent.named_parameters()) {
        auto loaded = checkpoint_get(entries, name);
        if (loaded->shape != param->shape) throw std::runtime_error("SAC checkpoint shape mismatch");
        param->data = loaded->data;
    }
    return agent;
}

PolicyOut actor_forward(Tape& tape, const SacAgent& agent, const ArrayPtr& states) {
    ArrayPtr h = ops::relu(tape, linear(tape, agent.actor.l1, states));
    h = ops::relu(tape, linear(tape, agent.actor.l2, h));
    PolicyOut po;
    po.mean = linear(tape, agent.actor.mean, h);
    po.log_std = ops::clamp(tape, linear(tape, agent.actor.log_std, h), agent.cfg.log_std_lo,
                            agent.cfg.log_std_hi);
    return po;
}

SampledAction sample_squashed(Tape& tape, const SacAgent& agent, const PolicyOut& pol,
                              RngStream* rng) {
    SampledAction out;
    ArrayPtr u = rng ? ops::gaussian_sample(tape, pol.mean, pol.log_std, rng) : pol.mean;
    ArrayPtr tu = ops::tanh(tape, u);
    out.action = ops::add(tape, ops::mul(tape, tu, agent.action_scale), agent.action_center);
    if (!rng) return out;

    // -log pi per dim: 0.5 z^2 + log_std + 0.5 log 2pi + log(scale (1 - tanh^2 u) + eps)
    ArrayPtr diff = ops::sub(tape, u, pol.mean);
    ArrayPtr z = ops::mul(tape, diff, ops::exp(tape, ops::mul_scalar(tape, pol.log_std, -1.0)));
    ArrayPtr gauss = ops::add(tape, ops::mul_scalar(tape, ops::mul(tape, z, z), 0.5), pol.log_std);
    gauss = ops::add_scalar(tape, gauss, kHalfLog2Pi);
    ArrayPtr one_m = ops::add_scalar(tape, ops::mul_scalar(tape, ops::mul(tape, tu, tu), -1.0), 1.0);
    ArrayPtr squash =
        ops::log(tape, ops::add_scalar(tape, ops::mul(tape, one_m, agent.action_scale), kSquashEps));
    ArrayPtr neg = ops::matmul(tape, ops::add(tape, gauss, squash),
                               ones_col(agent.env_spec.action_dim));
    out.log_prob = ops::mul_scalar(tape, neg, -1.0);
    return out;
}

ArrayPtr q_forward(Tape& tape, const QNet& q, const ArrayPtr& states, const ArrayPtr& actions) {
    ArrayPtr x = ops::concat(tape, {states, actions});
    ArrayPtr h = ops::relu(tape, linear(tape, q.l1, x));
    h = ops::relu(tape, linear(tape, q.l2, h));
    return linear(tape, q.head, h);
}

Vec policy_action(const SacAgent& agent, const Vec& state, bool deterministic, RngStream* rng) {
    Tape tape;
    auto s = DArray::from({1, static_cast<int>(state.size())}, Vec(state));
    PolicyOut po = actor_forward(tape, agent, s);
    SampledAction sa = sample_squashed(tape, agent, po, deterministic ? nullptr : rng);
    return sa.action->data;
}

void soft_update(SacAgent& agent) {
    const double tau = agent.cfg.tau;
    auto blend = [tau](const QNet& online, QNet& target) {
        const auto on = online.parameters();
        const auto tg = target.parameters();
        for (std::size_t i = 0; i < on.size(); ++i) {
            for (std::size_t j = 0; j < on[i]->data.size(); ++j) {
                tg[i]->data[j] = (1.0 - tau) * tg[i]->data[j] + tau * on[i]->data[j];
            }
        }
    };
    blend(agent.q1, agent.q1_target);
    blend(agent.q2, agent.q2_target);
}

Vec act(const SacAgent& agent, const Belief& belief, const AugmentedState& aug, int delta_max,
        std::span<const Vec> true_future, bool deterministic, RngStream* rng) {
    const TokenSequence tokens = tokenize(aug, delta_max);
    const std::vector<Vec> preds = belief.predict(tokens, true_future);
    if (preds.empty()) throw std::runtime_error("act: belief produced no predictions");
    const Vec& s_hat = preds.back();
    if (!all_finite(s_hat)) throw std::runtime_error("act: non-finite belief prediction");
    return policy_action(agent, s_hat, deterministic, rng);
}

std::vector<double> n_step_target(const std::vector<ReplayWindow>& windows, const SacAgent& agent,
                                  const Belief& belief, double alpha, double gamma, int n_step,
                                  RngStream& rng, TargetCache* cache, bool clamp_n_to_delay) {
    const int B = static_cast<int>(windows.size());
    if (B == 0) throw std::invalid_argument("n_step_target: empty batch");
    const int sd = agent.env_spec.state_dim;
    const int ad = agent.env_spec.action_dim;

    std::vector<int> n_eff(static_cast<std::size_t>(B));
    std::vector<bool> boot(static_cast<std::size_t>(B));
    std::vector<double> acc(static_cast<std::size_t>(B)), disc(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
        const ReplayWindow& w = windows[static_cast<std::size_t>(i)];
        int n = n_step;
        if (w.delta >= 1) {
            if (n > w.delta && !clamp_n_to_delay) {
                throw std::invalid_argument("n_step_target: N exceeds the window delay");
            }
            n = std::min(n, w.delta);
        }
        double a = 0.0, d = 1.0;
        bool terminated = false;
        int j = 0;
        for (; j < n;) {
            a += d * w.rewards[static_cast<std::size_t>(j)];
            d *= gamma;
            const bool terminal = w.done[static_cast<std::size_t>(j)] &&
                                  !w.truncated[static_cast<std::size_t>(j)];
            ++j;
            if (terminal) {
                terminated = true;
                break;
            }
        }
        n_eff[static_cast<std::size_t>(i)] = j;
        acc[static_cast<std::size_t>(i)] = a;
        disc[static_cast<std::size_t>(i)] = d;
        boot[static_cast<std::size_t>(i)] = !terminated;
    }

    // Belief predictions at the per-sample bootstrap horizon. The DFBT path
    // is batched into a single forward.
    std::vector<Vec> shat(static_cast<std::size_t>(B));
    const auto* dfbt = dynamic_cast<const DFBTBelief*>(&belief);
    if (dfbt) {
        std::vector<TokenSequence> token_batch;
        std::vector<int> rows;
        for (int i = 0; i < B; ++i) {
            const ReplayWindow& w = windows[static_cast<std::size_t>(i)];
            if (w.delta >= 1) {
                token_batch.push_back(*w.tokens);
                rows.push_back(i);
            } else {
                shat[static_cast<std::size_t>(i)] =
                    w.states[static_cast<std::size_t>(n_eff[static_cast<std::size_t>(i)])];
            }
        }
        if (!token_batch.empty()) {
            const auto preds = dfbt->predict_batch(token_batch);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                const int i = rows[k];
                shat[static_cast<std::size_t>(i)] =
                    preds[k][static_cast<std::size_t>(n_eff[static_cast<std::size_t>(i)] - 1)];
            }
        }
    } else {
        for (int i = 0; i < B; ++i) {
            const ReplayWindow& w = windows[static_cast<std::size_t>(i)];
            if (w.delta >= 1) {
                std::vector<Vec> future(w.states.begin() + 1, w.states.end());
                const auto preds = belief.predict(*w.tokens, future);
                shat[static_cast<std::size_t>(i)] =
                    preds[static_cast<std::size_t>(n_eff[static_cast<std::size_t>(i)] - 1)];
            } else {
                shat[static_cast<std::size_t>(i)] =
                    w.states[static_cast<std::size_t>(n_eff[static_cast<std::size_t>(i)])];
            }
        }
    }

    auto shat_arr = DArray::zeros({B, sd});
    auto strue_arr = DArray::zeros({B, sd});
    auto anchor_s = DArray::zeros({B, sd});
    auto anchor_a = DArray::zeros({B, ad});
    for (int i = 0; i < B; ++i) {
        const ReplayWindow& w = windows[static_cast<std::size_t>(i)];
        const Vec& sh = shat[static_cast<std::size_t>(i)];
        const Vec& st = w.states[static_cast<std::size_t>(n_eff[static_cast<std::size_t>(i)])];
        std::copy(sh.begin(), sh.end(), shat_arr->data.begin() + static_cast<std::size_t>(i) * sd);
        std::copy(st.begin(), st.end(), strue_arr->data.begin() + static_cast<std::size_t>(i) * sd);
        std::copy(w.states[0].begin(), w.states[0].end(),
                  anchor_s->data.begin() + static_cast<std::size_t>(i) * sd);
        std::copy(w.actions[0].begin(), w.actions[0].end(),
                  anchor_a->data.begin() + static_cast<std::size_t>(i) * ad);
    }

    // a' ~ pi(.|s_hat); Q_target evaluated at the true state (delay-free
    // training); the tape is discarded, the target is a constant.
    Tape tape;
    PolicyOut po = actor_forward(tape, agent, shat_arr);
    SampledAction sa = sample_squashed(tape, agent, po, &rng);
    ArrayPtr q1t = q_forward(tape, agent.q1_target, strue_arr, sa.action);
    ArrayPtr q2t = q_forward(tape, agent.q2_target, strue_arr, sa.action);

    std::vector<double> y(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
        const std::size_t si = static_cast<std::size_t>(i);
        double value = acc[si];
        if (boot[si]) {
            const double qmin = agent.cfg.twin_critics ? std::min(q1t->data[si], q2t->data[si])
                                                       : q1t->data[si];
            const double lp = sa.log_prob->data[si];
            const double soft = agent.cfg.strict_paper_sign ? qmin + alpha * lp : qmin - alpha * lp;
            value = acc[si] + disc[si] * soft;
        }
        y[si] = value;
    }

    if (cache) {
        cache->belief_states = shat_arr;
        cache->true_states = strue_arr;
        cache->anchor_states = anchor_s;
        cache->anchor_actions = anchor_a;
        cache->horizon = n_eff;
    }
    return y;
}

double critic_update(SacAgent& agent, const TargetCache& cache, const std::vector<double>& y) {
    const int B = static_cast<int>(y.size());
    Tape tape;
    auto yarr = DArray::from({B, 1}, std::vector<double>(y));
    ArrayPtr q1 = q_forward(tape, agent.q1, cache.anchor_states, cache.anchor_actions);
    ArrayPtr q2 = q_forward(tape, agent.q2, cache.anchor_states, cache.anchor_actions);
    ArrayPtr d1 = ops::sub(tape, q1, yarr);
    ArrayPtr d2 = ops::sub(tape, q2, yarr);
    ArrayPtr loss = ops::add(tape, ops::mul_scalar(tape, ops::mean(tape, ops::mul(tape, d1, d1)), 0.5),
                             ops::mul_scalar(tape, ops::mean(tape, ops::mul(tape, d2, d2)), 0.5));
    agent.opt_q1->zero_grads();
    agent.opt_q2->zero_grads();
    tape.backward(loss);
    agent.opt_q1->step();
    agent.opt_q2->step();
    return loss->item();
}

std::pair<double, double> actor_update(SacAgent& agent, const TargetCache& cache, RngStream& rng) {
    Tape tape;
    PolicyOut po = actor_forward(tape, agent, cache.belief_states);
    SampledAction sa = sample_squashed(tape, agent, po, &rng);
    ArrayPtr qa = q_forward(tape, agent.q1, cache.true_states, sa.action);
    ArrayPtr qmin = agent.cfg.twin_critics
                        ? ops::minimum(tape, qa, q_forward(tape, agent.q2, cache.true_states, sa.action))
                        : qa;
    ArrayPtr loss =
        ops::mean(tape, ops::sub(tape, ops::mul_scalar(tape, sa.log_prob, agent.alpha()), qmin));
    agent.opt_actor->zero_grads();
    tape.backward(loss);
    agent.opt_actor->step();

    double mean_logp = 0.0;
    for (double v : sa.log_prob->data) mean_logp += v;
    mean_logp /= static_cast<double>(sa.log_prob->size());

    // Temperature tuned toward the entropy target: d/dlog_alpha of
    // -log_alpha * (E[log pi] + H_target).
    agent.log_alpha->ensure_grad();
    agent.log_alpha->grad[0] = -(mean_logp + agent.target_entropy());
    agent.opt_alpha->step();
    agent.log_alpha->zero_grad();
    return {loss->item(), mean_logp};
}

ReplayBuffer::ReplayBuffer(long capacity_transitions, int delta, int n_step)
    : capacity_(capacity_transitions), delta_(delta), n_step_(n_step) {
    if (capacity_ < 1) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::begin_episode(std::uint64_t seed) {
    episodes_.emplace_back();
    episodes_.back().seed = seed;
}

void ReplayBuffer::push(const Transition& t) {
    if (episodes_.empty()) throw std::runtime_error("ReplayBuffer: no episode started");
    episodes_.back().records.push_back(t);
    ++transitions_;
    evict();
}

void ReplayBuffer::evict() {
    while (transitions_ > capacity_ && episodes_.size() > 1) {
        transitions_ -= episodes_.front().length();
        episodes_.pop_front();
    }
}

long ReplayBuffer::window_total() const {
    // t ranges over [delta, len - max(0, n - delta)]: the window must fit
    // states through t - delta + n, and t = len is reachable when n <= delta
    // so that terminal transitions appear inside bootstrap spans.
    const long shrink = std::max(0, n_step_ - delta_);
    long total = 0;
    for (const auto& ep : episodes_) {
        total += std::max(0L, ep.length() - delta_ + 1 - shrink);
    }
    return total;
}

std::vector<ReplayWindow> ReplayBuffer::sample_windows(int batch,
                                                       const std::optional<DelaySpec>& delay,
                                                       RngStream& rng) const {
    const long total = window_total();
    if (total < 1) throw std::runtime_error("ReplayBuffer: nothing to sample");
    const long shrink = std::max(0, n_step_ - delta_);
    std::vector<ReplayWindow> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        long k = rng.uniform_int(0, total - 1);
        const Trajectory* traj = nullptr;
        long t = 0;
        for (const auto& ep : episodes_) {
            const long cnt = std::max(0L, ep.length() - delta_ + 1 - shrink);
            if (k < cnt) {
                traj = &ep;
                t = delta_ + k;
                break;
            }
            k -= cnt;
        }
        if (!traj) throw std::runtime_error("ReplayBuffer: index walk failed");
        int eff = delta_;
        if (delay && delay->kind == DelaySpec::Kind::uniform) {
            eff = static_cast<int>(rng.uniform_int(1, delay->delta_max));
        }
        const int n = delta_ >= 1 ? std::min(n_step_, eff) : n_step_;
        out.push_back(window_extract(*traj, t, eff, n, delta_));
    }
    return out;
}

TrainAgentResult train_agent(std::shared_ptr<const Env> env, const std::optional<DelaySpec>& delay,
                             std::shared_ptr<const Belief> belief, SacAgent& agent, long steps,
                             std::uint64_t seed, const TrainHooks& hooks) {
    const SacConfig& cfg = agent.cfg;
    if (!belief) throw std::invalid_argument("train_agent: belief required (use oracle when delay-free)");
    if (delay && cfg.n_step > delay->delta_max) {
        throw std::invalid_argument("train_agent: N must not exceed delta_max");
    }
    if (env->spec().state_dim != agent.env_spec.state_dim ||
        env->spec().action_dim != agent.env_spec.action_dim) {
        throw std::invalid_argument("train_agent: env/agent dimension mismatch");
    }

    const int delta = delay ? delay->delta_max : 0;
    const int n_step = delay ? cfg.n_step : 1;
    ReplayBuffer buffer(cfg.buffer_capacity, delta, n_step);
    RngStream explore_rng(seed, "explore");
    RngStream warmup_rng(seed, "warmup");
    RngStream target_rng(seed, "target");
    RngStream actor_rng(seed, "actor_noise");
    RngStream replay_rng(seed, "replay");

    TrainAgentResult res;
    double recent_closs = 0.0, recent_aloss = 0.0;

    std::shared_ptr<DelayedEnv> denv;
    AugmentedState aug;
    Vec state;
    RngStream env_noise(0, "env_noise");
    long ep = 0, ep_t = 0;

    auto reset_free = [&]() {
        const std::uint64_t es = mix_seed(seed, 0x464545ULL + static_cast<std::uint64_t>(ep));
        state = env_reset(*env, es);
        env_noise = RngStream(es, "env_noise");
        buffer.begin_episode(es);
        ep_t = 0;
        ++ep;
    };
    if (delay) {
        denv = std::make_shared<DelayedEnv>(env, *delay, mix_seed(seed, 0xDE1A5ULL));
        aug = denv->reset();
        buffer.begin_episode(denv->episode_seed());
    } else {
        reset_free();
    }

    const EnvSpec& spec = env->spec();
    auto random_action = [&]() {
        Vec a(static_cast<std::size_t>(spec.action_dim));
        for (int d = 0; d < spec.action_dim; ++d) {
            a[static_cast<std::size_t>(d)] =
                warmup_rng.uniform_range(spec.action_low[static_cast<std::size_t>(d)],
                                         spec.action_high[static_cast<std::size_t>(d)]);
        }
        return a;
    };

    auto maybe_checkpoint = [&](long step) {
        if (hooks.checkpoint_prefix.empty()) return;
        for (long cs : hooks.checkpoint_steps) {
            if (cs == step) {
                save_sac_agent(hooks.checkpoint_prefix + "step" + std::to_string(step) + ".dblf", agent);
            }
        }
    };

    for (long step = 0; step < steps; ++step) {
        Vec action;
        if (step < cfg.warmup_steps) {
            action = random_action();
        } else if (delay) {
            action = act(agent, *belief, aug, delta, privileged_future(*denv, aug), false,
                         &explore_rng);
        } else {
            action = policy_action(agent, state, false, &explore_rng);
        }

        if (delay) {
            const DelayedStep out = denv->step(action);
            buffer.push(denv->trajectory().records.back());
            if (!denv->episode_active()) {
                aug = denv->reset();
                buffer.begin_episode(denv->episode_seed());
            } else {
                aug = out.aug;
            }
        } else {
            auto [next, reward, done_env] = env->step(state, action, env_noise);
            Transition tr;
            tr.state = state;
            tr.action = action;
            tr.reward = reward;
            tr.next_state = next;
            tr.step_index = ep_t;
            const bool at_horizon = (ep_t + 1 >= spec.horizon);
            tr.done = done_env || at_horizon;
            tr.truncated = !done_env && at_horizon;
            buffer.push(tr);
            ++ep_t;
            state = std::move(next);
            if (tr.done) reset_free();
        }

        if (step >= cfg.warmup_steps && buffer.window_total() >= cfg.batch) {
            if (step % cfg.critic_freq == 0) {
                const auto windows = buffer.sample_windows(cfg.batch, delay, replay_rng);
                TargetCache cache;
                const bool uniform_delay = delay && delay->kind == DelaySpec::Kind::uniform;
                const auto y = n_step_target(windows, agent, *belief, agent.alpha(), cfg.gamma,
                                             n_step, target_rng, &cache, uniform_delay);
                recent_closs = critic_update(agent, cache, y);
                soft_update(agent);
                if (step % cfg.actor_freq == 0) {
                    const auto [aloss, logp] = actor_update(agent, cache, actor_rng);
                    recent_aloss = aloss;
                    (void)logp;
                }
            }
        }

        const long done_steps = step + 1;
        if ((cfg.eval_interval > 0 && done_steps % cfg.eval_interval == 0) || done_steps == steps) {
            const auto [m, s] =
                evaluate_policy(env, delay, belief.get(), agent, cfg.eval_episodes,
                                mix_seed(seed, 0xEEA1ULL + static_cast<std::uint64_t>(done_steps)),
                                true);
            EvalPoint pt;
            pt.step = done_steps;
            pt.mean_return = m;
            pt.std_return = s;
            pt.n_episodes = cfg.eval_episodes;
            pt.alpha = agent.alpha();
            pt.critic_loss = recent_closs;
            pt.actor_loss = recent_aloss;
            res.curve.push_back(pt);
            res.final_mean_return = m;
            res.final_std_return = s;
        }
        maybe_checkpoint(done_steps);
    }
    if (!hooks.checkpoint_prefix.empty()) {
        save_sac_agent(hooks.checkpoint_prefix + "final.dblf", agent);
    }
    return res;
}

std::pair<double, double> evaluate_policy(std::shared_ptr<const Env> env,
                                          const std::optional<DelaySpec>& delay,
                                          const Belief* belief, const SacAgent& agent,
                                          int episodes, std::uint64_t seed, bool deterministic) {
    std::vector<double> returns;
    RngStream act_rng(seed, "eval_actions");
    if (delay) {
        if (!belief) throw std::invalid_argument("evaluate_policy: delayed evaluation needs a belief");
        DelayedEnv denv(env, *delay, seed);
        for (int e = 0; e < episodes; ++e) {
            AugmentedState aug = denv.reset();
            double ret = 0.0;
            while (denv.episode_active()) {
                const Vec a = act(agent, *belief, aug, delay->delta_max,
                                  privileged_future(denv, aug), deterministic,
                                  deterministic ? nullptr : &act_rng);
                const DelayedStep out = denv.step(a);
                ret += denv.trajectory().records.back().reward;  // true reward, privileged
                aug = out.aug;
            }
            returns.push_back(ret);
        }
    } else {
        for (int e = 0; e < episodes; ++e) {
            const std::uint64_t es = mix_seed(seed, static_cast<std::uint64_t>(e));
            Vec state = env_reset(*env, es);
            RngStream noise(es, "env_noise");
            double ret = 0.0;
            for (int t = 0; t < env->spec().horizon; ++t) {
                const Vec a = policy_action(agent, state, deterministic,
                                            deterministic ? nullptr : &act_rng);
                auto [next, reward, done] = env->step(state, a, noise);
                ret += reward;
                state = std::move(next);
                if (done) break;
            }
            returns.push_back(ret);
        }
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(returns.size());
    return {mean, std::sqrt(var)};
}

std::pair<double, double> evaluate_random(std::shared_ptr<const Env> env, int episodes,
                                          std::uint64_t seed) {
    const Policy pol = random_policy(*env);
    std::vector<double> returns;
    for (int e = 0; e < episodes; ++e) {
        const Trajectory traj =
            rollout(*env, pol, env->spec().horizon, mix_seed(seed, static_cast<std::uint64_t>(e)));
        double ret = 0.0;
        for (const auto& r : traj.records) ret += r.reward;
        returns.push_back(ret);
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(returns.size());
    return {mean, std::sqrt(var)};
}

double normalized_return(double r_alg, double r_sac, double r_random) {
    const double denom = r_sac - r_random;
    if (denom == 0.0) throw std::invalid_argument("normalized_return: degenerate denominator");
    return (r_alg - r_random) / denom;
}

void write_learning_curve_csv(const std::string& path, const std::vector<EvalPoint>& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "env_step,mean_return,std_return,n_episodes,alpha,critic_loss,actor_loss\n";
    for (const auto& p : curve) {
        os << p.step << "," << format_double(p.mean_return) << "," << format_double(p.std_return)
           << "," << p.n_episodes << "," << format_double(p.alpha) << ","
           << format_double(p.critic_loss) << "," << format_double(p.actor_loss) << "\n";
    }
}

std::vector<EvalPoint> read_learning_curve_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<EvalPoint> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EvalPoint p;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        ss >> p.step >> p.mean_return >> p.std_return >> p.n_episodes >> p.alpha >> p.critic_loss >>
            p.actor_loss;
        out.push_back(p);
    }
    return out;
}

}  // namespace dblf
