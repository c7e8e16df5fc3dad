#include "dblf/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dblf {

namespace {

void check_finite_vec(const Vec& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite ") + what);
    }
}

double wrap_pi(double x) {
    x = std::fmod(x + M_PI, 2.0 * M_PI);
    if (x < 0) x += 2.0 * M_PI;
    return x - M_PI;
}

// Classic torque-limited pendulum. State is the 3D observation
// [cos th, sin th, th_dot]; theta = 0 is upright.
class PendulumEnv : public Env {
public:
    explicit PendulumEnv(const EnvOptions& opts) {
        id_ = "pendulum";
        spec_.state_dim = 3;
        spec_.action_dim = 1;
        spec_.action_low = {-kMaxTorque};
        spec_.action_high = {kMaxTorque};
        spec_.gamma = 0.99;
        spec_.horizon = 200;
        spec_.noise_prob = opts.noise_prob;
        spec_.noise_scale = opts.noise_scale;
        spec_.reward_low = -(M_PI * M_PI + 0.1 * kMaxSpeed * kMaxSpeed +
                             0.001 * kMaxTorque * kMaxTorque);
        spec_.reward_high = 0.0;
    }

    Vec reset(RngStream& rng) const override {
        const double th = rng.uniform_range(-M_PI, M_PI);
        const double thdot = rng.uniform_range(-1.0, 1.0);
        return {std::cos(th), std::sin(th), thdot};
    }

    std::tuple<Vec, double, bool> step(const Vec& state, const Vec& action,
                                       RngStream& rng) const override {
        check_finite_vec(state, "state");
        check_finite_vec(action, "action");
        const double u = std::clamp(action[0], -kMaxTorque, kMaxTorque);
        double th = std::atan2(state[1], state[0]);
        double thdot = state[2];
        const double cost = wrap_pi(th) * wrap_pi(th) + 0.1 * thdot * thdot + 0.001 * u * u;
        double acc = 3.0 * kG / (2.0 * kL) * std::sin(th) + 3.0 / (kM * kL * kL) * u;
        thdot = std::clamp(thdot + acc * kDt, -kMaxSpeed, kMaxSpeed);
        th = th + thdot * kDt;
        if (spec_.noise_prob > 0.0 && rng.uniform() < spec_.noise_prob) {
            th += spec_.noise_scale * rng.normal();
            thdot = std::clamp(thdot + spec_.noise_scale * rng.normal(), -kMaxSpeed, kMaxSpeed);
        }
        return {{std::cos(th), std::sin(th), thdot}, -cost, false};
    }

private:
    static constexpr double kG = 10.0, kM = 1.0, kL = 1.0, kDt = 0.05;
    static constexpr double kMaxSpeed = 8.0, kMaxTorque = 2.0;
};

// 2D point mass with velocity drag, driven toward a fixed goal. The reward
// is shaped by distance with a sparse success bonus; episodes truly
// terminate on reaching the goal.
class PointMassReachEnv : public Env {
public:
    explicit PointMassReachEnv(const EnvOptions& opts) {
        id_ = "point_mass_reach";
        spec_.state_dim = 4;
        spec_.action_dim = 2;
        spec_.action_low = {-1.0, -1.0};
        spec_.action_high = {1.0, 1.0};
        spec_.gamma = 0.99;
        spec_.horizon = 100;
        spec_.noise_prob = opts.noise_prob;
        spec_.noise_scale = opts.noise_scale;
        spec_.reward_low = -32.0;
        spec_.reward_high = kBonus;
    }

    Vec reset(RngStream& rng) const override {
        return {rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), 0.0, 0.0};
    }

    std::tuple<Vec, double, bool> step(const Vec& state, const Vec& action,
                                       RngStream& rng) const override {
        check_finite_vec(state, "state");
        check_finite_vec(action, "action");
        Vec next(4);
        for (int d = 0; d < 2; ++d) {
            const double a = std::clamp(action[static_cast<std::size_t>(d)], -1.0, 1.0);
            next[static_cast<std::size_t>(2 + d)] = kDrag * state[static_cast<std::size_t>(2 + d)] + kDt * a;
            next[static_cast<std::size_t>(d)] =
                state[static_cast<std::size_t>(d)] + kDt * next[static_cast<std::size_t>(2 + d)];
        }
        if (spec_.noise_prob > 0.0 && rng.uniform() < spec_.noise_prob) {
            for (auto& x : next) x += spec_.noise_scale * rng.normal();
        }
        const double dx = next[0] - kGoalX, dy = next[1] - kGoalY;
        const double dist = std::sqrt(dx * dx + dy * dy);
        const bool reached = dist < kGoalRadius;
        const double reward = -dist + (reached ? kBonus : 0.0);
        return {next, reward, reached};
    }

private:
    static constexpr double kDt = 0.1, kDrag = 0.95;
    static constexpr double kGoalX = 1.0, kGoalY = 1.0, kGoalRadius = 0.1, kBonus = 10.0;
};

}  // namespace

MassSpringDamperEnv::MassSpringDamperEnv(const EnvOptions& opts) {
    id_ = "mass_spring_damper";
    const double dt = 0.05;
    const double k = opts.msd_stiffness;
    const double c = opts.msd_damping;
    A_ = {1.0, dt, -k * dt, 1.0 - c * dt};
    B_ = {0.0, dt};
    dirac_init_ = opts.msd_dirac_init;

    // Spectral norm of the 2x2 A, in closed form via the eigenvalues of A^T A.
    const double a = A_[0], b = A_[1], cc = A_[2], d = A_[3];
    const double p = a * a + cc * cc;
    const double q = a * b + cc * d;
    const double r = b * b + d * d;
    const double tr = p + r;
    const double disc = std::sqrt((p - r) * (p - r) + 4.0 * q * q);
    lipschitz_ = std::sqrt(0.5 * (tr + disc));

    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.action_low = {-1.0};
    spec_.action_high = {1.0};
    spec_.gamma = 0.99;
    spec_.horizon = 200;
    spec_.noise_prob = opts.noise_prob;
    spec_.noise_scale = opts.noise_scale;

    // Conservative reachable-set envelope from the init box with |u| <= 1,
    // used only to document reward bounds. Diverging (unstable) settings are
    // capped rather than iterated forever.
    double pow_norm = 1.0;  // ||A^k|| upper bound via submultiplicativity
    double reach = std::sqrt(2.0);
    double drive = 0.0;
    const double b_norm = std::sqrt(B_[0] * B_[0] + B_[1] * B_[1]);
    double sup_pow = 1.0;
    std::array<double, 4> Ak = A_;
    for (int i = 0; i < 2000; ++i) {
        const double fa = Ak[0], fb = Ak[1], fc = Ak[2], fd = Ak[3];
        const double pp = fa * fa + fc * fc, qq = fa * fb + fc * fd, rr = fb * fb + fd * fd;
        pow_norm = std::sqrt(0.5 * (pp + rr + std::sqrt((pp - rr) * (pp - rr) + 4.0 * qq * qq)));
        sup_pow = std::max(sup_pow, pow_norm);
        drive += pow_norm * b_norm;
        if (pow_norm < 1e-9 || drive > 1e6) break;
        const std::array<double, 4> next = {Ak[0] * A_[0] + Ak[1] * A_[2], Ak[0] * A_[1] + Ak[1] * A_[3],
                                            Ak[2] * A_[0] + Ak[3] * A_[2], Ak[2] * A_[1] + Ak[3] * A_[3]};
        Ak = next;
    }
    reach = sup_pow * reach + b_norm + drive;
    spec_.reward_low = -(1.1 * reach * reach + 0.001);
    spec_.reward_high = 0.0;
}

Vec MassSpringDamperEnv::reset(RngStream& rng) const {
    if (dirac_init_) return {1.0, 0.0};
    return {rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)};
}

std::tuple<Vec, double, bool> MassSpringDamperEnv::step(const Vec& state, const Vec& action,
                                                        RngStream& rng) const {
    check_finite_vec(state, "state");
    check_finite_vec(action, "action");
    const double u = std::clamp(action[0], -1.0, 1.0);
    Vec next = {A_[0] * state[0] + A_[1] * state[1] + B_[0] * u,
                A_[2] * state[0] + A_[3] * state[1] + B_[1] * u};
    if (spec_.noise_prob > 0.0 && rng.uniform() < spec_.noise_prob) {
        for (auto& x : next) x += spec_.noise_scale * rng.normal();
    }
    const double reward = -(next[0] * next[0] + 0.1 * next[1] * next[1] + 0.001 * u * u);
    return {next, reward, false};
}

const Vec& Trajectory::state_at(long i) const {
    if (i < 0 || i > length()) throw std::out_of_range("Trajectory::state_at");
    if (i == length()) return records.back().next_state;
    return records[static_cast<std::size_t>(i)].state;
}

std::shared_ptr<Env> make_env(const std::string& env_id, const EnvOptions& opts) {
    if (env_id == "pendulum") return std::make_shared<PendulumEnv>(opts);
    if (env_id == "mass_spring_damper") return std::make_shared<MassSpringDamperEnv>(opts);
    if (env_id == "point_mass_reach") return std::make_shared<PointMassReachEnv>(opts);
    throw std::invalid_argument("unknown env_id: " + env_id);
}

Vec env_reset(const Env& env, std::uint64_t seed) {
    RngStream rng(seed, "env_reset");
    return env.reset(rng);
}

std::tuple<Vec, double, bool> env_step(const Env& env, const Vec& state, const Vec& action,
                                       RngStream& rng) {
    return env.step(state, action, rng);
}

Vec clip_action(const Env& env, const Vec& action) {
    const EnvSpec& spec = env.spec();
    if (static_cast<int>(action.size()) != spec.action_dim) {
        throw std::invalid_argument("action has dim " + std::to_string(action.size()) + ", expected " +
                                    std::to_string(spec.action_dim));
    }
    Vec out(action.size());
    for (std::size_t d = 0; d < action.size(); ++d) {
        out[d] = std::clamp(action[d], spec.action_low[d], spec.action_high[d]);
    }
    return out;
}

Policy random_policy(const Env& env) {
    const EnvSpec spec = env.spec();
    return [spec](const Vec&, RngStream& rng) {
        Vec a(static_cast<std::size_t>(spec.action_dim));
        for (int d = 0; d < spec.action_dim; ++d) {
            a[static_cast<std::size_t>(d)] =
                rng.uniform_range(spec.action_low[static_cast<std::size_t>(d)],
                                  spec.action_high[static_cast<std::size_t>(d)]);
        }
        return a;
    };
}

Trajectory rollout(const Env& env, const Policy& policy, int horizon, std::uint64_t seed) {
    Trajectory traj;
    traj.seed = seed;
    RngStream noise_rng(seed, "env_noise");
    RngStream policy_rng(seed, "policy");
    Vec state = env_reset(env, seed);
    for (int t = 0; t < horizon; ++t) {
        Vec action = policy(state, policy_rng);
        if (static_cast<int>(action.size()) != env.spec().action_dim) {
            throw std::invalid_argument("policy returned wrong action dim");
        }
        auto [next, reward, done] = env.step(state, action, noise_rng);
        Transition tr;
        tr.state = state;
        tr.action = std::move(action);
        tr.reward = reward;
        tr.next_state = next;
        tr.step_index = t;
        const bool at_horizon = (t + 1 == horizon);
        tr.done = done || at_horizon;
        tr.truncated = !done && at_horizon;
        traj.records.push_back(std::move(tr));
        state = std::move(next);
        if (traj.records.back().done) break;
    }
    return traj;
}

}  // namespace dblf
