#include "dblf/theory.hpp"

#include "dblf/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dblf {

namespace {

double l2_dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

double l2_norm_diff(const Vec& a, const Vec& b) { return l2_dist(a, b); }

}  // namespace

double geometric_bound(double lipschitz, double eps, int delta) {
    if (lipschitz < 0 || eps < 0 || delta < 1) {
        throw std::invalid_argument("geometric_bound: need L >= 0, eps >= 0, delta >= 1");
    }
    double acc = 0.0;
    double pw = 1.0;
    for (int k = 0; k < delta; ++k) {
        acc += pw * eps;
        pw *= lipschitz;
    }
    return acc;
}

double stochastic_bound(double lipschitz, double eps,
                        const std::vector<std::pair<int, double>>& dist) {
    if (dist.empty()) throw std::invalid_argument("stochastic_bound: empty distribution");
    double total = 0.0;
    for (const auto& [delta, w] : dist) {
        if (delta < 1 || w < 0) throw std::invalid_argument("stochastic_bound: bad support point");
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("stochastic_bound: weights do not sum to 1");
    }
    double acc = 0.0;
    for (const auto& [delta, w] : dist) acc += w * geometric_bound(lipschitz, eps, delta);
    return acc;
}

std::vector<std::pair<int, double>> uniform_delay_dist(int delta_max) {
    if (delta_max < 1) throw std::invalid_argument("uniform_delay_dist: delta_max must be >= 1");
    std::vector<std::pair<int, double>> d;
    // Accumulate exactly to 1: the last weight absorbs rounding.
    double acc = 0.0;
    for (int k = 1; k <= delta_max; ++k) {
        double w = 1.0 / static_cast<double>(delta_max);
        if (k == delta_max) w = 1.0 - acc;
        acc += w;
        d.emplace_back(k, w);
    }
    return d;
}

double empirical_lipschitz(const OneStepFn& f, const PairSampler& sampler, long n_pairs,
                           std::uint64_t seed) {
    if (n_pairs < 1) throw std::invalid_argument("empirical_lipschitz: n_pairs must be >= 1");
    RngStream rng(seed, "lipschitz_pairs");
    double best = 0.0;
    for (long i = 0; i < n_pairs; ++i) {
        const Vec x1 = sampler.state(rng);
        const Vec x2 = sampler.state(rng);
        const Vec a1 = sampler.action ? sampler.action(rng) : Vec{};
        const Vec a2 = sampler.action ? sampler.action(rng) : Vec{};
        const double d = l2_dist(x1, x2) + (a1.empty() ? 0.0 : l2_dist(a1, a2));
        if (d == 0.0) continue;  // coincident pair
        const double num = l2_norm_diff(f(x1, a1), f(x2, a2));
        best = std::max(best, num / d);
    }
    return best;
}

double w1_empirical(std::vector<double> p, std::vector<double> q) {
    if (p.empty() || q.empty()) throw std::invalid_argument("w1_empirical: empty sample set");
    std::sort(p.begin(), p.end());
    std::sort(q.begin(), q.end());
    const std::size_t n = p.size(), m = q.size();
    if (n == m) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::fabs(p[i] - q[i]);
        return acc / static_cast<double>(n);
    }
    // Integrate |F^-1 - G^-1| over the merged quantile grid. Both inverse
    // CDFs are step functions, so each cell contributes exactly.
    double acc = 0.0;
    double u = 0.0;
    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        const double ui = static_cast<double>(i + 1) / static_cast<double>(n);
        const double uj = static_cast<double>(j + 1) / static_cast<double>(m);
        const double next = std::min(ui, uj);
        acc += (next - u) * std::fabs(p[i] - q[j]);
        u = next;
        if (ui <= next + 1e-15) ++i;
        if (uj <= next + 1e-15) ++j;
    }
    return acc;
}

bool bound_respected(double measured, double bound) {
    return measured <= bound + 1e-9 * std::max(1.0, bound);
}

bool BoundReport::recursive_sound() const {
    for (const auto& r : rows) {
        if (r.has_recursive && !bound_respected(r.measured_recursive, r.bound)) return false;
    }
    return true;
}

LipschitzSystem expansive_1d() {
    LipschitzSystem s;
    s.name = "expansive_1d";
    s.state_dim = 1;
    s.action_dim = 0;
    s.lipschitz = 1.2;
    s.eps = 0.01;
    s.f = [](const Vec& x, const Vec&) { return Vec{1.2 * x[0]}; };
    s.f_theta = [](const Vec& x, const Vec&) { return Vec{1.2 * x[0] + 0.01}; };
    s.deterministic = true;
    s.sampler.state = [](RngStream& rng) { return Vec{rng.uniform_range(-1.0, 1.0)}; };
    s.sampler.action = nullptr;
    return s;
}

LipschitzSystem contraction_1d() {
    LipschitzSystem s = expansive_1d();
    s.name = "contraction_1d";
    s.lipschitz = 0.5;
    s.f = [](const Vec& x, const Vec&) { return Vec{0.5 * x[0]}; };
    s.f_theta = [](const Vec& x, const Vec&) { return Vec{0.5 * x[0] + 0.01}; };
    return s;
}

LipschitzSystem exact_1d() {
    LipschitzSystem s = expansive_1d();
    s.name = "exact_1d";
    s.eps = 0.0;
    s.f_theta = s.f;
    return s;
}

LipschitzSystem make_system(const std::string& name) {
    if (name == "expansive_1d") return expansive_1d();
    if (name == "contraction_1d") return contraction_1d();
    if (name == "exact_1d") return exact_1d();
    throw std::invalid_argument("unknown theory system: " + name);
}

BoundReport rollout_error_experiment(const LipschitzSystem& system, const std::vector<int>& deltas,
                                     RolloutMode mode, long n_rollouts, std::uint64_t seed,
                                     const DirectForecaster& forecaster) {
    if (!system.deterministic) {
        throw std::invalid_argument("rollout_error_experiment: stochastic systems are out of scope");
    }
    if (deltas.empty()) throw std::invalid_argument("rollout_error_experiment: empty delta list");
    if (mode == RolloutMode::direct_proxy && !forecaster) {
        throw std::invalid_argument("rollout_error_experiment: direct_proxy needs a forecaster");
    }

    BoundReport report;
    report.system = system.name;
    for (int delta : deltas) {
        BoundRow row;
        row.delta = delta;
        row.lipschitz = system.lipschitz;
        row.eps = system.eps;
        row.bound = geometric_bound(system.lipschitz, system.eps, delta);
        RngStream rng(seed, "rollout_" + std::to_string(delta));
        double worst = 0.0;
        for (long r = 0; r < n_rollouts; ++r) {
            Vec x = system.sampler.state(rng);
            std::vector<Vec> actions;
            actions.reserve(static_cast<std::size_t>(delta));
            for (int k = 0; k < delta; ++k) {
                actions.push_back(system.sampler.action ? system.sampler.action(rng) : Vec{});
            }
            if (mode == RolloutMode::recursive) {
                Vec xt = x, xh = x;
                for (int k = 0; k < delta; ++k) {
                    xt = system.f(xt, actions[static_cast<std::size_t>(k)]);
                    xh = system.f_theta(xh, actions[static_cast<std::size_t>(k)]);
                }
                worst = std::max(worst, l2_dist(xh, xt));
            } else {
                Vec xt = x;
                std::vector<Vec> truth;
                for (int k = 0; k < delta; ++k) {
                    xt = system.f(xt, actions[static_cast<std::size_t>(k)]);
                    truth.push_back(xt);
                }
                const std::vector<Vec> pred = forecaster(x, actions);
                if (pred.size() != truth.size()) {
                    throw std::runtime_error("direct forecaster returned wrong horizon count");
                }
                for (std::size_t k = 0; k < truth.size(); ++k) {
                    worst = std::max(worst, l2_dist(pred[k], truth[k]));
                }
            }
        }
        if (mode == RolloutMode::recursive) {
            row.measured_recursive = worst;
            row.has_recursive = true;
        } else {
            row.eps_direct = worst;
            row.has_direct = true;
            const auto [v, m] = comparison_verdict(worst, system.lipschitz, system.eps, delta);
            row.verdict = v;
            row.margin = m;
        }
        report.rows.push_back(row);
    }
    return report;
}

std::pair<bool, double> comparison_verdict(double eps_direct, double lipschitz, double eps,
                                           int delta) {
    const double bound = geometric_bound(lipschitz, eps, delta);
    return {eps_direct <= bound, bound - eps_direct};
}

void merge_direct(BoundReport& report, const BoundReport& direct) {
    for (auto& row : report.rows) {
        for (const auto& d : direct.rows) {
            if (d.delta == row.delta && d.has_direct) {
                row.eps_direct = d.eps_direct;
                row.has_direct = true;
                const auto [v, m] = comparison_verdict(d.eps_direct, row.lipschitz, row.eps, row.delta);
                row.verdict = v;
                row.margin = m;
            }
        }
    }
}

void write_bound_report_csv(const std::string& path, const BoundReport& report, double bound_scale) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "delta,L_P,eps_P,measured_recursive,geometric_bound,eps_direct,verdict,margin\n";
    for (const auto& r : report.rows) {
        os << r.delta << "," << format_double(r.lipschitz) << "," << format_double(r.eps) << ","
           << format_double(r.measured_recursive) << "," << format_double(r.bound * bound_scale)
           << "," << format_double(r.eps_direct) << "," << (r.verdict ? 1 : 0) << ","
           << format_double(r.margin) << "\n";
    }
}

}  // namespace dblf
