#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dblf/env.hpp"

namespace dblf {

using OneStepFn = std::function<Vec(const Vec& state, const Vec& action)>;

// Sum_{k=0}^{delta-1} L^k * eps, computed by summation so the L == 1 limit
// is exact and there is no cancellation.
double geometric_bound(double lipschitz, double eps, int delta);

// E_{delta ~ dist}[geometric_bound(L, eps, delta)] by exact enumeration over
// a finite distribution; weights must sum to 1 within 1e-12.
double stochastic_bound(double lipschitz, double eps,
                        const std::vector<std::pair<int, double>>& dist);

std::vector<std::pair<int, double>> uniform_delay_dist(int delta_max);

struct PairSampler {
    std::function<Vec(RngStream&)> state;
    std::function<Vec(RngStream&)> action;  // may return an empty vector
};

// Max over sampled pairs of |f(x1,a1) - f(x2,a2)| / (|x1-x2| + |x2-a2|),
// L2 norms; a lower bound on the true constant. Coincident pairs are skipped.
double empirical_lipschitz(const OneStepFn& f, const PairSampler& sampler, long n_pairs,
                           std::uint64_t seed);

// Exact empirical 1D Wasserstein-1: sorted mean absolute difference for
// equal sizes, merged quantile grid otherwise.
double w1_empirical(std::vector<double> p, std::vector<double> q);

struct BoundRow {
    int delta = 0;
    double lipschitz = 0.0;
    double eps = 0.0;
    double measured_recursive = 0.0;
    double bound = 0.0;
    double eps_direct = 0.0;
    bool verdict = false;
    double margin = 0.0;
    bool has_recursive = false;
    bool has_direct = false;
};

// measured <= bound up to a 1e-9 slack so the tight witness, where equality
// holds mathematically, does not fail on the last ulp of the iteration.
bool bound_respected(double measured, double bound);

// Verifies the belief-error layer that the value-level guarantees reduce to:
// the geometric term bounds the recursive forecast error, and a direct
// forecaster beats that guarantee whenever its own error stays under the
// term. The downstream performance-difference quantities (value-function
// gaps scaled by the value Lipschitz constant) are not asserted here;
// certifying them would require estimating value functions and their
// Lipschitz constants, which is out of reach numerically.
struct BoundReport {
    std::string system;
    std::vector<BoundRow> rows;
    // True when every recursive row respects its bound.
    bool recursive_sound() const;
};

// A dynamics map with certified constants: |f(x1,a1)-f(x2,a2)| <=
// L*(|dx|+|da|) and |f_theta - f| <= eps everywhere sampled.
struct LipschitzSystem {
    std::string name;
    int state_dim = 0;
    int action_dim = 0;
    OneStepFn f;
    OneStepFn f_theta;
    double lipschitz = 0.0;
    double eps = 0.0;
    bool deterministic = true;
    PairSampler sampler;
};

LipschitzSystem expansive_1d();    // f = 1.2 x, f_theta = 1.2 x + 0.01; the bound is tight
LipschitzSystem contraction_1d();  // f = 0.5 x, same bias; errors plateau at eps/(1-L)
LipschitzSystem exact_1d();        // eps = 0 preset
LipschitzSystem make_system(const std::string& name);

enum class RolloutMode { recursive, direct_proxy };

using DirectForecaster =
    std::function<std::vector<Vec>(const Vec& anchor, const std::vector<Vec>& actions)>;

// recursive mode: iterates f_theta from true anchors against true rollouts
// and records the worst terminal error per delta, asserting it against the
// geometric bound. direct_proxy mode: records the max-over-horizons error of
// the supplied forecaster as eps_direct per delta and evaluates the
// comparison predicate. Only deterministic systems are supported.
BoundReport rollout_error_experiment(const LipschitzSystem& system, const std::vector<int>& deltas,
                                     RolloutMode mode, long n_rollouts, std::uint64_t seed,
                                     const DirectForecaster& forecaster = nullptr);

// verdict = (eps_direct <= geometric term), boundary counts as true;
// margin = geometric term - eps_direct.
std::pair<bool, double> comparison_verdict(double eps_direct, double lipschitz, double eps,
                                           int delta);

void merge_direct(BoundReport& report, const BoundReport& direct);

void write_bound_report_csv(const std::string& path, const BoundReport& report,
                            double bound_scale = 1.0);

}  // namespace dblf
