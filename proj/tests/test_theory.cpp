#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dblf/theory.hpp"

using namespace dblf;

TEST_CASE("geometric bound basics") {
    CHECK(geometric_bound(1.0, 0.3, 5) == doctest::Approx(5 * 0.3).epsilon(1e-15));  // L = 1 exact
    CHECK(geometric_bound(3.7, 0.25, 1) == 0.25);
    CHECK(geometric_bound(0.0, 0.25, 1) == 0.25);
    // 0.1 * (1 + 0.5 + 0.25), checked against an explicit loop
    double by_loop = 0.0;
    for (int k = 0; k < 3; ++k) by_loop += 0.1 * std::pow(0.5, k);
    CHECK(geometric_bound(0.5, 0.1, 3) == doctest::Approx(0.175).epsilon(1e-15));
    CHECK(geometric_bound(0.5, 0.1, 3) == doctest::Approx(by_loop).epsilon(1e-15));
    CHECK_THROWS_AS(geometric_bound(0.5, 0.1, 0), std::invalid_argument);
    CHECK_THROWS_AS(geometric_bound(-0.5, 0.1, 1), std::invalid_argument);
}

TEST_CASE("geometric bound is nondecreasing in L, eps and delta") {
    RngStream rng(5, "mono");
    for (int i = 0; i < 200; ++i) {
        const double L = rng.uniform_range(0.0, 1.5);
        const double eps = rng.uniform_range(0.0, 1.0);
        const int delta = static_cast<int>(rng.uniform_int(1, 30));
        const double base = geometric_bound(L, eps, delta);
        CHECK(geometric_bound(L + 0.1, eps, delta) >= base);
        CHECK(geometric_bound(L, eps + 0.1, delta) >= base);
        CHECK(geometric_bound(L, eps, delta + 1) >= base);
    }
}

TEST_CASE("stochastic bound: point mass and L=0 collapse") {
    CHECK(stochastic_bound(0.9, 0.05, {{6, 1.0}}) == geometric_bound(0.9, 0.05, 6));
    CHECK(stochastic_bound(0.0, 0.2, {{1, 0.5}, {2, 0.5}}) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS_AS(stochastic_bound(0.9, 0.05, {{1, 0.6}, {2, 0.6}}), std::invalid_argument);
    CHECK_THROWS_AS(stochastic_bound(0.9, 0.05, {}), std::invalid_argument);
}

TEST_CASE("stochastic bound over U(1,8) matches a Monte-Carlo estimate") {
    const double L = 0.9, eps = 0.05;
    const double exact = stochastic_bound(L, eps, uniform_delay_dist(8));
    RngStream rng(11, "mc");
    const long n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < n; ++i) {
        const int d = static_cast<int>(rng.uniform_int(1, 8));
        const double v = geometric_bound(L, eps, d);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    CHECK(std::fabs(mean - exact) < 3.0 * se);
}

TEST_CASE("empirical lipschitz estimates") {
    PairSampler sampler;
    sampler.state = [](RngStream& rng) { return Vec{rng.uniform_range(-2, 2)}; };
    sampler.action = nullptr;

    const OneStepFn identity = [](const Vec& x, const Vec&) { return x; };
    CHECK(empirical_lipschitz(identity, sampler, 100, 0) == doctest::Approx(1.0).epsilon(1e-12));

    const OneStepFn half = [](const Vec& x, const Vec&) { return Vec{0.5 * x[0]}; };
    CHECK(empirical_lipschitz(half, sampler, 100, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("empirical lipschitz of the linear env recovers the spectral norm within 1%") {
    EnvOptions opts;
    auto env = make_env("mass_spring_damper", opts);
    const auto* msd = dynamic_cast<const MassSpringDamperEnv*>(env.get());
    REQUIRE(msd != nullptr);
    const auto A = msd->transition_matrix();

    // power-iteration oracle on A^T A
    double vx = 1.0, vy = 0.3;
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it) {
        const double ax = A[0] * vx + A[1] * vy;
        const double ay = A[2] * vx + A[3] * vy;
        const double tx = A[0] * ax + A[2] * ay;
        const double ty = A[1] * ax + A[3] * ay;
        lambda = std::sqrt(tx * tx + ty * ty);
        vx = tx / lambda;
        vy = ty / lambda;
    }
    const double sigma_oracle = std::sqrt(lambda);
    CHECK(msd->lipschitz() == doctest::Approx(sigma_oracle).epsilon(1e-9));

    PairSampler sampler;
    sampler.state = [](RngStream& rng) {
        return Vec{rng.uniform_range(-2, 2), rng.uniform_range(-2, 2)};
    };
    sampler.action = nullptr;  // zero action channel
    const OneStepFn f = [&A](const Vec& x, const Vec&) {
        return Vec{A[0] * x[0] + A[1] * x[1], A[2] * x[0] + A[3] * x[1]};
    };
    const double est = empirical_lipschitz(f, sampler, 10000, 3);
    CHECK(est <= msd->lipschitz() + 1e-12);  // a lower bound
    CHECK(est > 0.99 * msd->lipschitz());
}

TEST_CASE("w1 on equal-size samples") {
    CHECK(w1_empirical({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(w1_empirical({0, 1, 5}, {2, 3, 7}) == doctest::Approx(2.0).epsilon(1e-15));  // shift by 2
    CHECK(w1_empirical({0, 1}, {0, 3}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(w1_empirical({}, {1.0}), std::invalid_argument);
}

TEST_CASE("w1 merged-grid path agrees with the equal-size path") {
    RngStream rng(13, "w1");
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p, q;
        const int n = static_cast<int>(rng.uniform_int(2, 20));
        for (int i = 0; i < n; ++i) p.push_back(rng.uniform_range(-3, 3));
        for (int i = 0; i < n; ++i) q.push_back(rng.uniform_range(-3, 3));
        // duplicating every sample leaves the empirical distribution unchanged
        std::vector<double> q2;
        for (double v : q) {
            q2.push_back(v);
            q2.push_back(v);
        }
        CHECK(w1_empirical(p, q) == doctest::Approx(w1_empirical(p, q2)).epsilon(1e-12));
    }
}

TEST_CASE("w1 is a metric on empirical distributions") {
    RngStream rng(17, "w1metric");
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> p, q, r;
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        for (int i = 0; i < n; ++i) {
            p.push_back(rng.uniform_range(-2, 2));
            q.push_back(rng.uniform_range(-2, 2));
            r.push_back(rng.uniform_range(-2, 2));
        }
        const double pq = w1_empirical(p, q);
        const double qp = w1_empirical(q, p);
        CHECK(pq == qp);  // symmetry, exact
        CHECK(pq >= 0.0);
        CHECK(w1_empirical(p, r) <= pq + w1_empirical(q, r) + 1e-12);  // triangle
    }
}

TEST_CASE("exact model gives zero recursive error everywhere") {
    const BoundReport report =
        rollout_error_experiment(exact_1d(), {1, 2, 4, 8, 16}, RolloutMode::recursive, 64, 0);
    for (const auto& row : report.rows) {
        CHECK(row.measured_recursive == 0.0);
        CHECK(row.bound == 0.0);
    }
    CHECK(report.recursive_sound());
}

TEST_CASE("expansive 1d: the bound is tight to 1e-9 for delta 1..20") {
    std::vector<int> deltas;
    for (int d = 1; d <= 20; ++d) deltas.push_back(d);
    const BoundReport report =
        rollout_error_experiment(expansive_1d(), deltas, RolloutMode::recursive, 32, 1);
    REQUIRE(report.rows.size() == 20);
    for (const auto& row : report.rows) {
        const double closed_form = 0.01 * (std::pow(1.2, row.delta) - 1.0) / 0.2;
        CHECK(std::fabs(row.measured_recursive - closed_form) < 1e-9);
        CHECK(std::fabs(row.bound - closed_form) < 1e-9);
        CHECK(row.measured_recursive <= row.bound + 1e-12);
    }
    CHECK(report.recursive_sound());
}

TEST_CASE("contraction 1d: errors plateau below eps/(1-L) out to delta 128") {
    const BoundReport report =
        rollout_error_experiment(contraction_1d(), {1, 2, 4, 8, 32, 128}, RolloutMode::recursive, 32, 2);
    for (const auto& row : report.rows) {
        CHECK(row.measured_recursive <= 0.02 + 1e-12);  // eps/(1-L) = 0.01/0.5
        CHECK(row.measured_recursive <= row.bound + 1e-12);
    }
    CHECK(report.recursive_sound());
}

TEST_CASE("recursive error grows strictly in the expansive system") {
    std::vector<int> deltas = {1, 2, 3, 4, 5, 6, 7, 8};
    const BoundReport report =
        rollout_error_experiment(expansive_1d(), deltas, RolloutMode::recursive, 16, 3);
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        CHECK(report.rows[i].measured_recursive > report.rows[i - 1].measured_recursive);
    }
}

TEST_CASE("direct-proxy mode evaluates the comparison predicate") {
    const LipschitzSystem sys = expansive_1d();
    // a forecaster with a constant per-horizon error of 0.005
    const DirectForecaster fc = [&sys](const Vec& anchor, const std::vector<Vec>& actions) {
        std::vector<Vec> out;
        Vec x = anchor;
        for (const auto& a : actions) {
            x = sys.f(x, a);
            out.push_back(Vec{x[0] + 0.005});
        }
        return out;
    };
    const BoundReport report =
        rollout_error_experiment(sys, {1, 4, 8}, RolloutMode::direct_proxy, 16, 4, fc);
    for (const auto& row : report.rows) {
        CHECK(row.has_direct);
        CHECK(row.eps_direct == doctest::Approx(0.005).epsilon(1e-9));
        CHECK(row.verdict);  // 0.005 <= bound for every delta (bound(1) = 0.01)
        CHECK(row.margin == doctest::Approx(row.bound - row.eps_direct).epsilon(1e-12));
    }
}

TEST_CASE("comparison verdict boundary conventions") {
    {
        const auto [v, margin] = comparison_verdict(0.0, 1.2, 0.01, 5);
        CHECK(v);
        CHECK(margin == geometric_bound(1.2, 0.01, 5));
    }
    {
        const double bound = geometric_bound(1.2, 0.01, 5);
        const auto [v, margin] = comparison_verdict(bound, 1.2, 0.01, 5);
        CHECK(v);  // boundary counts as true
        CHECK(margin == 0.0);
    }
    {
        const auto [v, margin] = comparison_verdict(1.0, 0.5, 0.01, 5);
        CHECK(!v);
        CHECK(margin < 0.0);
    }
}

TEST_CASE("stochastic systems are rejected") {
    LipschitzSystem sys = expansive_1d();
    sys.deterministic = false;
    CHECK_THROWS_AS(rollout_error_experiment(sys, {1}, RolloutMode::recursive, 4, 0),
                    std::invalid_argument);
}
