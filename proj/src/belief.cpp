#include "dblf/belief.hpp"

#include "dblf/textio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dblf {

std::vector<Vec> DFBTBelief::predict(const TokenSequence& tokens, std::span<const Vec>) const {
    return predict_batch({tokens})[0];
}

std::vector<std::vector<Vec>> DFBTBelief::predict_batch(
    const std::vector<TokenSequence>& tokens) const {
    const DFBTConfig& c = model_.cfg;
    const int B = static_cast<int>(tokens.size());
    const int T = c.delta_max;
    const int w = c.token_width();
    auto in = DArray::zeros({B * T, w});
    for (int b = 0; b < B; ++b) {
        const TokenSequence& ts = tokens[static_cast<std::size_t>(b)];
        if (ts.delta_max != T || ts.width() != w) {
            throw std::invalid_argument("DFBTBelief: token layout does not match the model");
        }
        std::copy(ts.tokens.begin(), ts.tokens.end(),
                  in->data.begin() + static_cast<std::size_t>(b) * T * w);
    }
    Tape tape;  // nothing requires grad, so this records nothing
    DFBTOut out = dfbt_forward(tape, model_, in, B, false, nullptr);
    std::vector<std::vector<Vec>> preds(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const int eff = tokens[static_cast<std::size_t>(b)].effective_delay();
        auto& rows = preds[static_cast<std::size_t>(b)];
        rows.reserve(static_cast<std::size_t>(eff));
        for (int i = 0; i < eff; ++i) {
            const double* src =
                out.mean->data.data() + (static_cast<std::size_t>(b) * T + i) * c.state_dim;
            rows.emplace_back(src, src + c.state_dim);
        }
    }
    return preds;
}

std::vector<Vec> RecursiveBelief::predict(const TokenSequence& tokens, std::span<const Vec>) const {
    return recursive_forecast(model_, detokenize(tokens));
}

std::vector<Vec> OracleBelief::predict(const TokenSequence& tokens,
                                       std::span<const Vec> true_future) const {
    const int eff = tokens.effective_delay();
    if (static_cast<int>(true_future.size()) < eff) {
        throw std::invalid_argument("OracleBelief needs privileged states for every horizon");
    }
    return {true_future.begin(), true_future.begin() + eff};
}

std::shared_ptr<Belief> load_belief(const std::string& kind, const std::string& checkpoint_path) {
    if (kind == "oracle") return std::make_shared<OracleBelief>();
    if (kind == "dfbt") return std::make_shared<DFBTBelief>(load_dfbt(checkpoint_path));
    if (kind == "recursive") return std::make_shared<RecursiveBelief>(load_recursive(checkpoint_path));
    throw std::invalid_argument("unknown belief kind: " + kind);
}

BeliefErrorCurve belief_error(const std::vector<std::vector<Vec>>& predicted,
                              const std::vector<std::vector<Vec>>& true_states,
                              const std::vector<std::vector<double>>& mask) {
    if (predicted.empty()) throw std::invalid_argument("belief_error: empty evaluation set");
    std::size_t horizons = 0;
    for (const auto& row : mask) horizons = std::max(horizons, row.size());
    BeliefErrorCurve curve;
    curve.mean_l1.assign(horizons, 0.0);
    curve.std_l1.assign(horizons, 0.0);
    curve.n.assign(horizons, 0);
    std::vector<double> sum_sq(horizons, 0.0);
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        for (std::size_t h = 0; h < mask[s].size(); ++h) {
            if (mask[s][h] == 0.0) continue;
            const Vec& p = predicted[s][h];
            const Vec& t = true_states[s][h];
            if (p.size() != t.size()) throw std::invalid_argument("belief_error: shape mismatch");
            double l1 = 0.0;
            for (std::size_t d = 0; d < p.size(); ++d) l1 += std::fabs(p[d] - t[d]);
            curve.mean_l1[h] += l1;
            sum_sq[h] += l1 * l1;
            curve.n[h] += 1;
        }
    }
    for (std::size_t h = 0; h < horizons; ++h) {
        if (curve.n[h] == 0) continue;
        const double n = static_cast<double>(curve.n[h]);
        curve.mean_l1[h] /= n;
        const double var = std::max(0.0, sum_sq[h] / n - curve.mean_l1[h] * curve.mean_l1[h]);
        curve.std_l1[h] = std::sqrt(var);
    }
    return curve;
}

BeliefErrorCurve eval_belief_error(const Belief& belief, const Dataset& holdout, int delta,
                                   int delta_max, long max_windows, std::uint64_t seed) {
    std::vector<std::pair<int, long>> windows;
    for (std::size_t k = 0; k < holdout.trajectories.size(); ++k) {
        const Trajectory& traj = holdout.trajectories[k].traj;
        for (long t = delta; t < traj.length(); ++t) windows.emplace_back(static_cast<int>(k), t);
    }
    if (windows.empty()) throw std::invalid_argument("eval_belief_error: empty evaluation set");

    RngStream rng(seed, "belief_eval");
    std::vector<std::pair<int, long>> chosen;
    if (max_windows > 0 && static_cast<long>(windows.size()) > max_windows) {
        for (long i = 0; i < max_windows; ++i) {
            chosen.push_back(windows[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(windows.size()) - 1))]);
        }
    } else {
        chosen = windows;
    }

    // Batch the DFBT path; other beliefs predict one window at a time.
    const auto* dfbt = dynamic_cast<const DFBTBelief*>(&belief);
    std::vector<std::vector<Vec>> preds, trues;
    std::vector<std::vector<double>> masks;
    std::vector<TokenSequence> token_batch;
    token_batch.reserve(chosen.size());
    for (const auto& [ti, t] : chosen) {
        const Trajectory& traj = holdout.trajectories[static_cast<std::size_t>(ti)].traj;
        const ReplayWindow win = window_extract(traj, t, delta, delta, delta_max);
        std::vector<Vec> future(win.states.begin() + 1, win.states.end());
        if (!dfbt) preds.push_back(belief.predict(*win.tokens, future));
        else token_batch.push_back(*win.tokens);
        trues.push_back(std::move(future));
        masks.emplace_back(static_cast<std::size_t>(delta), 1.0);
    }
    if (dfbt) {
        const long B = static_cast<long>(token_batch.size());
        const long chunk = 512;
        for (long off = 0; off < B; off += chunk) {
            const long n = std::min(chunk, B - off);
            std::vector<TokenSequence> part(token_batch.begin() + off, token_batch.begin() + off + n);
            auto out = dfbt->predict_batch(part);
            for (auto& row : out) preds.push_back(std::move(row));
        }
    }
    return belief_error(preds, trues, masks);
}

void write_belief_error_csv(const std::string& path,
                            const std::vector<std::pair<std::string, BeliefErrorCurve>>& curves) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "horizon,method,mean_L1,std_L1,n\n";
    for (const auto& [method, curve] : curves) {
        for (std::size_t h = 0; h < curve.mean_l1.size(); ++h) {
            os << h + 1 << "," << method << "," << format_double(curve.mean_l1[h]) << ","
               << format_double(curve.std_l1[h]) << "," << curve.n[h] << "\n";
        }
    }
}

}  // namespace dblf
