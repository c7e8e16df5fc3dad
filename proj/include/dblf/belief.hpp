#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dblf/dfbt.hpp"
#include "dblf/recursive.hpp"

namespace dblf {

// A trained forecaster of the hidden states behind a delayed observation.
// predict() returns the horizons 1..effective_delay; the oracle variant
// reads the privileged true states instead and is exact on deterministic
// environments.
class Belief {
public:
    virtual ~Belief() = default;
    virtual std::string kind() const = 0;
    // true_future: privileged states s_{anchor+1 .. anchor+eff}; empty for
    // learned beliefs, required by the oracle.
    virtual std::vector<Vec> predict(const TokenSequence& tokens,
                                     std::span<const Vec> true_future) const = 0;
};

class DFBTBelief : public Belief {
public:
    explicit DFBTBelief(DFBTModel model) : model_(std::move(model)) {}
    std::string kind() const override { return "dfbt"; }
    std::vector<Vec> predict(const TokenSequence& tokens,
                             std::span<const Vec> true_future) const override;
    // One forward for a whole batch of sequences; [b][horizon] layout.
    std::vector<std::vector<Vec>> predict_batch(const std::vector<TokenSequence>& tokens) const;
    const DFBTModel& model() const { return model_; }

private:
    DFBTModel model_;
};

class RecursiveBelief : public Belief {
public:
    explicit RecursiveBelief(RecursiveModel model) : model_(std::move(model)) {}
    std::string kind() const override { return "recursive"; }
    std::vector<Vec> predict(const TokenSequence& tokens,
                             std::span<const Vec> true_future) const override;
    const RecursiveModel& model() const { return model_; }

private:
    RecursiveModel model_;
};

class OracleBelief : public Belief {
public:
    std::string kind() const override { return "oracle"; }
    std::vector<Vec> predict(const TokenSequence& tokens,
                             std::span<const Vec> true_future) const override;
};

std::shared_ptr<Belief> load_belief(const std::string& kind, const std::string& checkpoint_path);

// Mean/std of the L1 prediction error per horizon (1-indexed horizons map to
// curve index 0..delta-1).
struct BeliefErrorCurve {
    std::vector<double> mean_l1;
    std::vector<double> std_l1;
    std::vector<long> n;
};

// predicted/true_states: [sample][horizon]; mask[sample][horizon] in {0,1}.
BeliefErrorCurve belief_error(const std::vector<std::vector<Vec>>& predicted,
                              const std::vector<std::vector<Vec>>& true_states,
                              const std::vector<std::vector<double>>& mask);

// Evaluates a belief on windows at constant delay drawn from the dataset.
BeliefErrorCurve eval_belief_error(const Belief& belief, const Dataset& holdout, int delta,
                                   int delta_max, long max_windows, std::uint64_t seed);

// CSV columns: horizon,method,mean_L1,std_L1,n
void write_belief_error_csv(const std::string& path,
                            const std::vector<std::pair<std::string, BeliefErrorCurve>>& curves);

}  // namespace dblf
