#pragma once

#include <string>
#include <vector>

#include "dblf/env.hpp"

namespace dblf {

struct PolicyMixEntry {
    std::string label;   // random / medium / expert / ...
    double weight = 0.0;
    Policy policy;
};

struct LabeledTrajectory {
    std::string label;
    Trajectory traj;
};

struct Dataset {
    std::string env_id;
    EnvSpec spec;
    std::vector<LabeledTrajectory> trajectories;

    long n_transitions() const;
    // Deterministic split by trajectory index; holdout_frac of trajectories
    // (at least one when possible) go to the second part.
    std::pair<Dataset, Dataset> split_holdout(double holdout_frac) const;
};

// Draws a policy label per episode from the mix weights, rolls out full
// episodes and cuts the last one so exactly n_transitions records are kept
// (the cut record is marked truncated).
Dataset collect_dataset(const Env& env, const std::vector<PolicyMixEntry>& mix, long n_transitions,
                        std::uint64_t seed);

// Binary container: magic "DBTJ", version, env id, spec snapshot, then
// per-trajectory seed, policy label and packed little-endian records.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Human-readable JSON-lines mirror; not the canonical format.
void export_jsonl(const std::string& path, const Dataset& ds);

}  // namespace dblf
