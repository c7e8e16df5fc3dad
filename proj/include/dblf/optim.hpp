#pragma once

#include <cstdint>
#include <vector>

#include "dblf/array.hpp"

namespace dblf {

struct OptConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; 0 gives plain Adam
};

// AdamW with decoupled weight decay applied before the Adam update term.
// One shared step counter; per-parameter moment buffers.
class AdamW {
public:
    AdamW(std::vector<ArrayPtr> params, OptConfig cfg);

    void step();        // throws on missing or non-finite grads
    void zero_grads();

    const OptConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }
    const std::vector<ArrayPtr>& params() const { return params_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<ArrayPtr> params_;
    OptConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace dblf
