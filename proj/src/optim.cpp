#include "dblf/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dblf {

AdamW::AdamW(std::vector<ArrayPtr> params, OptConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr < 0 || cfg_.beta1 <= 0 || cfg_.beta1 >= 1 || cfg_.beta2 <= 0 || cfg_.beta2 >= 1 ||
        cfg_.eps <= 0 || cfg_.weight_decay < 0) {
        throw std::invalid_argument("AdamW: bad hyperparameters");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        DArray& p = *params_[pi];
        if (!p.has_grad()) throw std::runtime_error("AdamW::step: parameter has no grad");
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g)) throw std::runtime_error("AdamW::step: non-finite grad");
            if (cfg_.weight_decay != 0.0) p.data[i] -= cfg_.lr * cfg_.weight_decay * p.data[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamW::zero_grads() {
    for (const auto& p : params_) p->zero_grad();
}

}  // namespace dblf
