#include "dblf/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "dblf/tape.hpp"

namespace dblf {

double grad_check(const std::function<ArrayPtr(Tape&)>& loss_fn, const std::vector<ArrayPtr>& inputs,
                  double eps) {
    if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");

    Tape tape;
    ArrayPtr loss = loss_fn(tape);
    if (loss->size() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
    for (const auto& in : inputs) in->zero_grad();
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) {
        in->ensure_grad();
        analytic.push_back(in->grad);
    }

    double worst = 0.0;
    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        DArray& x = *inputs[pi];
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double orig = x.data[i];
            x.data[i] = orig + eps;
            Tape tp;
            const double lp = loss_fn(tp)->item();
            x.data[i] = orig - eps;
            Tape tm;
            const double lm = loss_fn(tm)->item();
            x.data[i] = orig;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = analytic[pi][i];
            if (!std::isfinite(fd) || !std::isfinite(an)) {
                throw std::runtime_error("grad_check: non-finite value encountered");
            }
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            worst = std::max(worst, std::fabs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace dblf
