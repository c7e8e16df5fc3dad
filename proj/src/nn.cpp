#include "dblf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dblf {

Linear make_linear(int in, int out, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.w = DArray::rand_uniform({in, out}, rng, -bound, bound, true);
    l.b = DArray::rand_uniform({out}, rng, -bound, bound, true);
    return l;
}

ArrayPtr linear(Tape& t, const Linear& l, const ArrayPtr& x) {
    return ops::add(t, ops::matmul(t, x, l.w), l.b);
}

void collect_params(const Linear& l, const std::string& prefix, NamedArrays& out) {
    out.emplace_back(prefix + ".w", l.w);
    out.emplace_back(prefix + ".b", l.b);
}

void load_params(Linear& l, const std::string& prefix, const NamedArrays& entries) {
    auto w = checkpoint_get(entries, prefix + ".w");
    auto b = checkpoint_get(entries, prefix + ".b");
    if (w->shape != l.w->shape || b->shape != l.b->shape) {
        throw std::runtime_error("checkpoint shape mismatch for " + prefix);
    }
    l.w->data = w->data;
    l.b->data = b->data;
}

std::vector<ArrayPtr> params_of(const NamedArrays& named) {
    std::vector<ArrayPtr> out;
    out.reserve(named.size());
    for (const auto& [n, a] : named) out.push_back(a);
    return out;
}

}  // namespace dblf
