#include "dblf/array.hpp"

#include <cmath>
#include <stdexcept>

#include "dblf/rng.hpp"

namespace dblf {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool all_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::int64_t DArray::rows() const {
    if (shape.empty()) return 1;
    std::int64_t r = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    return r;
}

std::int64_t DArray::cols() const {
    if (shape.empty()) return 1;
    return shape.back();
}

void DArray::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void DArray::zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0);
}

double DArray::item() const {
    if (size() != 1) throw std::invalid_argument("item() on array of shape " + shape_str(shape));
    return data[0];
}

ArrayPtr DArray::zeros(std::vector<int> shape, bool requires_grad) {
    auto a = std::make_shared<DArray>();
    a->data.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
    a->shape = std::move(shape);
    a->requires_grad = requires_grad;
    return a;
}

ArrayPtr DArray::full(std::vector<int> shape, double value, bool requires_grad) {
    auto a = zeros(std::move(shape), requires_grad);
    for (auto& v : a->data) v = value;
    return a;
}

ArrayPtr DArray::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("value count does not match shape " + shape_str(shape));
    }
    auto a = std::make_shared<DArray>();
    a->shape = std::move(shape);
    a->data = std::move(values);
    a->requires_grad = requires_grad;
    return a;
}

ArrayPtr DArray::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

ArrayPtr DArray::randn(std::vector<int> shape, RngStream& rng, double stddev, bool requires_grad) {
    auto a = zeros(std::move(shape), requires_grad);
    for (auto& v : a->data) v = stddev * rng.normal();
    return a;
}

ArrayPtr DArray::rand_uniform(std::vector<int> shape, RngStream& rng, double lo, double hi,
                              bool requires_grad) {
    auto a = zeros(std::move(shape), requires_grad);
    for (auto& v : a->data) v = rng.uniform_range(lo, hi);
    return a;
}

void zero_grads(const std::vector<ArrayPtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace dblf
