#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dblf {

class RngStream;

struct DArray;
using ArrayPtr = std::shared_ptr<DArray>;

// Dense row-major array of 64-bit floats. Shape is fixed at creation.
// The grad buffer is allocated lazily on the first backward pass that
// touches the array and always matches the data shape.
struct DArray {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    // 2D view used by most ops: rows = product of leading dims, cols = last dim.
    std::int64_t rows() const;
    std::int64_t cols() const;

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();

    double item() const;  // value of a 1-element array

    static ArrayPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static ArrayPtr full(std::vector<int> shape, double value, bool requires_grad = false);
    static ArrayPtr from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static ArrayPtr scalar(double value, bool requires_grad = false);
    static ArrayPtr randn(std::vector<int> shape, RngStream& rng, double stddev, bool requires_grad = false);
    static ArrayPtr rand_uniform(std::vector<int> shape, RngStream& rng, double lo, double hi,
                                 bool requires_grad = false);
};

std::int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
bool all_finite(const std::vector<double>& values);

// Explicit gradient reset; nothing in the library zeroes grads implicitly.
void zero_grads(const std::vector<ArrayPtr>& params);

}  // namespace dblf
