#pragma once

#include <cstdint>
#include <vector>

#include "dblf/array.hpp"

namespace dblf {

class RngStream;

enum class OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar,
    Relu,
    Tanh,
    Exp,
    Log,
    Clamp,
    Minimum,
    Softmax,
    LayerNorm,
    Concat,
    SliceCols,
    Sum,
    Mean,
    TileRows,
    Dropout,
    GaussianSample,
    CausalSelfAttention,
};

const char* op_name(OpKind kind);

struct OpAttrs {
    int axis = -1;               // Softmax (only the last axis is supported)
    double scalar = 0.0;         // AddScalar / MulScalar
    double lo = 0.0, hi = 0.0;   // Clamp
    int start = 0, len = 0;      // SliceCols
    double p = 0.0;              // Dropout probability / attention dropout
    bool train = false;          // Dropout / CausalSelfAttention
    int batch = 0, seq = 0, heads = 0;  // CausalSelfAttention
    double eps = 1e-5;           // LayerNorm
    RngStream* rng = nullptr;    // Dropout / GaussianSample / CausalSelfAttention
};

// Records primitive ops in execution order; one backward pass walks the
// records in reverse exactly once. An op is recorded only when at least one
// input requires grad; otherwise forward runs without recording.
class Tape {
public:
    ArrayPtr forward(OpKind kind, const std::vector<ArrayPtr>& inputs, const OpAttrs& attrs = {});

    // Fills grad buffers of every requires_grad leaf reachable from loss.
    // Repeated calls accumulate into leaf grads, but need retain = true on
    // the first call; a consumed tape throws.
    void backward(const ArrayPtr& loss, bool retain = false);

    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        OpKind kind;
        std::vector<ArrayPtr> inputs;
        ArrayPtr output;
        OpAttrs attrs;
        std::vector<double> saved;   // op-specific forward intermediates
        std::vector<double> saved2;  // secondary buffer (dropout masks etc.)
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// When enabled (default), every forward checks its output for NaN/Inf and
// throws; non-finite values are an error state, never silently propagated.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Wall-time accounting per op kind; off unless enabled.
void set_op_profile(bool enabled);
std::string op_profile_report();
void op_profile_reset();

// Worker cap from DBLF_THREADS (defaults to the hardware count).
int max_threads();

namespace ops {

ArrayPtr matmul(Tape& t, const ArrayPtr& a, const ArrayPtr& b);
ArrayPtr add(Tape& t, const ArrayPtr& a, const ArrayPtr& b);
ArrayPtr sub(Tape& t, const ArrayPtr& a, const ArrayPtr& b);
ArrayPtr mul(Tape& t, const ArrayPtr& a, const ArrayPtr& b);
ArrayPtr add_scalar(Tape& t, const ArrayPtr& a, double c);
ArrayPtr mul_scalar(Tape& t, const ArrayPtr& a, double c);
ArrayPtr relu(Tape& t, const ArrayPtr& a);
ArrayPtr tanh(Tape& t, const ArrayPtr& a);
ArrayPtr exp(Tape& t, const ArrayPtr& a);
ArrayPtr log(Tape& t, const ArrayPtr& a);
ArrayPtr clamp(Tape& t, const ArrayPtr& a, double lo, double hi);
ArrayPtr minimum(Tape& t, const ArrayPtr& a, const ArrayPtr& b);
ArrayPtr softmax(Tape& t, const ArrayPtr& a, int axis = -1);
ArrayPtr layer_norm(Tape& t, const ArrayPtr& x, const ArrayPtr& gain, const ArrayPtr& bias,
                    double eps = 1e-5);
ArrayPtr concat(Tape& t, const std::vector<ArrayPtr>& xs);
ArrayPtr slice_cols(Tape& t, const ArrayPtr& a, int start, int len);
ArrayPtr sum(Tape& t, const ArrayPtr& a);
ArrayPtr mean(Tape& t, const ArrayPtr& a);
ArrayPtr tile_rows(Tape& t, const ArrayPtr& a, int reps);
ArrayPtr dropout(Tape& t, const ArrayPtr& a, double p, bool train, RngStream* rng);
ArrayPtr gaussian_sample(Tape& t, const ArrayPtr& mean, const ArrayPtr& log_std, RngStream* rng);
ArrayPtr causal_self_attention(Tape& t, const ArrayPtr& qkv, int batch, int seq, int heads,
                               double attn_dropout, bool train, RngStream* rng);

}  // namespace ops

}  // namespace dblf
