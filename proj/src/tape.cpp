#include "dblf/tape.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dblf/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dblf {

namespace {

// Op outputs are megabyte-scale, short-lived buffers; keep them on the heap
// free lists instead of per-allocation mmap/munmap round trips.
struct MallocTuning {
    MallocTuning() {
#ifdef __GLIBC__
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
    }
};
const MallocTuning g_malloc_tuning{};

std::atomic<bool> g_finite_checks{true};
std::atomic<bool> g_op_profile{false};
double g_op_ms[64] = {};
long g_op_calls[64] = {};

int detect_threads() {
    int n = 1;
#ifdef _OPENMP
    n = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("DBLF_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::max(1, n);
}

// Broadcast patterns for binary elementwise ops, classifying operand b
// against a with shape [m, n].
enum class Bcast { Same, Scalar, Row, Col };

Bcast classify(const DArray& a, const DArray& b, OpKind kind) {
    if (a.size() == b.size() && a.cols() == b.cols()) return Bcast::Same;
    if (b.size() == 1) return Bcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
    throw std::invalid_argument(std::string(op_name(kind)) + ": incompatible shapes " +
                                shape_str(a.shape) + " and " + shape_str(b.shape));
}

inline double bval(const DArray& b, Bcast bc, std::int64_t i, std::int64_t j, std::int64_t n) {
    switch (bc) {
        case Bcast::Same: return b.data[static_cast<std::size_t>(i * n + j)];
        case Bcast::Scalar: return b.data[0];
        case Bcast::Row: return b.data[static_cast<std::size_t>(j)];
        case Bcast::Col: return b.data[static_cast<std::size_t>(i)];
    }
    return 0.0;
}

inline void baccum(DArray& b, Bcast bc, std::int64_t i, std::int64_t j, std::int64_t n, double g) {
    switch (bc) {
        case Bcast::Same: b.grad[static_cast<std::size_t>(i * n + j)] += g; break;
        case Bcast::Scalar: b.grad[0] += g; break;
        case Bcast::Row: b.grad[static_cast<std::size_t>(j)] += g; break;
        case Bcast::Col: b.grad[static_cast<std::size_t>(i)] += g; break;
    }
}

void require(bool cond, OpKind kind, const char* what) {
    if (!cond) throw std::invalid_argument(std::string(op_name(kind)) + ": " + what);
}

// C += or = A[m,k] * B[k,n]
void matmul_fwd(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                std::int64_t n, int threads) {
#pragma omp parallel for schedule(static) num_threads(threads) if (m * k * n > 65536 && threads > 1)
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = A + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double a = arow[p];
            const double* brow = B + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T. B is transposed into a scratch first so the
// inner loop is a streaming accumulate (dot-product reductions do not
// vectorize without reassociation).
void matmul_bwd_a(const double* dC, const double* B, double* dA, std::int64_t m, std::int64_t k,
                  std::int64_t n, int threads) {
    std::vector<double> bt(static_cast<std::size_t>(n * k));
    for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t j = 0; j < n; ++j) bt[static_cast<std::size_t>(j * k + p)] = B[p * n + j];
    }
    const double* Bt = bt.data();
#pragma omp parallel for schedule(static) num_threads(threads) if (m * k * n > 65536 && threads > 1)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* grow = dC + i * n;
        double* darow = dA + i * k;
        for (std::int64_t j = 0; j < n; ++j) {
            const double g = grow[j];
            if (g == 0.0) continue;
            const double* btrow = Bt + j * k;
            for (std::int64_t p = 0; p < k; ++p) darow[p] += g * btrow[p];
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]. Outer loop over rows of A so A and dC are
// each streamed once while the dB accumulator stays cache-resident; threads
// own disjoint column blocks.
void matmul_bwd_b(const double* A, const double* dC, double* dB, std::int64_t m, std::int64_t k,
                  std::int64_t n, int threads) {
    const int nblocks = (m * k * n > 65536 && threads > 1) ? threads : 1;
#pragma omp parallel for schedule(static) num_threads(threads) if (nblocks > 1)
    for (int blk = 0; blk < nblocks; ++blk) {
        const std::int64_t j0 = n * blk / nblocks;
        const std::int64_t j1 = n * (blk + 1) / nblocks;
        for (std::int64_t i = 0; i < m; ++i) {
            const double* arow = A + i * k;
            const double* grow = dC + i * n;
            for (std::int64_t p = 0; p < k; ++p) {
                const double a = arow[p];
                if (a == 0.0) continue;
                double* dbrow = dB + p * n;
                for (std::int64_t j = j0; j < j1; ++j) dbrow[j] += a * grow[j];
            }
        }
    }
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::MulScalar: return "mul_scalar";
        case OpKind::Relu: return "relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Clamp: return "clamp";
        case OpKind::Minimum: return "minimum";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Concat: return "concat";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::TileRows: return "tile_rows";
        case OpKind::Dropout: return "dropout";
        case OpKind::GaussianSample: return "gaussian_sample";
        case OpKind::CausalSelfAttention: return "causal_self_attention";
    }
    return "?";
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

void set_op_profile(bool enabled) { g_op_profile.store(enabled); }

void op_profile_reset() {
    for (auto& v : g_op_ms) v = 0.0;
    for (auto& v : g_op_calls) v = 0;
}

std::string op_profile_report() {
    std::string out;
    char buf[128];
    for (int k = 0; k < 64; ++k) {
        if (g_op_calls[k] == 0) continue;
        std::snprintf(buf, sizeof(buf), "%s%-24s %10.2f ms %8ld calls\n", k >= 32 ? "bwd " : "",
                      op_name(static_cast<OpKind>(k % 32)), g_op_ms[k], g_op_calls[k]);
        out += buf;
    }
    return out;
}

int max_threads() {
    static const int n = detect_threads();
    return n;
}

ArrayPtr Tape::forward(OpKind kind, const std::vector<ArrayPtr>& inputs, const OpAttrs& attrs) {
    const bool prof = g_op_profile.load(std::memory_order_relaxed);
    const auto prof_start = prof ? std::chrono::steady_clock::now() : std::chrono::steady_clock::time_point{};
    require(!inputs.empty(), kind, "no inputs");
    for (const auto& in : inputs) require(in != nullptr, kind, "null input");

    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;

    const int threads = max_threads();
    ArrayPtr out;
    std::vector<double> saved, saved2;

    switch (kind) {
        case OpKind::MatMul: {
            require(inputs.size() == 2, kind, "expects 2 inputs");
            const DArray& a = *inputs[0];
            const DArray& b = *inputs[1];
            const std::int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
            if (k != k2) {
                throw std::invalid_argument(std::string("matmul: inner dims differ, ") +
                                            shape_str(a.shape) + " x " + shape_str(b.shape));
            }
            out = DArray::zeros({static_cast<int>(m), static_cast<int>(n)});
            matmul_fwd(a.data.data(), b.data.data(), out->data.data(), m, k, n, threads);
            break;
        }
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul: {
            require(inputs.size() == 2, kind, "expects 2 inputs");
            const DArray& a = *inputs[0];
            const DArray& b = *inputs[1];
            const Bcast bc = classify(a, b, kind);
            const std::int64_t m = a.rows(), n = a.cols();
            out = DArray::zeros(a.shape);
            const double* pa = a.data.data();
            const double* pb = b.data.data();
            double* po = out->data.data();
            // one tight loop per broadcast pattern so they vectorize
            auto apply = [&](auto&& bget) {
                if (kind == OpKind::Add) {
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] + bget(i, j);
                } else if (kind == OpKind::Sub) {
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] - bget(i, j);
                } else {
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] * bget(i, j);
                }
            };
            switch (bc) {
                case Bcast::Same: apply([&](std::int64_t i, std::int64_t j) { return pb[i * n + j]; }); break;
                case Bcast::Scalar: apply([&](std::int64_t, std::int64_t) { return pb[0]; }); break;
                case Bcast::Row: apply([&](std::int64_t, std::int64_t j) { return pb[j]; }); break;
                case Bcast::Col: apply([&](std::int64_t i, std::int64_t) { return pb[i]; }); break;
            }
            break;
        }
        case OpKind::AddScalar:
        case OpKind::MulScalar: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            const double c = attrs.scalar;
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                out->data[i] = (kind == OpKind::AddScalar) ? a.data[i] + c : a.data[i] * c;
            }
            break;
        }
        case OpKind::Relu: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) out->data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
            break;
        }
        case OpKind::Tanh: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) out->data[i] = std::tanh(a.data[i]);
            break;
        }
        case OpKind::Exp: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) out->data[i] = std::exp(a.data[i]);
            break;
        }
        case OpKind::Log: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                if (a.data[i] <= 0.0) throw std::domain_error("log: nonpositive input");
                out->data[i] = std::log(a.data[i]);
            }
            break;
        }
        case OpKind::Clamp: {
            require(inputs.size() == 1, kind, "expects 1 input");
            require(attrs.lo <= attrs.hi, kind, "lo > hi");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                out->data[i] = std::min(std::max(a.data[i], attrs.lo), attrs.hi);
            }
            break;
        }
        case OpKind::Minimum: {
            require(inputs.size() == 2, kind, "expects 2 inputs");
            const DArray& a = *inputs[0];
            const DArray& b = *inputs[1];
            require(a.size() == b.size(), kind, "shape mismatch");
            out = DArray::zeros(a.shape);
            for (std::size_t i = 0; i < a.data.size(); ++i) out->data[i] = std::min(a.data[i], b.data[i]);
            break;
        }
        case OpKind::Softmax: {
            require(inputs.size() == 1, kind, "expects 1 input");
            require(attrs.axis == -1 || attrs.axis == inputs[0]->ndim() - 1, kind,
                    "only the last axis is supported");
            const DArray& a = *inputs[0];
            const std::int64_t m = a.rows(), n = a.cols();
            out = DArray::zeros(a.shape);
            for (std::int64_t i = 0; i < m; ++i) {
                const double* row = a.data.data() + i * n;
                double* orow = out->data.data() + i * n;
                double mx = row[0];
                for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
                double z = 0.0;
                for (std::int64_t j = 0; j < n; ++j) {
                    orow[j] = std::exp(row[j] - mx);
                    z += orow[j];
                }
                for (std::int64_t j = 0; j < n; ++j) orow[j] /= z;
            }
            break;
        }
        case OpKind::LayerNorm: {
            require(inputs.size() == 3, kind, "expects (x, gain, bias)");
            const DArray& x = *inputs[0];
            const DArray& g = *inputs[1];
            const DArray& b = *inputs[2];
            const std::int64_t m = x.rows(), n = x.cols();
            require(g.size() == n && b.size() == n, kind, "gain/bias must match the last dim");
            out = DArray::zeros(x.shape);
            saved.resize(static_cast<std::size_t>(2 * m));  // per-row mean, inv_std
            for (std::int64_t i = 0; i < m; ++i) {
                const double* row = x.data.data() + i * n;
                double mu = 0.0;
                for (std::int64_t j = 0; j < n; ++j) mu += row[j];
                mu /= static_cast<double>(n);
                double var = 0.0;
                for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + attrs.eps);
                saved[static_cast<std::size_t>(2 * i)] = mu;
                saved[static_cast<std::size_t>(2 * i + 1)] = inv;
                double* orow = out->data.data() + i * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    orow[j] = (row[j] - mu) * inv * g.data[static_cast<std::size_t>(j)] +
                              b.data[static_cast<std::size_t>(j)];
                }
            }
            break;
        }
        case OpKind::Concat: {
            require(inputs.size() >= 2, kind, "expects at least 2 inputs");
            const std::int64_t m = inputs[0]->rows();
            std::int64_t total = 0;
            for (const auto& in : inputs) {
                require(in->rows() == m, kind, "row counts differ");
                total += in->cols();
            }
            out = DArray::zeros({static_cast<int>(m), static_cast<int>(total)});
            std::int64_t off = 0;
            for (const auto& in : inputs) {
                const std::int64_t n = in->cols();
                for (std::int64_t i = 0; i < m; ++i) {
                    std::copy_n(in->data.data() + i * n, n, out->data.data() + i * total + off);
                }
                off += n;
            }
            break;
        }
        case OpKind::SliceCols: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            const std::int64_t m = a.rows(), n = a.cols();
            require(attrs.start >= 0 && attrs.len > 0 && attrs.start + attrs.len <= n, kind,
                    "slice out of range");
            out = DArray::zeros({static_cast<int>(m), attrs.len});
            for (std::int64_t i = 0; i < m; ++i) {
                std::copy_n(a.data.data() + i * n + attrs.start, attrs.len,
                            out->data.data() + i * attrs.len);
            }
            break;
        }
        case OpKind::Sum:
        case OpKind::Mean: {
            require(inputs.size() == 1, kind, "expects 1 input");
            const DArray& a = *inputs[0];
            double acc = 0.0;
            for (double v : a.data) acc += v;
            if (kind == OpKind::Mean) acc /= static_cast<double>(a.size());
            out = DArray::scalar(acc);
            break;
        }
        case OpKind::TileRows: {
            require(inputs.size() == 1, kind, "expects 1 input");
            require(attrs.len > 0, kind, "reps must be positive");
            const DArray& a = *inputs[0];
            const std::int64_t m = a.rows(), n = a.cols();
            const int reps = attrs.len;
            out = DArray::zeros({static_cast<int>(m * reps), static_cast<int>(n)});
            for (int r = 0; r < reps; ++r) {
                std::copy_n(a.data.data(), m * n, out->data.data() + static_cast<std::int64_t>(r) * m * n);
            }
            break;
        }
        case OpKind::Dropout: {
            require(inputs.size() == 1, kind, "expects 1 input");
            require(attrs.p >= 0.0 && attrs.p < 1.0, kind, "p must be in [0, 1)");
            if (!(attrs.train && attrs.p > 0.0)) {
                return inputs[0];  // eval mode is the identity; no node needed
            }
            require(attrs.rng != nullptr, kind, "train-mode dropout needs an rng stream");
            const DArray& a = *inputs[0];
            out = DArray::zeros(a.shape);
            const double keep = 1.0 - attrs.p;
            saved.resize(a.data.size());
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                const double m = attrs.rng->uniform() >= attrs.p ? 1.0 : 0.0;
                saved[i] = m;
                out->data[i] = a.data[i] * m / keep;
            }
            break;
        }
        case OpKind::GaussianSample: {
            require(inputs.size() == 2, kind, "expects (mean, log_std)");
            require(attrs.rng != nullptr, kind, "needs an rng stream");
            const DArray& mu = *inputs[0];
            const DArray& ls = *inputs[1];
            require(mu.size() == ls.size(), kind, "mean/log_std shape mismatch");
            out = DArray::zeros(mu.shape);
            for (std::size_t i = 0; i < mu.data.size(); ++i) {
                out->data[i] = mu.data[i] + std::exp(ls.data[i]) * attrs.rng->normal();
            }
            break;
        }
        case OpKind::CausalSelfAttention: {
            require(inputs.size() == 1, kind, "expects fused qkv");
            const DArray& qkv = *inputs[0];
            const int B = attrs.batch, T = attrs.seq, nh = attrs.heads;
            require(B > 0 && T > 0 && nh > 0, kind, "batch/seq/heads must be positive");
            require(qkv.rows() == static_cast<std::int64_t>(B) * T, kind, "rows != batch*seq");
            require(qkv.cols() % 3 == 0, kind, "cols must be 3*hidden");
            const std::int64_t H = qkv.cols() / 3;
            require(H % nh == 0, kind, "hidden not divisible by heads");
            const std::int64_t dh = H / nh;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            const bool drop = attrs.train && attrs.p > 0.0;
            if (drop) require(attrs.rng != nullptr, kind, "train-mode attention dropout needs an rng stream");

            out = DArray::zeros({static_cast<int>(B) * T, static_cast<int>(H)});
            const std::size_t ptotal = static_cast<std::size_t>(B) * nh * T * T;
            if (needs_grad) saved.assign(ptotal, 0.0);
            if (drop) {
                // Masks are drawn serially, lower triangle only, in a fixed
                // order so the parallel compute below stays deterministic.
                saved2.assign(ptotal, 0.0);
                const double pd = attrs.p;
                for (std::size_t bh = 0; bh < static_cast<std::size_t>(B) * nh; ++bh) {
                    double* mrow = saved2.data() + bh * T * T;
                    for (std::int64_t i = 0; i < T; ++i) {
                        for (std::int64_t j = 0; j <= i; ++j) {
                            mrow[i * T + j] = attrs.rng->uniform() >= pd ? 1.0 : 0.0;
                        }
                    }
                }
            }
            const double keep = 1.0 - attrs.p;
            const std::int64_t W = qkv.cols();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && B * nh > 1)
            for (std::int64_t bh = 0; bh < static_cast<std::int64_t>(B) * nh; ++bh) {
                const std::int64_t b = bh / nh;
                const std::int64_t h = bh % nh;
                const double* base = qkv.data.data() + b * T * W;
                double* obase = out->data.data() + b * T * H;
                std::vector<double> local(needs_grad ? 0 : static_cast<std::size_t>(T));
                const double* mask = drop ? saved2.data() + bh * T * T : nullptr;
                for (std::int64_t i = 0; i < T; ++i) {
                    const double* qi = base + i * W + h * dh;
                    double* srow = needs_grad ? saved.data() + bh * T * T + i * T : local.data();
                    double mx = -1e300;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const double* kj = base + j * W + H + h * dh;
                        double s = 0.0;
                        for (std::int64_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
                        srow[j] = s * scale;
                        mx = std::max(mx, srow[j]);
                    }
                    double z = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        srow[j] = std::exp(srow[j] - mx);
                        z += srow[j];
                    }
                    for (std::int64_t j = 0; j <= i; ++j) srow[j] /= z;
                    double* orow = obase + i * H + h * dh;
                    for (std::int64_t d = 0; d < dh; ++d) orow[d] = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        double w = srow[j];
                        if (drop) w *= mask[i * T + j] / keep;
                        const double* vj = base + j * W + 2 * H + h * dh;
                        for (std::int64_t d = 0; d < dh; ++d) orow[d] += w * vj[d];
                    }
                }
            }
            break;
        }
    }

    if (finite_checks_enabled() && !all_finite(out->data)) {
        throw std::runtime_error(std::string("non-finite output of ") + op_name(kind));
    }

    if (prof) {
        const auto prof_end = std::chrono::steady_clock::now();
        g_op_ms[static_cast<int>(kind)] +=
            std::chrono::duration<double, std::milli>(prof_end - prof_start).count();
        g_op_calls[static_cast<int>(kind)] += 1;
    }

    if (needs_grad) {
        out->requires_grad = true;
        Node node;
        node.kind = kind;
        node.inputs = inputs;
        node.output = out;
        node.attrs = attrs;
        node.attrs.rng = nullptr;  // streams are not replayed in backward
        node.saved = std::move(saved);
        node.saved2 = std::move(saved2);
        nodes_.push_back(std::move(node));
    }
    return out;
}

void Tape::backward(const ArrayPtr& loss, bool retain) {
    if (loss == nullptr || loss->size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (nodes_.empty()) throw std::runtime_error("backward: tape is empty");
    if (consumed_) throw std::runtime_error("backward: tape already consumed in non-retaining mode");
    if (!retain) consumed_ = true;

    bool found = false;
    for (const auto& node : nodes_) {
        if (node.output == loss) found = true;
        node.output->zero_grad();  // intermediates start fresh each pass
    }
    if (!found) throw std::invalid_argument("backward: loss was not produced by this tape");

    loss->ensure_grad();
    loss->grad[0] = 1.0;

    const int threads = max_threads();
    const bool prof = g_op_profile.load(std::memory_order_relaxed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = *it;
        DArray& o = *node.output;
        if (!o.has_grad()) continue;
        const std::vector<double>& go = o.grad;
        const auto prof_start =
            prof ? std::chrono::steady_clock::now() : std::chrono::steady_clock::time_point{};

        switch (node.kind) {
            case OpKind::MatMul: {
                DArray& a = *node.inputs[0];
                DArray& b = *node.inputs[1];
                const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
                if (a.requires_grad) {
                    a.ensure_grad();
                    matmul_bwd_a(go.data(), b.data.data(), a.grad.data(), m, k, n, threads);
                }
                if (b.requires_grad) {
                    b.ensure_grad();
                    matmul_bwd_b(a.data.data(), go.data(), b.grad.data(), m, k, n, threads);
                }
                break;
            }
            case OpKind::Add:
            case OpKind::Sub:
            case OpKind::Mul: {
                DArray& a = *node.inputs[0];
                DArray& b = *node.inputs[1];
                const Bcast bc = classify(a, b, node.kind);
                const std::int64_t m = a.rows(), n = a.cols();
                const bool ga = a.requires_grad, gb = b.requires_grad;
                if (ga) a.ensure_grad();
                if (gb) b.ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i * n + j);
                        const double g = go[idx];
                        if (node.kind == OpKind::Mul) {
                            if (ga) a.grad[idx] += g * bval(b, bc, i, j, n);
                            if (gb) baccum(b, bc, i, j, n, g * a.data[idx]);
                        } else {
                            if (ga) a.grad[idx] += g;
                            if (gb) baccum(b, bc, i, j, n, node.kind == OpKind::Sub ? -g : g);
                        }
                    }
                }
                break;
            }
            case OpKind::AddScalar: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i];
                break;
            }
            case OpKind::MulScalar: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i] * node.attrs.scalar;
                break;
            }
            case OpKind::Relu: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    a.grad[i] += a.data[i] > 0.0 ? go[i] : 0.0;
                }
                break;
            }
            case OpKind::Tanh: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    a.grad[i] += go[i] * (1.0 - o.data[i] * o.data[i]);
                }
                break;
            }
            case OpKind::Exp: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i] * o.data[i];
                break;
            }
            case OpKind::Log: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i] / a.data[i];
                break;
            }
            case OpKind::Clamp: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    if (a.data[i] > node.attrs.lo && a.data[i] < node.attrs.hi) a.grad[i] += go[i];
                }
                break;
            }
            case OpKind::Minimum: {
                DArray& a = *node.inputs[0];
                DArray& b = *node.inputs[1];
                const bool ga = a.requires_grad, gb = b.requires_grad;
                if (ga) a.ensure_grad();
                if (gb) b.ensure_grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    if (a.data[i] <= b.data[i]) {
                        if (ga) a.grad[i] += go[i];
                    } else if (gb) {
                        b.grad[i] += go[i];
                    }
                }
                break;
            }
            case OpKind::Softmax: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                const std::int64_t m = a.rows(), n = a.cols();
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* y = o.data.data() + i * n;
                    const double* g = go.data() + i * n;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
                    double* da = a.grad.data() + i * n;
                    for (std::int64_t j = 0; j < n; ++j) da[j] += y[j] * (g[j] - dot);
                }
                break;
            }
            case OpKind::LayerNorm: {
                DArray& x = *node.inputs[0];
                DArray& gn = *node.inputs[1];
                DArray& bs = *node.inputs[2];
                const std::int64_t m = x.rows(), n = x.cols();
                const bool gx = x.requires_grad, gg = gn.requires_grad, gb = bs.requires_grad;
                if (gx) x.ensure_grad();
                if (gg) gn.ensure_grad();
                if (gb) bs.ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    const double mu = node.saved[static_cast<std::size_t>(2 * i)];
                    const double inv = node.saved[static_cast<std::size_t>(2 * i + 1)];
                    const double* row = x.data.data() + i * n;
                    const double* g = go.data() + i * n;
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double xh = (row[j] - mu) * inv;
                        const double dxh = g[j] * gn.data[static_cast<std::size_t>(j)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        if (gg) gn.grad[static_cast<std::size_t>(j)] += g[j] * xh;
                        if (gb) bs.grad[static_cast<std::size_t>(j)] += g[j];
                    }
                    if (gx) {
                        double* dx = x.grad.data() + i * n;
                        const double invn = 1.0 / static_cast<double>(n);
                        for (std::int64_t j = 0; j < n; ++j) {
                            const double xh = (row[j] - mu) * inv;
                            const double dxh = g[j] * gn.data[static_cast<std::size_t>(j)];
                            dx[j] += inv * (dxh - invn * sum_dxh - xh * invn * sum_dxh_xh);
                        }
                    }
                }
                break;
            }
            case OpKind::Concat: {
                const std::int64_t m = o.rows(), total = o.cols();
                std::int64_t off = 0;
                for (auto& inp : node.inputs) {
                    const std::int64_t n = inp->cols();
                    if (inp->requires_grad) {
                        inp->ensure_grad();
                        for (std::int64_t i = 0; i < m; ++i) {
                            const double* g = go.data() + i * total + off;
                            double* d = inp->grad.data() + i * n;
                            for (std::int64_t j = 0; j < n; ++j) d[j] += g[j];
                        }
                    }
                    off += n;
                }
                break;
            }
            case OpKind::SliceCols: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                const std::int64_t m = a.rows(), n = a.cols(), len = node.attrs.len;
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* g = go.data() + i * len;
                    double* d = a.grad.data() + i * n + node.attrs.start;
                    for (std::int64_t j = 0; j < len; ++j) d[j] += g[j];
                }
                break;
            }
            case OpKind::Sum: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                const double g = go[0];
                for (auto& d : a.grad) d += g;
                break;
            }
            case OpKind::Mean: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                const double g = go[0] / static_cast<double>(a.size());
                for (auto& d : a.grad) d += g;
                break;
            }
            case OpKind::TileRows: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                const std::int64_t chunk = a.size();
                const int reps = node.attrs.len;
                for (int r = 0; r < reps; ++r) {
                    const double* g = go.data() + static_cast<std::int64_t>(r) * chunk;
                    for (std::int64_t i = 0; i < chunk; ++i) a.grad[static_cast<std::size_t>(i)] += g[i];
                }
                break;
            }
            case OpKind::Dropout: {
                DArray& a = *node.inputs[0];
                a.ensure_grad();
                if (!node.saved.empty()) {
                    const double keep = 1.0 - node.attrs.p;
                    for (std::size_t i = 0; i < go.size(); ++i) {
                        a.grad[i] += go[i] * node.saved[i] / keep;
                    }
                } else {
                    for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i];
                }
                break;
            }
            case OpKind::GaussianSample: {
                DArray& mu = *node.inputs[0];
                DArray& ls = *node.inputs[1];
                if (mu.requires_grad) {
                    mu.ensure_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) mu.grad[i] += go[i];
                }
                if (ls.requires_grad) {
                    ls.ensure_grad();
                    // d out / d log_std = exp(log_std) * z = out - mean
                    for (std::size_t i = 0; i < go.size(); ++i) {
                        ls.grad[i] += go[i] * (o.data[i] - mu.data[i]);
                    }
                }
                break;
            }
            case OpKind::CausalSelfAttention: {
                DArray& qkv = *node.inputs[0];
                qkv.ensure_grad();
                const int B = node.attrs.batch, T = node.attrs.seq, nh = node.attrs.heads;
                const std::int64_t H = qkv.cols() / 3;
                const std::int64_t dh = H / nh;
                const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                const bool drop = !node.saved2.empty();
                const double keep = 1.0 - node.attrs.p;
                const std::int64_t W = qkv.cols();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && static_cast<std::int64_t>(B) * nh > 1)
                for (std::int64_t bh = 0; bh < static_cast<std::int64_t>(B) * nh; ++bh) {
                    const std::int64_t b = bh / nh;
                    const std::int64_t h = bh % nh;
                    const double* base = qkv.data.data() + b * T * W;
                    double* dbase = qkv.grad.data() + b * T * W;
                    const double* probs = node.saved.data() + bh * T * T;
                    const double* mask = drop ? node.saved2.data() + bh * T * T : nullptr;
                    const double* gout = go.data() + b * T * H;
                    std::vector<double> dp(static_cast<std::size_t>(T));
                    for (std::int64_t i = 0; i < T; ++i) {
                        const double* gi = gout + i * H + h * dh;
                        const double* prow = probs + i * T;
                        // dV and d(prob)
                        for (std::int64_t j = 0; j <= i; ++j) {
                            const double* vj = base + j * W + 2 * H + h * dh;
                            double* dvj = dbase + j * W + 2 * H + h * dh;
                            double w = prow[j];
                            double dpt = 0.0;
                            for (std::int64_t d = 0; d < dh; ++d) dpt += gi[d] * vj[d];
                            if (drop) {
                                const double mk = mask[i * T + j] / keep;
                                for (std::int64_t d = 0; d < dh; ++d) dvj[d] += w * mk * gi[d];
                                dp[static_cast<std::size_t>(j)] = dpt * mk;
                            } else {
                                for (std::int64_t d = 0; d < dh; ++d) dvj[d] += w * gi[d];
                                dp[static_cast<std::size_t>(j)] = dpt;
                            }
                        }
                        // softmax jacobian -> dscore, then dQ/dK
                        double dot = 0.0;
                        for (std::int64_t j = 0; j <= i; ++j) dot += dp[static_cast<std::size_t>(j)] * prow[j];
                        const double* qi = base + i * W + h * dh;
                        double* dqi = dbase + i * W + h * dh;
                        for (std::int64_t j = 0; j <= i; ++j) {
                            const double ds = prow[j] * (dp[static_cast<std::size_t>(j)] - dot) * scale;
                            if (ds == 0.0) continue;
                            const double* kj = base + j * W + H + h * dh;
                            double* dkj = dbase + j * W + H + h * dh;
                            for (std::int64_t d = 0; d < dh; ++d) {
                                dqi[d] += ds * kj[d];
                                dkj[d] += ds * qi[d];
                            }
                        }
                    }
                }
                break;
            }
        }
        if (prof) {
            const auto prof_end = std::chrono::steady_clock::now();
            g_op_ms[32 + static_cast<int>(node.kind)] +=
                std::chrono::duration<double, std::milli>(prof_end - prof_start).count();
            g_op_calls[32 + static_cast<int>(node.kind)] += 1;
        }
    }
}

void Tape::clear() {
    nodes_.clear();
    consumed_ = false;
}

namespace ops {

ArrayPtr matmul(Tape& t, const ArrayPtr& a, const ArrayPtr& b) { return t.forward(OpKind::MatMul, {a, b}); }
ArrayPtr add(Tape& t, const ArrayPtr& a, const ArrayPtr& b) { return t.forward(OpKind::Add, {a, b}); }
ArrayPtr sub(Tape& t, const ArrayPtr& a, const ArrayPtr& b) { return t.forward(OpKind::Sub, {a, b}); }
ArrayPtr mul(Tape& t, const ArrayPtr& a, const ArrayPtr& b) { return t.forward(OpKind::Mul, {a, b}); }

ArrayPtr add_scalar(Tape& t, const ArrayPtr& a, double c) {
    OpAttrs at;
    at.scalar = c;
    return t.forward(OpKind::AddScalar, {a}, at);
}

ArrayPtr mul_scalar(Tape& t, const ArrayPtr& a, double c) {
    OpAttrs at;
    at.scalar = c;
    return t.forward(OpKind::MulScalar, {a}, at);
}

ArrayPtr relu(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Relu, {a}); }
ArrayPtr tanh(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Tanh, {a}); }
ArrayPtr exp(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Exp, {a}); }
ArrayPtr log(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Log, {a}); }

ArrayPtr clamp(Tape& t, const ArrayPtr& a, double lo, double hi) {
    OpAttrs at;
    at.lo = lo;
    at.hi = hi;
    return t.forward(OpKind::Clamp, {a}, at);
}

ArrayPtr minimum(Tape& t, const ArrayPtr& a, const ArrayPtr& b) {
    return t.forward(OpKind::Minimum, {a, b});
}

ArrayPtr softmax(Tape& t, const ArrayPtr& a, int axis) {
    OpAttrs at;
    at.axis = axis;
    return t.forward(OpKind::Softmax, {a}, at);
}

ArrayPtr layer_norm(Tape& t, const ArrayPtr& x, const ArrayPtr& gain, const ArrayPtr& bias, double eps) {
    OpAttrs at;
    at.eps = eps;
    return t.forward(OpKind::LayerNorm, {x, gain, bias}, at);
}

ArrayPtr concat(Tape& t, const std::vector<ArrayPtr>& xs) { return t.forward(OpKind::Concat, xs); }

ArrayPtr slice_cols(Tape& t, const ArrayPtr& a, int start, int len) {
    OpAttrs at;
    at.start = start;
    at.len = len;
    return t.forward(OpKind::SliceCols, {a}, at);
}

ArrayPtr sum(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Sum, {a}); }
ArrayPtr mean(Tape& t, const ArrayPtr& a) { return t.forward(OpKind::Mean, {a}); }

ArrayPtr tile_rows(Tape& t, const ArrayPtr& a, int reps) {
    OpAttrs at;
    at.len = reps;
    return t.forward(OpKind::TileRows, {a}, at);
}

ArrayPtr dropout(Tape& t, const ArrayPtr& a, double p, bool train, RngStream* rng) {
    OpAttrs at;
    at.p = p;
    at.train = train;
    at.rng = rng;
    return t.forward(OpKind::Dropout, {a}, at);
}

ArrayPtr gaussian_sample(Tape& t, const ArrayPtr& mean, const ArrayPtr& log_std, RngStream* rng) {
    OpAttrs at;
    at.rng = rng;
    return t.forward(OpKind::GaussianSample, {mean, log_std}, at);
}

ArrayPtr causal_self_attention(Tape& t, const ArrayPtr& qkv, int batch, int seq, int heads,
                               double attn_dropout, bool train, RngStream* rng) {
    OpAttrs at;
    at.batch = batch;
    at.seq = seq;
    at.heads = heads;
    at.p = attn_dropout;
    at.train = train;
    at.rng = rng;
    return t.forward(OpKind::CausalSelfAttention, {qkv}, at);
}

}  // namespace ops

}  // namespace dblf
