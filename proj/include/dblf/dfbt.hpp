#pragma once

#include <string>
#include <vector>

#include "dblf/dataset.hpp"
#include "dblf/delay.hpp"
#include "dblf/nn.hpp"
#include "dblf/optim.hpp"

namespace dblf {

enum class LossKind { mse, gaussian_nll };
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind kind);

struct DFBTConfig {
    int delta_max = 8;
    int state_dim = 0;
    int action_dim = 0;
    int hidden = 256;
    int layers = 10;
    int heads = 4;
    int ffn_mult = 4;
    double dropout = 0.1;  // attention, residual and hidden dropout share the rate
    bool gaussian_head = false;
    double ln_eps = 1e-5;

    int token_width() const { return state_dim + action_dim + 1; }

    static DFBTConfig desk(int delta_max, int state_dim, int action_dim, bool gaussian_head = false);
    static DFBTConfig paper(int delta_max, int state_dim, int action_dim, bool gaussian_head = false);
};

// Causal-attention forecaster over the tokenized augmented state. Position i
// attends to positions <= i and predicts the state i+1 steps past the anchor,
// so one forward pass yields all delayed horizons at once.
struct DFBTModel {
    DFBTConfig cfg;
    Linear tok_embed;
    ArrayPtr pos_embed;  // [delta_max, hidden], learned
    struct Block {
        ArrayPtr ln1_g, ln1_b;
        Linear qkv;   // [hidden, 3*hidden]
        Linear proj;  // [hidden, hidden]
        ArrayPtr ln2_g, ln2_b;
        Linear fc1, fc2;
    };
    std::vector<Block> blocks;
    ArrayPtr lnf_g, lnf_b;
    Linear head_mean;
    Linear head_log_std;  // only when cfg.gaussian_head

    std::vector<ArrayPtr> parameters() const;
    NamedArrays named_parameters() const;
    long param_count() const;
};

DFBTModel make_dfbt(const DFBTConfig& cfg, std::uint64_t seed);

void save_dfbt(const std::string& path, const DFBTModel& model);
DFBTModel load_dfbt(const std::string& path);

struct DFBTOut {
    ArrayPtr mean;     // [B*delta_max, state_dim]; position i predicts s_{anchor+i+1}
    ArrayPtr log_std;  // same shape when the gaussian head is present, else null
};

// tokens: [B*delta_max, token_width] row-major over (batch, position).
DFBTOut dfbt_forward(Tape& tape, const DFBTModel& model, const ArrayPtr& tokens, int batch,
                     bool train, RngStream* dropout_rng);

// Masked losses, averaged over valid positions (mse also over state dims).
ArrayPtr masked_mse(Tape& tape, const ArrayPtr& pred, const ArrayPtr& targets, const ArrayPtr& mask,
                    long valid_count);
ArrayPtr masked_gaussian_nll(Tape& tape, const ArrayPtr& mean, const ArrayPtr& log_std,
                             const ArrayPtr& targets, const ArrayPtr& mask, long valid_count);

ArrayPtr dfbt_loss(Tape& tape, const DFBTModel& model, const ArrayPtr& tokens,
                   const ArrayPtr& targets, const ArrayPtr& mask, long valid_count, int batch,
                   LossKind kind, bool train, RngStream* dropout_rng);

// Batch assembly from token sequences; mask is a [B*delta_max, 1] column.
struct TokenBatch {
    ArrayPtr tokens;
    ArrayPtr targets;
    ArrayPtr mask;
    long valid_count = 0;
    int batch = 0;
};

struct BeliefTrainConfig {
    int epochs = 100;
    int batch_size = 256;
    int steps_per_epoch = 0;  // 0: one full pass over the training windows
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    LossKind loss = LossKind::mse;
    double holdout_frac = 0.1;
};

struct TrainCurve {
    std::vector<double> epoch_loss;
};

// Alg. phase 1: supervised training on windows sampled uniformly over valid
// (trajectory, t) pairs of the train split. Under uniform delays the
// effective delay of each window is drawn from U(1, delta_max) and masked.
TrainCurve train_dfbt(DFBTModel& model, const Dataset& train_split, const DelaySpec& delay,
                      const BeliefTrainConfig& cfg, std::uint64_t seed);

}  // namespace dblf
