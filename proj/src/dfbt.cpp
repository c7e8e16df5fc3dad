#include "dblf/dfbt.hpp"

#include <cmath>
#include <stdexcept>

namespace dblf {

namespace {

constexpr double kLogStdLo = -10.0, kLogStdHi = 2.0;
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

ArrayPtr make_ln_gain(int n) { return DArray::full({n}, 1.0, true); }
ArrayPtr make_ln_bias(int n) { return DArray::zeros({n}, true); }

struct WindowIndex {
    std::vector<std::pair<int, long>> pairs;  // (trajectory, t)
};

WindowIndex build_index(const Dataset& ds, int delta_max) {
    WindowIndex idx;
    for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
        const Trajectory& traj = ds.trajectories[k].traj;
        for (long t = delta_max; t < traj.length(); ++t) {
            idx.pairs.emplace_back(static_cast<int>(k), t);
        }
    }
    return idx;
}

}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "gaussian_nll") return LossKind::gaussian_nll;
    throw std::invalid_argument("unknown loss kind: " + s);
}

std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "gaussian_nll"; }

DFBTConfig DFBTConfig::desk(int delta_max, int state_dim, int action_dim, bool gaussian_head) {
    DFBTConfig c;
    c.delta_max = delta_max;
    c.state_dim = state_dim;
    c.action_dim = action_dim;
    c.hidden = 64;
    c.layers = 2;
    c.heads = 4;
    c.ffn_mult = 2;
    c.dropout = 0.1;
    c.gaussian_head = gaussian_head;
    return c;
}

DFBTConfig DFBTConfig::paper(int delta_max, int state_dim, int action_dim, bool gaussian_head) {
    DFBTConfig c;
    c.delta_max = delta_max;
    c.state_dim = state_dim;
    c.action_dim = action_dim;
    c.hidden = 256;
    c.layers = 10;
    c.heads = 4;
    c.ffn_mult = 4;
    c.dropout = 0.1;
    c.gaussian_head = gaussian_head;
    return c;
}

DFBTModel make_dfbt(const DFBTConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden % cfg.heads != 0) throw std::invalid_argument("hidden must be divisible by heads");
    if (cfg.delta_max < 1 || cfg.state_dim < 1) throw std::invalid_argument("bad DFBT config");
    RngStream rng(seed, "dfbt_init");
    DFBTModel m;
    m.cfg = cfg;
    m.tok_embed = make_linear(cfg.token_width(), cfg.hidden, rng);
    m.pos_embed = DArray::randn({cfg.delta_max, cfg.hidden}, rng, 0.02, true);
    for (int l = 0; l < cfg.layers; ++l) {
        DFBTModel::Block b;
        b.ln1_g = make_ln_gain(cfg.hidden);
        b.ln1_b = make_ln_bias(cfg.hidden);
        b.qkv = make_linear(cfg.hidden, 3 * cfg.hidden, rng);
        b.proj = make_linear(cfg.hidden, cfg.hidden, rng);
        b.ln2_g = make_ln_gain(cfg.hidden);
        b.ln2_b = make_ln_bias(cfg.hidden);
        b.fc1 = make_linear(cfg.hidden, cfg.ffn_mult * cfg.hidden, rng);
        b.fc2 = make_linear(cfg.ffn_mult * cfg.hidden, cfg.hidden, rng);
        m.blocks.push_back(std::move(b));
    }
    m.lnf_g = make_ln_gain(cfg.hidden);
    m.lnf_b = make_ln_bias(cfg.hidden);
    m.head_mean = make_linear(cfg.hidden, cfg.state_dim, rng);
    if (cfg.gaussian_head) m.head_log_std = make_linear(cfg.hidden, cfg.state_dim, rng);
    return m;
}

std::vector<ArrayPtr> DFBTModel::parameters() const { return params_of(named_parameters()); }

NamedArrays DFBTModel::named_parameters() const {
    NamedArrays out;
    collect_params(tok_embed, "tok_embed", out);
    out.emplace_back("pos_embed", pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "blocks." + std::to_string(l);
        out.emplace_back(p + ".ln1_g", blocks[l].ln1_g);
        out.emplace_back(p + ".ln1_b", blocks[l].ln1_b);
        collect_params(blocks[l].qkv, p + ".qkv", out);
        collect_params(blocks[l].proj, p + ".proj", out);
        out.emplace_back(p + ".ln2_g", blocks[l].ln2_g);
        out.emplace_back(p + ".ln2_b", blocks[l].ln2_b);
        collect_params(blocks[l].fc1, p + ".fc1", out);
        collect_params(blocks[l].fc2, p + ".fc2", out);
    }
    out.emplace_back("lnf_g", lnf_g);
    out.emplace_back("lnf_b", lnf_b);
    collect_params(head_mean, "head_mean", out);
    if (cfg.gaussian_head) collect_params(head_log_std, "head_log_std", out);
    return out;
}

long DFBTModel::param_count() const {
    long n = 0;
    for (const auto& [name, a] : named_parameters()) n += a->size();
    return n;
}

void save_dfbt(const std::string& path, const DFBTModel& model) {
    NamedArrays entries = model.named_parameters();
    const DFBTConfig& c = model.cfg;
    entries.emplace_back(
        "__config__",
        DArray::from({9}, {static_cast<double>(c.delta_max), static_cast<double>(c.state_dim),
                           static_cast<double>(c.action_dim), static_cast<double>(c.hidden),
                           static_cast<double>(c.layers), static_cast<double>(c.heads),
                           static_cast<double>(c.ffn_mult), c.dropout,
                           c.gaussian_head ? 1.0 : 0.0}));
    save_checkpoint(path, entries);
}

DFBTModel load_dfbt(const std::string& path) {
    const NamedArrays entries = load_checkpoint(path);
    const auto cfg_arr = checkpoint_get(entries, "__config__");
    DFBTConfig c;
    c.delta_max = static_cast<int>(cfg_arr->data[0]);
    c.state_dim = static_cast<int>(cfg_arr->data[1]);
    c.action_dim = static_cast<int>(cfg_arr->data[2]);
    c.hidden = static_cast<int>(cfg_arr->data[3]);
    c.layers = static_cast<int>(cfg_arr->data[4]);
    c.heads = static_cast<int>(cfg_arr->data[5]);
    c.ffn_mult = static_cast<int>(cfg_arr->data[6]);
    c.dropout = cfg_arr->data[7];
    c.gaussian_head = cfg_arr->data[8] != 0.0;
    DFBTModel m = make_dfbt(c, 0);
    for (auto& [name, param] : m.named_parameters()) {
        auto loaded = checkpoint_get(entries, name);
        if (loaded->shape != param->shape) throw std::runtime_error("DFBT checkpoint shape mismatch");
        param->data = loaded->data;
    }
    return m;
}

DFBTOut dfbt_forward(Tape& tape, const DFBTModel& model, const ArrayPtr& tokens, int batch,
                     bool train, RngStream* dropout_rng) {
    const DFBTConfig& c = model.cfg;
    const int T = c.delta_max;
    if (tokens->rows() != static_cast<std::int64_t>(batch) * T || tokens->cols() != c.token_width()) {
        throw std::invalid_argument("dfbt_forward: tokens must be [batch*delta_max, width]");
    }
    const double p = train ? c.dropout : 0.0;

    ArrayPtr x = linear(tape, model.tok_embed, tokens);
    x = ops::add(tape, x, ops::tile_rows(tape, model.pos_embed, batch));
    for (const auto& blk : model.blocks) {
        ArrayPtr h = ops::layer_norm(tape, x, blk.ln1_g, blk.ln1_b, c.ln_eps);
        ArrayPtr qkv = linear(tape, blk.qkv, h);
        ArrayPtr att = ops::causal_self_attention(tape, qkv, batch, T, c.heads, p, train, dropout_rng);
        att = linear(tape, blk.proj, att);
        att = ops::dropout(tape, att, p, train, dropout_rng);
        x = ops::add(tape, x, att);
        ArrayPtr h2 = ops::layer_norm(tape, x, blk.ln2_g, blk.ln2_b, c.ln_eps);
        ArrayPtr f = ops::relu(tape, linear(tape, blk.fc1, h2));
        f = ops::dropout(tape, f, p, train, dropout_rng);
        f = linear(tape, blk.fc2, f);
        f = ops::dropout(tape, f, p, train, dropout_rng);
        x = ops::add(tape, x, f);
    }
    x = ops::layer_norm(tape, x, model.lnf_g, model.lnf_b, c.ln_eps);
    DFBTOut out;
    out.mean = linear(tape, model.head_mean, x);
    if (c.gaussian_head) {
        out.log_std = ops::clamp(tape, linear(tape, model.head_log_std, x), kLogStdLo, kLogStdHi);
    }
    return out;
}

ArrayPtr masked_mse(Tape& tape, const ArrayPtr& pred, const ArrayPtr& targets, const ArrayPtr& mask,
                    long valid_count) {
    if (valid_count <= 0) throw std::invalid_argument("masked_mse: all positions masked");
    ArrayPtr diff = ops::sub(tape, pred, targets);
    ArrayPtr sq = ops::mul(tape, diff, diff);
    ArrayPtr masked = ops::mul(tape, sq, mask);
    const double denom = static_cast<double>(valid_count) * static_cast<double>(pred->cols());
    return ops::mul_scalar(tape, ops::sum(tape, masked), 1.0 / denom);
}

ArrayPtr masked_gaussian_nll(Tape& tape, const ArrayPtr& mean, const ArrayPtr& log_std,
                             const ArrayPtr& targets, const ArrayPtr& mask, long valid_count) {
    if (valid_count <= 0) throw std::invalid_argument("masked_gaussian_nll: all positions masked");
    ArrayPtr diff = ops::sub(tape, targets, mean);
    ArrayPtr inv_std = ops::exp(tape, ops::mul_scalar(tape, log_std, -1.0));
    ArrayPtr z = ops::mul(tape, diff, inv_std);
    ArrayPtr z2 = ops::mul_scalar(tape, ops::mul(tape, z, z), 0.5);
    ArrayPtr per = ops::add(tape, z2, log_std);
    per = ops::add_scalar(tape, per, kHalfLog2Pi);
    ArrayPtr masked = ops::mul(tape, per, mask);
    return ops::mul_scalar(tape, ops::sum(tape, masked), 1.0 / static_cast<double>(valid_count));
}

ArrayPtr dfbt_loss(Tape& tape, const DFBTModel& model, const ArrayPtr& tokens,
                   const ArrayPtr& targets, const ArrayPtr& mask, long valid_count, int batch,
                   LossKind kind, bool train, RngStream* dropout_rng) {
    DFBTOut out = dfbt_forward(tape, model, tokens, batch, train, dropout_rng);
    if (kind == LossKind::mse) return masked_mse(tape, out.mean, targets, mask, valid_count);
    if (!out.log_std) throw std::invalid_argument("gaussian_nll needs a model with the gaussian head");
    return masked_gaussian_nll(tape, out.mean, out.log_std, targets, mask, valid_count);
}

TrainCurve train_dfbt(DFBTModel& model, const Dataset& train_split, const DelaySpec& delay,
                      const BeliefTrainConfig& cfg, std::uint64_t seed) {
    const DFBTConfig& mc = model.cfg;
    if (delay.delta_max != mc.delta_max) {
        throw std::invalid_argument("train_dfbt: delay spec does not match the model's delta_max");
    }
    const WindowIndex idx = build_index(train_split, mc.delta_max);
    if (idx.pairs.empty()) throw std::invalid_argument("train_dfbt: dataset too short for delta_max");

    TrainCurve curve;
    if (cfg.epochs <= 0) return curve;

    OptConfig oc;
    oc.lr = cfg.lr;
    oc.beta1 = cfg.beta1;
    oc.beta2 = cfg.beta2;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(model.parameters(), oc);

    RngStream sample_rng(seed, "dfbt_batch");
    RngStream drop_rng(seed, "dfbt_dropout");
    const int T = mc.delta_max;
    const int w = mc.token_width();
    const long steps =
        cfg.steps_per_epoch > 0
            ? cfg.steps_per_epoch
            : (static_cast<long>(idx.pairs.size()) + cfg.batch_size - 1) / cfg.batch_size;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (long s = 0; s < steps; ++s) {
            const int B = cfg.batch_size;
            auto tokens = DArray::zeros({B * T, w});
            auto targets = DArray::zeros({B * T, mc.state_dim});
            auto mask = DArray::zeros({B * T, 1});
            long valid = 0;
            for (int b = 0; b < B; ++b) {
                const auto [ti, t] =
                    idx.pairs[static_cast<std::size_t>(sample_rng.uniform_int(
                        0, static_cast<std::int64_t>(idx.pairs.size()) - 1))];
                int eff = T;
                if (delay.kind == DelaySpec::Kind::uniform) {
                    eff = static_cast<int>(sample_rng.uniform_int(1, T));
                }
                // token i = (anchor | a_i | r_i), targets are the states one
                // step past each token; written in place, no window copies
                const Trajectory& traj = train_split.trajectories[static_cast<std::size_t>(ti)].traj;
                const long start = t - eff;
                const Vec& anchor = traj.state_at(start);
                for (int i = 0; i < eff; ++i) {
                    const Transition& rec = traj.records[static_cast<std::size_t>(start + i)];
                    double* tok = tokens->data.data() + (static_cast<std::size_t>(b) * T + i) * w;
                    std::copy(anchor.begin(), anchor.end(), tok);
                    std::copy(rec.action.begin(), rec.action.end(), tok + mc.state_dim);
                    tok[mc.state_dim + mc.action_dim] = rec.reward;
                    std::copy(rec.next_state.begin(), rec.next_state.end(),
                              targets->data.data() +
                                  (static_cast<std::size_t>(b) * T + i) * mc.state_dim);
                    mask->data[static_cast<std::size_t>(b) * T + i] = 1.0;
                    ++valid;
                }
            }
            Tape tape;
            ArrayPtr loss =
                dfbt_loss(tape, model, tokens, targets, mask, valid, B, cfg.loss, true, &drop_rng);
            opt.zero_grads();
            tape.backward(loss);
            opt.step();
            epoch_loss += loss->item();
        }
        curve.epoch_loss.push_back(epoch_loss / static_cast<double>(steps));
    }
    return curve;
}

}  // namespace dblf
