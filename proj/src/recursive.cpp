#include "dblf/recursive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dblf {

namespace {

struct PairIndex {
    std::vector<std::pair<int, long>> pairs;  // (trajectory, transition)
};

PairIndex build_pairs(const Dataset& ds) {
    PairIndex idx;
    for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
        const Trajectory& traj = ds.trajectories[k].traj;
        for (long t = 0; t < traj.length(); ++t) idx.pairs.emplace_back(static_cast<int>(k), t);
    }
    return idx;
}

}  // namespace

RecursiveModel make_recursive(const RecursiveConfig& cfg, std::uint64_t seed) {
    if (cfg.state_dim < 1) throw std::invalid_argument("bad recursive config");
    RngStream rng(seed, "recursive_init");
    RecursiveModel m;
    m.cfg = cfg;
    m.l1 = make_linear(cfg.state_dim + cfg.action_dim, cfg.hidden, rng);
    m.l2 = make_linear(cfg.hidden, cfg.hidden, rng);
    m.head = make_linear(cfg.hidden, cfg.state_dim, rng);
    return m;
}

std::vector<ArrayPtr> RecursiveModel::parameters() const { return params_of(named_parameters()); }

NamedArrays RecursiveModel::named_parameters() const {
    NamedArrays out;
    collect_params(l1, "l1", out);
    collect_params(l2, "l2", out);
    collect_params(head, "head", out);
    return out;
}

void save_recursive(const std::string& path, const RecursiveModel& model) {
    NamedArrays entries = model.named_parameters();
    entries.emplace_back("__config__",
                         DArray::from({3}, {static_cast<double>(model.cfg.state_dim),
                                            static_cast<double>(model.cfg.action_dim),
                                            static_cast<double>(model.cfg.hidden)}));
    save_checkpoint(path, entries);
}

RecursiveModel load_recursive(const std::string& path) {
    const NamedArrays entries = load_checkpoint(path);
    const auto cfg_arr = checkpoint_get(entries, "__config__");
    RecursiveConfig c;
    c.state_dim = static_cast<int>(cfg_arr->data[0]);
    c.action_dim = static_cast<int>(cfg_arr->data[1]);
    c.hidden = static_cast<int>(cfg_arr->data[2]);
    RecursiveModel m = make_recursive(c, 0);
    for (auto& [name, param] : m.named_parameters()) {
        auto loaded = checkpoint_get(entries, name);
        if (loaded->shape != param->shape) throw std::runtime_error("checkpoint shape mismatch");
        param->data = loaded->data;
    }
    return m;
}

ArrayPtr recursive_forward(Tape& tape, const RecursiveModel& model, const ArrayPtr& state_action) {
    if (state_action->cols() != model.cfg.state_dim + model.cfg.action_dim) {
        throw std::invalid_argument("recursive_forward: input dim must be state_dim + action_dim");
    }
    // tanh keeps the map smooth; one-step models fit far tighter than with relu
    ArrayPtr h = ops::tanh(tape, linear(tape, model.l1, state_action));
    h = ops::tanh(tape, linear(tape, model.l2, h));
    return linear(tape, model.head, h);
}

Vec recursive_step(const RecursiveModel& model, const Vec& state, const Vec& action) {
    Vec in(state);
    in.insert(in.end(), action.begin(), action.end());
    const int width = static_cast<int>(in.size());
    Tape tape;
    ArrayPtr out = recursive_forward(tape, model, DArray::from({1, width}, std::move(in)));
    return out->data;
}

std::vector<Vec> recursive_forecast(const std::function<Vec(const Vec&, const Vec&)>& one_step,
                                    const AugmentedState& aug) {
    std::vector<Vec> preds;
    preds.reserve(static_cast<std::size_t>(aug.effective_delay));
    Vec s = aug.anchor_state;
    for (int i = 0; i < aug.effective_delay; ++i) {
        s = one_step(s, aug.action_queue[static_cast<std::size_t>(i)]);
        if (!all_finite(s)) throw std::runtime_error("recursive_forecast: non-finite intermediate");
        preds.push_back(s);
    }
    return preds;
}

std::vector<Vec> recursive_forecast(const RecursiveModel& model, const AugmentedState& aug) {
    return recursive_forecast(
        [&model](const Vec& s, const Vec& a) { return recursive_step(model, s, a); }, aug);
}

TrainCurve train_recursive(RecursiveModel& model, const Dataset& train_split,
                           const BeliefTrainConfig& cfg, std::uint64_t seed) {
    const PairIndex idx = build_pairs(train_split);
    if (idx.pairs.empty()) throw std::invalid_argument("train_recursive: empty dataset");

    TrainCurve curve;
    if (cfg.epochs <= 0) return curve;

    OptConfig oc;
    oc.lr = cfg.lr;
    oc.beta1 = cfg.beta1;
    oc.beta2 = cfg.beta2;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(model.parameters(), oc);

    RngStream sample_rng(seed, "recursive_batch");
    const int in_dim = model.cfg.state_dim + model.cfg.action_dim;
    const long steps =
        cfg.steps_per_epoch > 0
            ? cfg.steps_per_epoch
            : (static_cast<long>(idx.pairs.size()) + cfg.batch_size - 1) / cfg.batch_size;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (long s = 0; s < steps; ++s) {
            const int B = cfg.batch_size;
            auto inputs = DArray::zeros({B, in_dim});
            auto targets = DArray::zeros({B, model.cfg.state_dim});
            auto mask = DArray::full({B, 1}, 1.0);
            for (int b = 0; b < B; ++b) {
                const auto [ti, t] =
                    idx.pairs[static_cast<std::size_t>(sample_rng.uniform_int(
                        0, static_cast<std::int64_t>(idx.pairs.size()) - 1))];
                const Transition& tr =
                    train_split.trajectories[static_cast<std::size_t>(ti)].traj.records[static_cast<std::size_t>(t)];
                std::copy(tr.state.begin(), tr.state.end(),
                          inputs->data.begin() + static_cast<std::size_t>(b) * in_dim);
                std::copy(tr.action.begin(), tr.action.end(),
                          inputs->data.begin() + static_cast<std::size_t>(b) * in_dim +
                              model.cfg.state_dim);
                std::copy(tr.next_state.begin(), tr.next_state.end(),
                          targets->data.begin() +
                              static_cast<std::size_t>(b) * model.cfg.state_dim);
            }
            Tape tape;
            ArrayPtr pred = recursive_forward(tape, model, inputs);
            ArrayPtr loss = masked_mse(tape, pred, targets, mask, B);
            opt.zero_grads();
            tape.backward(loss);
            opt.step();
            epoch_loss += loss->item();
        }
        curve.epoch_loss.push_back(epoch_loss / static_cast<double>(steps));
    }
    return curve;
}

double one_step_error(const RecursiveModel& model, const Dataset& ds, long max_pairs,
                      std::uint64_t seed) {
    const PairIndex idx = build_pairs(ds);
    if (idx.pairs.empty()) throw std::invalid_argument("one_step_error: empty dataset");
    RngStream rng(seed, "one_step_error");
    const long n = max_pairs > 0 ? std::min<long>(max_pairs, static_cast<long>(idx.pairs.size()))
                                 : static_cast<long>(idx.pairs.size());
    const bool sample = n < static_cast<long>(idx.pairs.size());
    double worst = 0.0;
    for (long k = 0; k < n; ++k) {
        const auto [ti, t] =
            sample ? idx.pairs[static_cast<std::size_t>(rng.uniform_int(
                         0, static_cast<std::int64_t>(idx.pairs.size()) - 1))]
                   : idx.pairs[static_cast<std::size_t>(k)];
        const Transition& tr =
            ds.trajectories[static_cast<std::size_t>(ti)].traj.records[static_cast<std::size_t>(t)];
        const Vec pred = recursive_step(model, tr.state, tr.action);
        double d = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            d += (pred[i] - tr.next_state[i]) * (pred[i] - tr.next_state[i]);
        }
        worst = std::max(worst, std::sqrt(d));
    }
    return worst;
}

}  // namespace dblf
