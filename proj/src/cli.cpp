#include "dblf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dblf/belief.hpp"
#include "dblf/textio.hpp"
#include "dblf/sac.hpp"
#include "dblf/theory.hpp"

namespace dblf {

namespace fs = std::filesystem;

// Nonzero-exit signal for bound/assertion violations (exit code 2).
struct BoundViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long to_long(const std::string& s) { return std::stol(s); }
double to_double(const std::string& s) { return std::stod(s); }

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& part : split_list(s)) out.push_back(std::stoull(part));
    if (out.empty()) throw std::invalid_argument("no seeds given");
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& part : split_list(s)) out.push_back(static_cast<int>(to_long(part)));
    return out;
}

std::vector<long> parse_long_list(const std::string& s) {
    std::vector<long> out;
    for (const auto& part : split_list(s)) out.push_back(to_long(part));
    return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
    std::string s;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(seeds[i]);
    }
    return s;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

EnvOptions env_options(const RunConfig& cfg) {
    EnvOptions o;
    o.noise_prob = cfg.noise_prob;
    o.noise_scale = cfg.noise_scale;
    o.msd_stiffness = cfg.msd_stiffness;
    o.msd_damping = cfg.msd_damping;
    o.msd_dirac_init = cfg.msd_dirac_init != 0;
    return o;
}

std::optional<DelaySpec> delay_of(const RunConfig& cfg) {
    if (cfg.delay_kind == "none") return std::nullopt;
    DelaySpec d;
    d.kind = delay_kind_from_string(cfg.delay_kind);
    d.delta_max = cfg.delta_max;
    return d;
}

SacConfig sac_config(const RunConfig& cfg) {
    SacConfig c;
    c.hidden = cfg.sac_hidden;
    c.batch = cfg.sac_batch;
    c.lr_actor = cfg.lr_actor;
    c.lr_critic = cfg.lr_critic;
    c.lr_alpha = cfg.lr_alpha;
    c.tau = cfg.tau;
    c.gamma = cfg.gamma;
    c.actor_freq = cfg.actor_freq;
    c.critic_freq = cfg.critic_freq;
    c.n_step = cfg.n_step;
    c.warmup_steps = cfg.warmup_steps;
    c.buffer_capacity = cfg.buffer_capacity;
    c.eval_interval = cfg.eval_interval;
    c.eval_episodes = cfg.eval_episodes;
    c.strict_paper_sign = cfg.strict_paper_sign != 0;
    c.twin_critics = cfg.twin_critics != 0;
    return c;
}

BeliefTrainConfig belief_train_config(const RunConfig& cfg) {
    BeliefTrainConfig c;
    c.epochs = cfg.epochs;
    c.batch_size = cfg.belief_batch;
    c.steps_per_epoch = cfg.belief_steps_per_epoch;
    c.lr = cfg.belief_lr;
    c.weight_decay = cfg.belief_wd;
    c.beta1 = cfg.belief_beta1;
    c.beta2 = cfg.belief_beta2;
    c.loss = loss_kind_from_string(cfg.loss);
    c.holdout_frac = cfg.holdout_frac;
    return c;
}

DFBTConfig dfbt_config(const RunConfig& cfg, const EnvSpec& spec) {
    DFBTConfig c;
    c.delta_max = cfg.delta_max;
    c.state_dim = spec.state_dim;
    c.action_dim = spec.action_dim;
    c.hidden = cfg.dfbt_hidden;
    c.layers = cfg.dfbt_layers;
    c.heads = cfg.dfbt_heads;
    c.ffn_mult = cfg.dfbt_ffn_mult;
    c.dropout = cfg.dfbt_dropout;
    c.gaussian_head = cfg.loss == "gaussian_nll";
    return c;
}

Policy checkpoint_policy(const std::string& path, const RunConfig& cfg) {
    auto agent = std::make_shared<SacAgent>(load_sac_agent(path, sac_config(cfg)));
    return [agent](const Vec& state, RngStream& rng) {
        return policy_action(*agent, state, false, &rng);
    };
}

void write_anchor_csv(const std::string& path, const std::string& env_id, double mean, double stddev,
                      int episodes) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "env_id,mean_return,std_return,n_episodes\n";
    os << env_id << "," << format_double(mean) << "," << format_double(stddev) << "," << episodes << "\n";
}

struct Anchor {
    std::string env_id;
    double mean = 0.0;
};

Anchor read_anchor_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open anchor file: " + path);
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    const auto parts = split_list(line);
    if (parts.size() < 2) throw std::runtime_error("malformed anchor file: " + path);
    return {parts[0], to_double(parts[1])};
}

}  // namespace

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

KeyValues load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    KeyValues kv;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("bad config line: " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

RunConfig resolve_config(const KeyValues& kv) {
    RunConfig c;
    auto it = kv.find("preset");
    c.preset = it != kv.end() ? it->second : "desk";
    if (c.preset == "paper") {
        c.dfbt_hidden = 256;
        c.dfbt_layers = 10;
        c.dfbt_heads = 4;
        c.dfbt_ffn_mult = 4;
        c.dfbt_dropout = 0.1;
        c.belief_lr = 1e-4;
        c.belief_wd = 1e-4;
        c.belief_batch = 256;
        c.belief_steps_per_epoch = 0;
        c.epochs = 1000;
        c.recursive_hidden = 256;
        c.sac_hidden = 256;
        c.sac_batch = 256;
        c.eval_interval = 10000;
    } else if (c.preset != "desk") {
        throw std::invalid_argument("unknown preset: " + c.preset);
    }

    for (const auto& [key, value] : kv) {
        if (key == "preset") continue;
        else if (key == "env") c.env = value;
        else if (key == "delay_kind") c.delay_kind = value;
        else if (key == "delta_max") c.delta_max = static_cast<int>(to_long(value));
        else if (key == "belief") c.belief = value;
        else if (key == "loss") c.loss = value;
        else if (key == "n_step") c.n_step = static_cast<int>(to_long(value));
        else if (key == "seeds") c.seeds = parse_seeds(value);
        else if (key == "steps") c.steps = to_long(value);
        else if (key == "epochs") c.epochs = static_cast<int>(to_long(value));
        else if (key == "n_transitions") c.n_transitions = to_long(value);
        else if (key == "out") c.out = value;
        else if (key == "dataset") c.dataset = value;
        else if (key == "belief_ckpt") c.belief_ckpt = value;
        else if (key == "recursive_ckpt") c.recursive_ckpt = value;
        else if (key == "actor_ckpt") c.actor_ckpt = value;
        else if (key == "medium_ckpt") c.medium_ckpt = value;
        else if (key == "expert_ckpt") c.expert_ckpt = value;
        else if (key == "mix") c.mix = value;
        else if (key == "anchors_random") c.anchors_random = value;
        else if (key == "anchors_sac") c.anchors_sac = value;
        else if (key == "run_dirs") c.run_dirs = value;
        else if (key == "policy") c.policy = value;
        else if (key == "export_jsonl") c.export_jsonl = static_cast<int>(to_long(value));
        else if (key == "system") c.system = value;
        else if (key == "delta_list") c.delta_list = value;
        else if (key == "n_rollouts") c.n_rollouts = to_long(value);
        else if (key == "bound_scale") c.bound_scale = to_double(value);
        else if (key == "noise_prob") c.noise_prob = to_double(value);
        else if (key == "noise_scale") c.noise_scale = to_double(value);
        else if (key == "msd_stiffness") c.msd_stiffness = to_double(value);
        else if (key == "msd_damping") c.msd_damping = to_double(value);
        else if (key == "msd_dirac_init") c.msd_dirac_init = static_cast<int>(to_long(value));
        else if (key == "gamma") c.gamma = to_double(value);
        else if (key == "dfbt_hidden") c.dfbt_hidden = static_cast<int>(to_long(value));
        else if (key == "dfbt_layers") c.dfbt_layers = static_cast<int>(to_long(value));
        else if (key == "dfbt_heads") c.dfbt_heads = static_cast<int>(to_long(value));
        else if (key == "dfbt_ffn_mult") c.dfbt_ffn_mult = static_cast<int>(to_long(value));
        else if (key == "dfbt_dropout") c.dfbt_dropout = to_double(value);
        else if (key == "belief_lr") c.belief_lr = to_double(value);
        else if (key == "belief_wd") c.belief_wd = to_double(value);
        else if (key == "belief_beta1") c.belief_beta1 = to_double(value);
        else if (key == "belief_beta2") c.belief_beta2 = to_double(value);
        else if (key == "belief_batch") c.belief_batch = static_cast<int>(to_long(value));
        else if (key == "belief_steps_per_epoch") c.belief_steps_per_epoch = static_cast<int>(to_long(value));
        else if (key == "holdout_frac") c.holdout_frac = to_double(value);
        else if (key == "max_eval_windows") c.max_eval_windows = to_long(value);
        else if (key == "recursive_hidden") c.recursive_hidden = static_cast<int>(to_long(value));
        else if (key == "sac_hidden") c.sac_hidden = static_cast<int>(to_long(value));
        else if (key == "sac_batch") c.sac_batch = static_cast<int>(to_long(value));
        else if (key == "lr_actor") c.lr_actor = to_double(value);
        else if (key == "lr_critic") c.lr_critic = to_double(value);
        else if (key == "lr_alpha") c.lr_alpha = to_double(value);
        else if (key == "tau") c.tau = to_double(value);
        else if (key == "actor_freq") c.actor_freq = static_cast<int>(to_long(value));
        else if (key == "critic_freq") c.critic_freq = static_cast<int>(to_long(value));
        else if (key == "warmup_steps") c.warmup_steps = static_cast<int>(to_long(value));
        else if (key == "buffer_capacity") c.buffer_capacity = to_long(value);
        else if (key == "eval_interval") c.eval_interval = static_cast<int>(to_long(value));
        else if (key == "eval_episodes") c.eval_episodes = static_cast<int>(to_long(value));
        else if (key == "checkpoint_steps") c.checkpoint_steps = value;
        else if (key == "strict_paper_sign") c.strict_paper_sign = static_cast<int>(to_long(value));
        else if (key == "twin_critics") c.twin_critics = static_cast<int>(to_long(value));
        else if (key == "n_sweep") c.n_sweep = value;
        else throw std::invalid_argument("unknown config key: " + key);
    }

    if (c.delay_kind != "none" && c.delta_max < 1) {
        throw std::invalid_argument("delta_max must be >= 1");
    }
    if (c.delay_kind != "none" && c.n_step > c.delta_max) {
        throw std::invalid_argument("config invariant violated: n_step must not exceed delta_max");
    }

    auto& e = c.echo;
    e["env"] = c.env;
    e["delay_kind"] = c.delay_kind;
    e["delta_max"] = std::to_string(c.delta_max);
    e["belief"] = c.belief;
    e["preset"] = c.preset;
    e["loss"] = c.loss;
    e["n_step"] = std::to_string(c.n_step);
    e["seeds"] = join_seeds(c.seeds);
    e["steps"] = std::to_string(c.steps);
    e["epochs"] = std::to_string(c.epochs);
    e["n_transitions"] = std::to_string(c.n_transitions);
    e["out"] = c.out;
    e["dataset"] = c.dataset;
    e["belief_ckpt"] = c.belief_ckpt;
    e["recursive_ckpt"] = c.recursive_ckpt;
    e["actor_ckpt"] = c.actor_ckpt;
    e["medium_ckpt"] = c.medium_ckpt;
    e["expert_ckpt"] = c.expert_ckpt;
    e["mix"] = c.mix;
    e["anchors_random"] = c.anchors_random;
    e["anchors_sac"] = c.anchors_sac;
    e["run_dirs"] = c.run_dirs;
    e["policy"] = c.policy;
    e["export_jsonl"] = std::to_string(c.export_jsonl);
    e["system"] = c.system;
    e["delta_list"] = c.delta_list;
    e["n_rollouts"] = std::to_string(c.n_rollouts);
    e["bound_scale"] = format_double(c.bound_scale);
    e["noise_prob"] = format_double(c.noise_prob);
    e["noise_scale"] = format_double(c.noise_scale);
    e["msd_stiffness"] = format_double(c.msd_stiffness);
    e["msd_damping"] = format_double(c.msd_damping);
    e["msd_dirac_init"] = std::to_string(c.msd_dirac_init);
    e["gamma"] = format_double(c.gamma);
    e["dfbt_hidden"] = std::to_string(c.dfbt_hidden);
    e["dfbt_layers"] = std::to_string(c.dfbt_layers);
    e["dfbt_heads"] = std::to_string(c.dfbt_heads);
    e["dfbt_ffn_mult"] = std::to_string(c.dfbt_ffn_mult);
    e["dfbt_dropout"] = format_double(c.dfbt_dropout);
    e["belief_lr"] = format_double(c.belief_lr);
    e["belief_wd"] = format_double(c.belief_wd);
    e["belief_beta1"] = format_double(c.belief_beta1);
    e["belief_beta2"] = format_double(c.belief_beta2);
    e["belief_batch"] = std::to_string(c.belief_batch);
    e["belief_steps_per_epoch"] = std::to_string(c.belief_steps_per_epoch);
    e["belief_optimizer"] = "adamw";
    e["holdout_frac"] = format_double(c.holdout_frac);
    e["max_eval_windows"] = std::to_string(c.max_eval_windows);
    e["recursive_hidden"] = std::to_string(c.recursive_hidden);
    e["sac_hidden"] = std::to_string(c.sac_hidden);
    e["sac_batch"] = std::to_string(c.sac_batch);
    e["sac_optimizer"] = "adam";
    e["sac_activation"] = "relu";
    e["lr_actor"] = format_double(c.lr_actor);
    e["lr_critic"] = format_double(c.lr_critic);
    e["lr_alpha"] = format_double(c.lr_alpha);
    e["tau"] = format_double(c.tau);
    e["actor_freq"] = std::to_string(c.actor_freq);
    e["critic_freq"] = std::to_string(c.critic_freq);
    e["warmup_steps"] = std::to_string(c.warmup_steps);
    e["buffer_capacity"] = std::to_string(c.buffer_capacity);
    e["eval_interval"] = std::to_string(c.eval_interval);
    e["eval_episodes"] = std::to_string(c.eval_episodes);
    e["checkpoint_steps"] = c.checkpoint_steps;
    e["strict_paper_sign"] = std::to_string(c.strict_paper_sign);
    e["twin_critics"] = std::to_string(c.twin_critics);
    e["n_sweep"] = c.n_sweep;
    return c;
}

void write_manifest(const RunConfig& cfg, const std::string& dir) {
    ensure_dir(dir);
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw std::runtime_error("cannot open manifest for writing in " + dir);
    for (const auto& [k, v] : cfg.echo) os << k << "=" << v << "\n";
}

int cmd_collect(const RunConfig& cfg) {
    auto env = make_env(cfg.env, env_options(cfg));
    std::vector<PolicyMixEntry> mix;
    for (const auto& part : split_list(cfg.mix)) {
        const auto colon = part.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("bad mix entry: " + part);
        PolicyMixEntry e;
        e.label = trim(part.substr(0, colon));
        e.weight = to_double(part.substr(colon + 1));
        if (e.label == "random") {
            e.policy = random_policy(*env);
        } else if (e.label == "medium") {
            if (cfg.medium_ckpt.empty()) {
                throw std::invalid_argument("mix includes 'medium' but no medium_ckpt was given");
            }
            e.policy = checkpoint_policy(cfg.medium_ckpt, cfg);
        } else if (e.label == "expert") {
            if (cfg.expert_ckpt.empty()) {
                throw std::invalid_argument("mix includes 'expert' but no expert_ckpt was given");
            }
            e.policy = checkpoint_policy(cfg.expert_ckpt, cfg);
        } else {
            throw std::invalid_argument("unknown mix label: " + e.label);
        }
        mix.push_back(std::move(e));
    }
    const Dataset ds = collect_dataset(*env, mix, cfg.n_transitions, cfg.seeds[0]);
    ensure_dir(cfg.out);
    save_dataset(cfg.out + "/dataset.dbtj", ds);
    if (cfg.export_jsonl) export_jsonl(cfg.out + "/dataset.jsonl", ds);
    write_manifest(cfg, cfg.out);
    std::cout << "collected " << ds.n_transitions() << " transitions over " << ds.trajectories.size()
              << " trajectories -> " << cfg.out << "/dataset.dbtj\n";
    return 0;
}

int cmd_train_belief(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw std::invalid_argument("train-belief needs dataset=");
    const Dataset full = load_dataset(cfg.dataset);
    if (full.env_id != cfg.env) {
        throw std::invalid_argument("dataset env '" + full.env_id + "' does not match config env '" +
                                    cfg.env + "'");
    }
    const auto [train, hold] = full.split_holdout(cfg.holdout_frac);
    const auto delay = delay_of(cfg);
    if (!delay) throw std::invalid_argument("train-belief needs a delayed configuration");
    const BeliefTrainConfig tc = belief_train_config(cfg);
    ensure_dir(cfg.out);

    for (const auto& kind : split_list(cfg.belief)) {
        if (kind == "oracle") {
            std::cout << "oracle belief has nothing to train; skipping\n";
            continue;
        }
        for (const std::uint64_t seed : cfg.seeds) {
            const std::string tag = kind + "_seed" + std::to_string(seed);
            TrainCurve curve;
            if (kind == "dfbt") {
                DFBTModel model = make_dfbt(dfbt_config(cfg, full.spec), seed);
                std::cout << "dfbt parameters: " << model.param_count() << "\n";
                curve = train_dfbt(model, train, *delay, tc, seed);
                save_dfbt(cfg.out + "/" + tag + ".dblf", model);
            } else if (kind == "recursive") {
                RecursiveConfig rc;
                rc.state_dim = full.spec.state_dim;
                rc.action_dim = full.spec.action_dim;
                rc.hidden = cfg.recursive_hidden;
                RecursiveModel model = make_recursive(rc, seed);
                curve = train_recursive(model, train, tc, seed);
                save_recursive(cfg.out + "/" + tag + ".dblf", model);
            } else {
                throw std::invalid_argument("unknown belief kind: " + kind);
            }
            std::ofstream os(cfg.out + "/train_loss_" + tag + ".csv");
            os << "epoch,loss\n";
            for (std::size_t i = 0; i < curve.epoch_loss.size(); ++i) {
                os << i + 1 << "," << format_double(curve.epoch_loss[i]) << "\n";
            }
        }
    }
    write_manifest(cfg, cfg.out);
    return 0;
}

int cmd_eval_belief(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw std::invalid_argument("eval-belief needs dataset=");
    const Dataset full = load_dataset(cfg.dataset);
    if (full.env_id != cfg.env) {
        throw std::invalid_argument("dataset env does not match config env");
    }
    const auto [train, hold] = full.split_holdout(cfg.holdout_frac);
    const Dataset& eval_set = hold.trajectories.empty() ? full : hold;
    ensure_dir(cfg.out);
    std::vector<std::pair<std::string, BeliefErrorCurve>> curves;
    for (const auto& kind : split_list(cfg.belief)) {
        std::shared_ptr<Belief> belief;
        if (kind == "oracle") belief = std::make_shared<OracleBelief>();
        else if (kind == "dfbt") belief = load_belief(kind, cfg.belief_ckpt);
        else if (kind == "recursive") belief = load_belief(kind, cfg.recursive_ckpt);
        else throw std::invalid_argument("unknown belief kind: " + kind);
        curves.emplace_back(kind, eval_belief_error(*belief, eval_set, cfg.delta_max, cfg.delta_max,
                                                    cfg.max_eval_windows, cfg.seeds[0]));
    }
    write_belief_error_csv(cfg.out + "/belief_error.csv", curves);
    write_manifest(cfg, cfg.out);
    return 0;
}

int cmd_train_agent(const RunConfig& cfg) {
    if (!cfg.n_sweep.empty()) {
        for (const int n : parse_int_list(cfg.n_sweep)) {
            RunConfig sub = cfg;
            sub.n_sweep.clear();
            sub.n_step = n;
            sub.out = cfg.out + "/N" + std::to_string(n);
            sub.echo["n_sweep"] = "";
            sub.echo["n_step"] = std::to_string(n);
            sub.echo["out"] = sub.out;
            const int rc = cmd_train_agent(sub);
            if (rc != 0) return rc;
        }
        write_manifest(cfg, cfg.out);
        return 0;
    }

    auto env = make_env(cfg.env, env_options(cfg));
    const auto delay = delay_of(cfg);
    std::shared_ptr<Belief> belief;
    if (cfg.belief == "oracle" || !delay) belief = std::make_shared<OracleBelief>();
    else if (cfg.belief == "dfbt") belief = load_belief("dfbt", cfg.belief_ckpt);
    else if (cfg.belief == "recursive") belief = load_belief("recursive", cfg.recursive_ckpt);
    else throw std::invalid_argument("unknown belief kind: " + cfg.belief);

    SacConfig sc = sac_config(cfg);
    sc.gamma = cfg.gamma;
    ensure_dir(cfg.out);
    std::ofstream finals(cfg.out + "/final_returns.csv");
    finals << "seed,mean_return,std_return\n";
    for (const std::uint64_t seed : cfg.seeds) {
        SacAgent agent = make_sac_agent(sc, env->spec(), seed);
        TrainHooks hooks;
        hooks.checkpoint_prefix = cfg.out + "/agent_seed" + std::to_string(seed) + "_";
        if (!cfg.checkpoint_steps.empty()) hooks.checkpoint_steps = parse_long_list(cfg.checkpoint_steps);
        const TrainAgentResult res = train_agent(env, delay, belief, agent, cfg.steps, seed, hooks);
        write_learning_curve_csv(cfg.out + "/curve_seed" + std::to_string(seed) + ".csv", res.curve);
        finals << seed << "," << format_double(res.final_mean_return) << ","
               << format_double(res.final_std_return) << "\n";
    }
    write_manifest(cfg, cfg.out);
    return 0;
}

int cmd_eval_agent(const RunConfig& cfg) {
    ensure_dir(cfg.out);
    if (cfg.policy == "random") {
        auto env = make_env(cfg.env, env_options(cfg));
        const auto [m, s] = evaluate_random(env, cfg.eval_episodes, cfg.seeds[0]);
        write_anchor_csv(cfg.out + "/anchor.csv", cfg.env, m, s, cfg.eval_episodes);
        write_manifest(cfg, cfg.out);
        return 0;
    }
    if (!cfg.actor_ckpt.empty()) {
        auto env = make_env(cfg.env, env_options(cfg));
        const auto delay = delay_of(cfg);
        std::shared_ptr<Belief> belief;
        if (cfg.belief == "oracle" || !delay) belief = std::make_shared<OracleBelief>();
        else if (cfg.belief == "dfbt") belief = load_belief("dfbt", cfg.belief_ckpt);
        else belief = load_belief("recursive", cfg.recursive_ckpt);
        SacAgent agent = load_sac_agent(cfg.actor_ckpt, sac_config(cfg));
        const auto [m, s] = evaluate_policy(env, delay, belief.get(), agent, cfg.eval_episodes,
                                            cfg.seeds[0], true);
        write_anchor_csv(cfg.out + "/anchor.csv", cfg.env, m, s, cfg.eval_episodes);
        write_manifest(cfg, cfg.out);
        return 0;
    }
    if (cfg.run_dirs.empty()) {
        throw std::invalid_argument("eval-agent needs policy=random, an actor_ckpt, or run_dirs=");
    }
    if (cfg.anchors_random.empty() || cfg.anchors_sac.empty()) {
        throw std::invalid_argument("aggregate eval-agent needs anchors_random= and anchors_sac=");
    }
    const Anchor ra = read_anchor_csv(cfg.anchors_random);
    const Anchor rs = read_anchor_csv(cfg.anchors_sac);
    std::ofstream os(cfg.out + "/aggregate.csv");
    os << "run_dir,env,delay_kind,delta_max,belief,n_step,n_seeds,mean_return,std_return,"
          "mean_norm,std_norm\n";
    for (const auto& dir : split_list(cfg.run_dirs)) {
        const KeyValues man = load_config_file(dir + "/manifest.txt");
        const auto need = [&](const std::string& k) {
            auto mit = man.find(k);
            if (mit == man.end()) throw std::runtime_error("manifest in " + dir + " lacks key " + k);
            return mit->second;
        };
        if (need("env") != cfg.env) {
            throw std::invalid_argument("run dir " + dir + " is for env " + need("env") +
                                        ", expected " + cfg.env);
        }
        std::vector<double> finals;
        for (const auto& seed : split_list(need("seeds"))) {
            const auto curve = read_learning_curve_csv(dir + "/curve_seed" + seed + ".csv");
            if (curve.empty()) continue;
            finals.push_back(curve.back().mean_return);
        }
        if (finals.empty()) throw std::runtime_error("no curves with data in " + dir);
        double mean = 0.0;
        for (double v : finals) mean += v;
        mean /= static_cast<double>(finals.size());
        double var = 0.0;
        for (double v : finals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(finals.size());
        const double sd = std::sqrt(var);
        const double scale = rs.mean - ra.mean;
        const double mean_norm = normalized_return(mean, rs.mean, ra.mean);
        const double std_norm = sd / std::fabs(scale);
        os << dir << "," << need("env") << "," << need("delay_kind") << "," << need("delta_max")
           << "," << need("belief") << "," << need("n_step") << "," << finals.size() << ","
           << format_double(mean) << "," << format_double(sd) << "," << format_double(mean_norm) << ","
           << format_double(std_norm) << "\n";
    }
    os.close();
    write_manifest(cfg, cfg.out);
    return 0;
}

int cmd_theory(const RunConfig& cfg) {
    const LipschitzSystem system = make_system(cfg.system);
    std::vector<int> deltas = parse_int_list(cfg.delta_list);
    if (deltas.empty()) throw std::invalid_argument("empty delta_list");
    const BoundReport report = rollout_error_experiment(system, deltas, RolloutMode::recursive,
                                                        cfg.n_rollouts, cfg.seeds[0]);
    ensure_dir(cfg.out);
    write_bound_report_csv(cfg.out + "/bound_report.csv", report, cfg.bound_scale);
    write_manifest(cfg, cfg.out);
    for (const auto& row : report.rows) {
        if (!bound_respected(row.measured_recursive, row.bound * cfg.bound_scale)) {
            throw BoundViolation("bound violated at delta " + std::to_string(row.delta) +
                                 ": measured " + format_double(row.measured_recursive) + " > bound " +
                                 format_double(row.bound * cfg.bound_scale));
        }
    }
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    const auto dirs = split_list(cfg.run_dirs);
    if (dirs.empty()) throw std::invalid_argument("report needs run_dirs=");
    std::set<std::string> envs;
    std::vector<std::vector<EvalPoint>> curves;
    for (const auto& dir : dirs) {
        const KeyValues man = load_config_file(dir + "/manifest.txt");
        auto it = man.find("env");
        if (it == man.end()) throw std::runtime_error("manifest in " + dir + " lacks env");
        envs.insert(it->second);
        auto sit = man.find("seeds");
        if (sit == man.end()) throw std::runtime_error("manifest in " + dir + " lacks seeds");
        for (const auto& seed : split_list(sit->second)) {
            curves.push_back(read_learning_curve_csv(dir + "/curve_seed" + seed + ".csv"));
        }
    }
    if (envs.size() != 1) {
        throw std::invalid_argument("run dirs cover different envs; refusing to merge");
    }
    if (curves.empty()) throw std::runtime_error("no curves found");
    for (const auto& c : curves) {
        if (c.size() != curves[0].size()) {
            throw std::runtime_error("curves have mismatched eval schedules");
        }
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (c[i].step != curves[0][i].step) {
                throw std::runtime_error("curves have mismatched eval steps");
            }
        }
    }
    ensure_dir(cfg.out);
    struct Metric {
        const char* name;
        double EvalPoint::*field;
    };
    const Metric metrics[] = {{"mean_return", &EvalPoint::mean_return},
                              {"alpha", &EvalPoint::alpha},
                              {"critic_loss", &EvalPoint::critic_loss},
                              {"actor_loss", &EvalPoint::actor_loss}};
    for (const auto& metric : metrics) {
        std::ofstream os(cfg.out + "/report_" + metric.name + ".csv");
        os << "x,mean,lo,hi\n";
        for (std::size_t i = 0; i < curves[0].size(); ++i) {
            double mean = 0.0, lo = 1e300, hi = -1e300;
            for (const auto& c : curves) {
                const double v = c[i].*(metric.field);
                mean += v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            mean /= static_cast<double>(curves.size());
            os << curves[0][i].step << "," << format_double(mean) << "," << format_double(lo) << ","
               << format_double(hi) << "\n";
        }
    }
    write_manifest(cfg, cfg.out);
    return 0;
}

int run_command(const std::string& command, const KeyValues& kv) {
    try {
        const RunConfig cfg = resolve_config(kv);
        if (command == "collect") return cmd_collect(cfg);
        if (command == "train-belief") return cmd_train_belief(cfg);
        if (command == "eval-belief") return cmd_eval_belief(cfg);
        if (command == "train-agent") return cmd_train_agent(cfg);
        if (command == "eval-agent") return cmd_eval_agent(cfg);
        if (command == "theory") return cmd_theory(cfg);
        if (command == "report") return cmd_report(cfg);
        std::cerr << "unknown command: " << command << "\n";
        return 1;
    } catch (const BoundViolation& e) {
        std::cerr << "assertion failed: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dblf
