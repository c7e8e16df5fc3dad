#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dblf {

// Plain-text key=value config; '#' starts a comment. Flags override file
// entries; the fully resolved map is echoed into every run manifest.
using KeyValues = std::map<std::string, std::string>;

KeyValues load_config_file(const std::string& path);

struct RunConfig {
    // experiment identity
    std::string env = "pendulum";
    std::string delay_kind = "constant";  // constant | uniform | none
    int delta_max = 8;
    std::string belief = "dfbt";  // dfbt | recursive | oracle (comma list for eval-belief)
    std::string preset = "desk";  // desk | paper
    std::string loss = "mse";     // mse | gaussian_nll
    int n_step = 8;
    std::vector<std::uint64_t> seeds{0};
    long steps = 100000;
    int epochs = 20;
    long n_transitions = 50000;
    std::string out = "out";

    // file inputs
    std::string dataset;
    std::string belief_ckpt, recursive_ckpt, actor_ckpt;
    std::string medium_ckpt, expert_ckpt;
    std::string mix = "random:1.0";
    std::string anchors_random, anchors_sac;
    std::string run_dirs;  // comma list (eval-agent, report)
    std::string policy = "checkpoint";  // checkpoint | random (eval-agent)
    int export_jsonl = 0;

    // theory
    std::string system = "expansive_1d";
    std::string delta_list = "1,2,4,8,16,32";
    long n_rollouts = 256;
    double bound_scale = 1.0;  // test hook: scales the asserted bound

    // env options
    double noise_prob = 0.0, noise_scale = 0.01;
    double msd_stiffness = 4.0, msd_damping = 0.5;
    int msd_dirac_init = 0;
    double gamma = 0.99;

    // belief model/training (preset-resolved)
    int dfbt_hidden = 64, dfbt_layers = 2, dfbt_heads = 4, dfbt_ffn_mult = 2;
    double dfbt_dropout = 0.1;
    double belief_lr = 1e-3, belief_wd = 1e-4, belief_beta1 = 0.9, belief_beta2 = 0.999;
    int belief_batch = 128, belief_steps_per_epoch = 150;
    double holdout_frac = 0.1;
    long max_eval_windows = 2000;
    int recursive_hidden = 64;

    // agent (preset-resolved)
    int sac_hidden = 64, sac_batch = 64;
    double lr_actor = 3e-4, lr_critic = 1e-3, lr_alpha = 1e-3, tau = 5e-3;
    int actor_freq = 2, critic_freq = 1, warmup_steps = 1000;
    long buffer_capacity = 100000;
    int eval_interval = 5000, eval_episodes = 5;
    std::string checkpoint_steps;  // comma list of env steps
    int strict_paper_sign = 0;
    int twin_critics = 1;
    std::string n_sweep;  // comma list; train-agent fans out into out/N<k>/

    KeyValues echo;  // every resolved field, written to the manifest
};

RunConfig resolve_config(const KeyValues& kv);
void write_manifest(const RunConfig& cfg, const std::string& dir);

int cmd_collect(const RunConfig& cfg);
int cmd_train_belief(const RunConfig& cfg);
int cmd_eval_belief(const RunConfig& cfg);
int cmd_train_agent(const RunConfig& cfg);
int cmd_eval_agent(const RunConfig& cfg);
int cmd_theory(const RunConfig& cfg);
int cmd_report(const RunConfig& cfg);

// Dispatch with exceptions mapped to exit codes: 0 success, 1 usage/config
// error, 2 assertion/bound violation.
int run_command(const std::string& command, const KeyValues& kv);

std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace dblf
