#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dblf/cli.hpp"
#include "dblf/dataset.hpp"
#include "dblf/sac.hpp"

using namespace dblf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dblf_cli_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return sub.empty() ? path.string() : (path / sub).string();
    }
};

std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

long count_lines(const std::string& p) {
    std::ifstream is(p);
    long n = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("paper preset resolves to the published hyperparameters (golden manifest)") {
    const RunConfig cfg = resolve_config({{"preset", "paper"}});
    auto num = [&](const char* key) { return std::stod(cfg.echo.at(key)); };
    CHECK(cfg.echo.at("epochs") == "1000");
    CHECK(cfg.echo.at("belief_batch") == "256");
    CHECK(cfg.echo.at("dfbt_heads") == "4");
    CHECK(cfg.echo.at("dfbt_layers") == "10");
    CHECK(cfg.echo.at("dfbt_hidden") == "256");
    CHECK(num("dfbt_dropout") == 0.1);
    CHECK(num("belief_lr") == 1e-4);
    CHECK(num("belief_wd") == 1e-4);
    CHECK(num("belief_beta1") == 0.9);
    CHECK(num("belief_beta2") == 0.999);
    CHECK(cfg.echo.at("belief_optimizer") == "adamw");
    CHECK(cfg.echo.at("n_step") == "8");
    CHECK(num("lr_actor") == 3e-4);
    CHECK(num("lr_critic") == 1e-3);
    CHECK(num("lr_alpha") == 1e-3);
    CHECK(cfg.echo.at("actor_freq") == "2");
    CHECK(cfg.echo.at("critic_freq") == "1");
    CHECK(num("tau") == 5e-3);
    CHECK(cfg.echo.at("sac_batch") == "256");
    CHECK(cfg.echo.at("sac_hidden") == "256");
    CHECK(cfg.echo.at("sac_activation") == "relu");
    CHECK(cfg.echo.at("sac_optimizer") == "adam");
}

TEST_CASE("config invariants and unknown keys are rejected") {
    CHECK_THROWS_AS(resolve_config({{"n_step", "9"}, {"delta_max", "8"}}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config({{"bogus_key", "1"}}), std::invalid_argument);
    CHECK(run_command("theory", {{"bogus_key", "1"}}) == 1);  // usage error
    CHECK(run_command("nonsense", {}) == 1);
    // delay-free configs do not trip the N <= delta invariant
    const RunConfig ok =
        resolve_config({{"delay_kind", "none"}, {"n_step", "8"}, {"delta_max", "0"}});
    CHECK(ok.delay_kind == "none");
}

TEST_CASE("config files parse key=value lines with comments") {
    TempDir tmp("cfgfile");
    {
        std::ofstream os(tmp.str("run.cfg"));
        os << "# comment\n"
           << "env = mass_spring_damper\n"
           << "delta_max=4   # trailing comment\n"
           << "\n"
           << "n_step = 2\n";
    }
    const KeyValues kv = load_config_file(tmp.str("run.cfg"));
    CHECK(kv.at("env") == "mass_spring_damper");
    CHECK(kv.at("delta_max") == "4");
    CHECK(kv.at("n_step") == "2");
}

TEST_CASE("cmd_theory: presets, report shape, determinism and the corrupt-bound hook") {
    TempDir tmp("theory");
    KeyValues kv{{"system", "exact_1d"}, {"delta_list", "1,2,4"}, {"out", tmp.str("a")}};
    CHECK(run_command("theory", kv) == 0);

    KeyValues kvx{{"system", "expansive_1d"},
                  {"delta_list", "1,2,4,8,16,20"},
                  {"out", tmp.str("b")},
                  {"seeds", "3"}};
    CHECK(run_command("theory", kvx) == 0);
    CHECK(count_lines(tmp.str("b") + "/bound_report.csv") == 7);  // header + 6 rows

    // byte-identical rerun
    const std::string first = slurp(tmp.str("b") + "/bound_report.csv");
    KeyValues kvy = kvx;
    kvy["out"] = tmp.str("c");
    CHECK(run_command("theory", kvy) == 0);
    CHECK(slurp(tmp.str("c") + "/bound_report.csv") == first);

    // fault injection: halving the bound must flip the exit code to 2
    KeyValues kvz = kvx;
    kvz["out"] = tmp.str("d");
    kvz["bound_scale"] = "0.5";
    CHECK(run_command("theory", kvz) == 2);
}

TEST_CASE("cmd_collect writes the dataset, the manifest echoes the config") {
    TempDir tmp("collect");
    KeyValues kv{{"env", "mass_spring_damper"}, {"mix", "random:1.0"}, {"n_transitions", "700"},
                 {"export_jsonl", "1"},         {"seeds", "5"},        {"out", tmp.str("ds")}};
    CHECK(run_command("collect", kv) == 0);
    const Dataset ds = load_dataset(tmp.str("ds") + "/dataset.dbtj");
    CHECK(ds.n_transitions() == 700);
    CHECK(count_lines(tmp.str("ds") + "/dataset.jsonl") == 700);

    const KeyValues manifest = load_config_file(tmp.str("ds") + "/manifest.txt");
    CHECK(manifest.at("env") == "mass_spring_damper");
    CHECK(manifest.at("mix") == "random:1.0");
    CHECK(manifest.at("n_transitions") == "700");
    CHECK(manifest.at("seeds") == "5");
    // every resolved key is echoed
    CHECK(manifest.count("tau") == 1);
    CHECK(manifest.count("dfbt_hidden") == 1);

    // non-random mixes demand a checkpoint
    KeyValues bad = kv;
    bad["mix"] = "random:0.5,medium:0.5";
    bad["out"] = tmp.str("bad");
    CHECK(run_command("collect", bad) == 1);
}

TEST_CASE("belief pipeline: train both kinds, eval curves, oracle zeros, byte-stable reruns") {
    TempDir tmp("belief");
    KeyValues collect{{"env", "mass_spring_damper"},
                      {"n_transitions", "3000"},
                      {"seeds", "2"},
                      {"out", tmp.str("ds")}};
    REQUIRE(run_command("collect", collect) == 0);

    KeyValues train{{"env", "mass_spring_damper"},
                    {"dataset", tmp.str("ds") + "/dataset.dbtj"},
                    {"belief", "dfbt,recursive"},
                    {"delta_max", "4"},
                    {"n_step", "4"},
                    {"epochs", "2"},
                    {"belief_steps_per_epoch", "4"},
                    {"belief_batch", "16"},
                    {"dfbt_hidden", "16"},
                    {"dfbt_layers", "1"},
                    {"dfbt_heads", "2"},
                    {"recursive_hidden", "16"},
                    {"seeds", "0"},
                    {"out", tmp.str("models")}};
    REQUIRE(run_command("train-belief", train) == 0);
    CHECK(fs::exists(tmp.str("models") + "/dfbt_seed0.dblf"));
    CHECK(fs::exists(tmp.str("models") + "/recursive_seed0.dblf"));
    CHECK(count_lines(tmp.str("models") + "/train_loss_dfbt_seed0.csv") == 3);

    KeyValues eval{{"env", "mass_spring_damper"},
                   {"dataset", tmp.str("ds") + "/dataset.dbtj"},
                   {"belief", "dfbt,recursive,oracle"},
                   {"delta_max", "4"},
                   {"n_step", "4"},
                   {"dfbt_hidden", "16"},
                   {"dfbt_layers", "1"},
                   {"dfbt_heads", "2"},
                   {"recursive_hidden", "16"},
                   {"belief_ckpt", tmp.str("models") + "/dfbt_seed0.dblf"},
                   {"recursive_ckpt", tmp.str("models") + "/recursive_seed0.dblf"},
                   {"max_eval_windows", "64"},
                   {"seeds", "0"},
                   {"out", tmp.str("eval")}};
    REQUIRE(run_command("eval-belief", eval) == 0);
    const std::string csv = tmp.str("eval") + "/belief_error.csv";
    CHECK(count_lines(csv) == 1 + 3 * 4);  // header + 3 methods x 4 horizons

    // oracle rows are exactly zero
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);
    long oracle_rows = 0;
    while (std::getline(is, line)) {
        if (line.find(",oracle,") != std::string::npos) {
            CHECK(line.find(",oracle,0,0,") != std::string::npos);
            ++oracle_rows;
        }
    }
    CHECK(oracle_rows == 4);

    const std::string bytes = slurp(csv);
    KeyValues again = eval;
    again["out"] = tmp.str("eval2");
    REQUIRE(run_command("eval-belief", again) == 0);
    CHECK(slurp(tmp.str("eval2") + "/belief_error.csv") == bytes);

    // dataset/env mismatch is refused
    KeyValues mismatch = eval;
    mismatch["env"] = "pendulum";
    mismatch["out"] = tmp.str("eval3");
    CHECK(run_command("eval-belief", mismatch) == 1);
}

TEST_CASE("agent pipeline: steps=0, short run, anchors, aggregate and report") {
    TempDir tmp("agent");

    // steps = 0: empty curve, success
    KeyValues zero{{"env", "mass_spring_damper"}, {"delay_kind", "constant"}, {"delta_max", "2"},
                   {"n_step", "2"},               {"belief", "oracle"},       {"steps", "0"},
                   {"seeds", "0"},                {"sac_hidden", "16"},       {"out", tmp.str("zero")}};
    REQUIRE(run_command("train-agent", zero) == 0);
    CHECK(count_lines(tmp.str("zero") + "/curve_seed0.csv") == 1);  // header only

    // a short real run over two seeds
    KeyValues run{{"env", "mass_spring_damper"},
                  {"delay_kind", "constant"},
                  {"delta_max", "2"},
                  {"n_step", "2"},
                  {"belief", "oracle"},
                  {"steps", "500"},
                  {"warmup_steps", "100"},
                  {"eval_interval", "250"},
                  {"eval_episodes", "2"},
                  {"sac_hidden", "16"},
                  {"sac_batch", "16"},
                  {"seeds", "0,1"},
                  {"out", tmp.str("run")}};
    REQUIRE(run_command("train-agent", run) == 0);
    CHECK(count_lines(tmp.str("run") + "/curve_seed0.csv") == 3);  // header + 2 evals
    CHECK(count_lines(tmp.str("run") + "/curve_seed1.csv") == 3);
    CHECK(fs::exists(tmp.str("run") + "/agent_seed0_final.dblf"));

    // determinism: the rerun produces byte-identical curves
    KeyValues rerun = run;
    rerun["out"] = tmp.str("rerun");
    REQUIRE(run_command("train-agent", rerun) == 0);
    CHECK(slurp(tmp.str("rerun") + "/curve_seed0.csv") == slurp(tmp.str("run") + "/curve_seed0.csv"));

    // anchors
    KeyValues randa{{"env", "mass_spring_damper"}, {"policy", "random"},
                    {"eval_episodes", "3"},        {"seeds", "7"},
                    {"out", tmp.str("rand")}};
    REQUIRE(run_command("eval-agent", randa) == 0);
    CHECK(fs::exists(tmp.str("rand") + "/anchor.csv"));

    KeyValues saca{{"env", "mass_spring_damper"},
                   {"delay_kind", "none"},
                   {"policy", "checkpoint"},
                   {"actor_ckpt", tmp.str("run") + "/agent_seed0_final.dblf"},
                   {"eval_episodes", "2"},
                   {"seeds", "8"},
                   {"sac_hidden", "16"},
                   {"out", tmp.str("sacanchor")}};
    REQUIRE(run_command("eval-agent", saca) == 0);

    // aggregate table over the run dir
    KeyValues agg{{"env", "mass_spring_damper"},
                  {"run_dirs", tmp.str("run")},
                  {"anchors_random", tmp.str("rand") + "/anchor.csv"},
                  {"anchors_sac", tmp.str("sacanchor") + "/anchor.csv"},
                  {"out", tmp.str("agg")}};
    REQUIRE(run_command("eval-agent", agg) == 0);
    CHECK(count_lines(tmp.str("agg") + "/aggregate.csv") == 2);  // header + one run dir

    // report: verify the merged mean against a hand sum over the two seeds
    KeyValues rep{{"run_dirs", tmp.str("run")}, {"out", tmp.str("report")}};
    REQUIRE(run_command("report", rep) == 0);
    const auto c0 = read_learning_curve_csv(tmp.str("run") + "/curve_seed0.csv");
    const auto c1 = read_learning_curve_csv(tmp.str("run") + "/curve_seed1.csv");
    std::ifstream ris(tmp.str("report") + "/report_mean_return.csv");
    std::string line;
    std::getline(ris, line);  // header
    for (std::size_t i = 0; i < c0.size(); ++i) {
        REQUIRE(std::getline(ris, line));
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        long x = 0;
        double mean = 0, lo = 0, hi = 0;
        ss >> x >> mean >> lo >> hi;
        CHECK(x == c0[i].step);
        CHECK(mean == doctest::Approx((c0[i].mean_return + c1[i].mean_return) / 2.0).epsilon(1e-12));
        CHECK(lo == std::min(c0[i].mean_return, c1[i].mean_return));
        CHECK(hi == std::max(c0[i].mean_return, c1[i].mean_return));
    }

    // single run dir with a single seed: lo = hi = mean
    KeyValues one{{"env", "mass_spring_damper"}, {"delay_kind", "none"}, {"belief", "oracle"},
                  {"steps", "300"},              {"warmup_steps", "100"}, {"eval_interval", "150"},
                  {"eval_episodes", "2"},        {"sac_hidden", "16"},   {"sac_batch", "16"},
                  {"seeds", "3"},                {"out", tmp.str("one")}};
    REQUIRE(run_command("train-agent", one) == 0);
    KeyValues rep1{{"run_dirs", tmp.str("one")}, {"out", tmp.str("report1")}};
    REQUIRE(run_command("report", rep1) == 0);
    std::ifstream r1(tmp.str("report1") + "/report_mean_return.csv");
    std::getline(r1, line);
    while (std::getline(r1, line)) {
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        long x = 0;
        double mean = 0, lo = 0, hi = 0;
        ss >> x >> mean >> lo >> hi;
        CHECK(lo == mean);
        CHECK(hi == mean);
    }

    // N-sweep fans out into one run dir per N
    KeyValues sweep = run;
    sweep["n_sweep"] = "1,2";
    sweep["steps"] = "300";
    sweep["seeds"] = "0";
    sweep["out"] = tmp.str("sweep");
    REQUIRE(run_command("train-agent", sweep) == 0);
    CHECK(fs::exists(tmp.str("sweep") + "/N1/curve_seed0.csv"));
    CHECK(fs::exists(tmp.str("sweep") + "/N2/curve_seed0.csv"));
    KeyValues agg2{{"env", "mass_spring_damper"},
                   {"run_dirs", tmp.str("sweep") + "/N1," + tmp.str("sweep") + "/N2"},
                   {"anchors_random", tmp.str("rand") + "/anchor.csv"},
                   {"anchors_sac", tmp.str("sacanchor") + "/anchor.csv"},
                   {"out", tmp.str("agg2")}};
    REQUIRE(run_command("eval-agent", agg2) == 0);
    CHECK(count_lines(tmp.str("agg2") + "/aggregate.csv") == 3);  // header + 2 rows

    // disjoint envs are refused by report
    KeyValues pend{{"env", "pendulum"}, {"delay_kind", "none"}, {"belief", "oracle"},
                   {"steps", "0"},      {"seeds", "0"},         {"sac_hidden", "16"},
                   {"out", tmp.str("pendrun")}};
    REQUIRE(run_command("train-agent", pend) == 0);
    KeyValues badrep{{"run_dirs", tmp.str("run") + "," + tmp.str("pendrun")},
                     {"out", tmp.str("badrep")}};
    CHECK(run_command("report", badrep) == 1);
}

TEST_CASE("the installed binary front-end round-trips a theory run") {
#ifdef DBLF_CLI_PATH
    TempDir tmp("bin");
    const std::string cmd = std::string(DBLF_CLI_PATH) +
                            " theory --set system=contraction_1d --set delta_list=1,4,16 --out " +
                            tmp.str("t") + " >/dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(tmp.str("t") + "/bound_report.csv"));
    const std::string bad = std::string(DBLF_CLI_PATH) +
                            " theory --set system=contraction_1d --set bound_scale=0.01 --out " +
                            tmp.str("t2") + " >/dev/null 2>&1";
    const int rc = std::system(bad.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
#endif
}
