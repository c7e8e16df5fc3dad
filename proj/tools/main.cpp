#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dblf/cli.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out;
    std::string preset;
    std::string seeds;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config, "key=value config file");
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--preset", args.preset, "model scale preset")
        ->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--seed,--seeds", args.seeds, "comma-separated seed list");
    sub->add_option("--set", args.sets, "override any config key (key=value, repeatable)");
}

dblf::KeyValues build_kv(const CommonArgs& args) {
    dblf::KeyValues kv;
    if (!args.config.empty()) kv = dblf::load_config_file(args.config);
    if (!args.preset.empty()) kv["preset"] = args.preset;
    if (!args.seeds.empty()) kv["seeds"] = args.seeds;
    if (!args.out.empty()) kv["out"] = args.out;
    for (const auto& s : args.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value, got " + s);
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"delayed-RL toolkit: belief forecasting, delayed SAC and bound verification"};
    app.require_subcommand(1);

    const std::vector<std::string> commands = {"collect",    "train-belief", "eval-belief",
                                               "train-agent", "eval-agent",   "theory",
                                               "report"};
    std::vector<CommonArgs> args(commands.size());
    std::string picked;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i]);
        add_common(sub, args[i]);
        sub->callback([&, i]() { picked = commands[i]; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (commands[i] == picked) {
            try {
                return dblf::run_command(picked, build_kv(args[i]));
            } catch (const std::exception& e) {
                fprintf(stderr, "error: %s\n", e.what());
                return 1;
            }
        }
    }
    return 1;
}
