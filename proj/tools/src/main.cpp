#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/pipeline.hpp"

namespace {

struct Args {
    std::string config_path;
    std::string workspace;
    std::vector<std::string> sets;
    int jobs = 1;
};

uattr::RunConfig build_config(const Args& args) {
    std::string text = "{}";
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) uattr::fail(uattr::ErrorKind::io, "cannot open config: " + args.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    std::vector<std::pair<std::string, std::string>> sets;
    for (const auto& s : args.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            uattr::fail(uattr::ErrorKind::validation, "override must look like path=value: " + s);
        sets.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return uattr::parse_run_config(uattr::apply_overrides_json(text, sets));
}

void add_common(CLI::App* cmd, Args& args) {
    cmd->add_option("-c,--config", args.config_path, "JSON run configuration file");
    cmd->add_option("-w,--workspace", args.workspace,
                    "workspace root (default: $UATTR_WORKSPACE, then cwd)");
    cmd->add_option("-s,--set", args.sets, "dotted-path override, e.g. unlearn.alpha=0.02");
    cmd->add_option("-j,--jobs", args.jobs, "thread fan-out for independent work items")
        ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attribution-by-unlearning pipeline for a toy diffusion model"};
    app.require_subcommand(1);
    Args args;

    CLI::App* generate = app.add_subcommand("generate", "synthesize the training dataset");
    CLI::App* train = app.add_subcommand("train", "train the base denoiser");
    CLI::App* fisher = app.add_subcommand("fisher", "estimate the diagonal Fisher at the base model");
    CLI::App* unlearn = app.add_subcommand("unlearn", "synthesize queries and unlearn each one");
    CLI::App* attribute = app.add_subcommand("attribute", "score training examples per query");
    CLI::App* evaluate = app.add_subcommand("evaluate", "leave-K-out retraining evaluation");
    CLI::App* report = app.add_subcommand("report", "aggregate results into markdown and charts");
    for (CLI::App* cmd : {generate, train, fisher, unlearn, attribute, evaluate, report})
        add_common(cmd, args);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto ws = uattr::resolve_workspace(args.workspace);
        const uattr::RunConfig cfg = build_config(args);
        if (generate->parsed()) uattr::cmd_generate(ws, cfg);
        else if (train->parsed()) uattr::cmd_train(ws, cfg);
        else if (fisher->parsed()) uattr::cmd_fisher(ws, cfg);
        else if (unlearn->parsed()) uattr::cmd_unlearn(ws, cfg, args.jobs);
        else if (attribute->parsed()) uattr::cmd_attribute(ws, cfg, args.jobs);
        else if (evaluate->parsed()) uattr::cmd_evaluate(ws, cfg, args.jobs);
        else if (report->parsed()) uattr::cmd_report(ws, cfg);
        return 0;
    } catch (const uattr::Error& e) {
        nlohmann::json err;
        err["error"] = {{"kind", e.kind_name()}, {"message", e.what()}};
        std::cout << err.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = {{"kind", "internal"}, {"message", e.what()}};
        std::cout << err.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
        return 1;
    }
}
