// Command-line front end: infodiff <command> --config FILE [--seed S] [--out DIR] [--threads T]

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "infodiff/experiments.hpp"
#include "infodiff/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Information-theoretic diffusion likelihood experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
    bool force = false;
    app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Overrides the config seed");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");
    app.add_flag("--force", force, "Overwrite a report produced by a different config");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "Generate a synthetic dataset and training draws"},
        {"train", "Train a learned predictor with the DCE loss"},
        {"estimate", "Estimate (conditional) negative log-likelihoods"},
        {"variance-study", "Compare estimator variances at matched budgets"},
        {"audit", "Score matched and mismatched prompt/response pairs"},
        {"verify-identities", "Check the exact identities on small instances"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : infodiff::kExitConfig;
    }

    try {
        if (threads > 0) infodiff::set_worker_threads(threads);
        infodiff::RunContext ctx;
        try {
            ctx.config = infodiff::Json::parse(infodiff::read_file(config_path));
        } catch (const infodiff::Json::exception& e) {
            infodiff::fail(infodiff::ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
        }
        if (!ctx.config.is_object()) infodiff::fail(infodiff::ErrorCode::kConfig, "config must be a JSON object");
        if (seed) ctx.config["seed"] = *seed;
        if (ctx.config.contains("seed")) {
            if (!ctx.config["seed"].is_number_unsigned()) {
                infodiff::fail(infodiff::ErrorCode::kConfig, "seed must be a nonnegative integer");
            }
            ctx.seed = ctx.config["seed"].get<std::uint64_t>();
        }
        ctx.config_dir = std::filesystem::path(config_path).parent_path().string();
        ctx.out_dir = out_dir;
        ctx.force = force;
        ctx.log = &std::cout;
        return infodiff::run_command(app.get_subcommands().front()->get_name(), ctx);
    } catch (const infodiff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return infodiff::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return infodiff::kExitFailure;
    }
}
