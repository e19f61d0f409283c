#include "invdiff/config.hpp"
#include "invdiff/pipeline.hpp"
#include "invdiff/tape.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitNumeric = 4;

invdiff::RunConfig load_config(const std::string& path, bool has_seed,
                               std::uint64_t seed) {
    invdiff::RunConfig cfg = path.empty()
                                 ? invdiff::RunConfig{}
                                 : invdiff::RunConfig::from_file(path);
    if (has_seed)
        cfg.seed = seed;
    auto violations = cfg.validate();
    if (!violations.empty()) {
        for (const auto& v : violations)
            std::cerr << "config: " << v << "\n";
        throw invdiff::ConfigError("invalid config");
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"InvDiff bias-mitigation pipeline on synthetic data"};
    app.require_subcommand(1);
    app.fallthrough(); // allow global --config/--out/--seed after the subcommand

    std::string config_path;
    std::string out_dir = "run";
    std::uint64_t seed_override = 0;
    bool has_seed = false;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out", out_dir, "run directory");
    auto* seed_opt =
        app.add_option("--seed", seed_override, "master seed override");

    auto* validate = app.add_subcommand("validate", "check a config file");
    auto* synth = app.add_subcommand("synth", "synthesize datasets");
    auto* pretrain =
        app.add_subcommand("pretrain", "pretrain the biased denoiser");
    auto* infer =
        app.add_subcommand("infer-groups", "infer the group assignment");
    bool harden = false;
    auto* train = app.add_subcommand("train-guidance",
                                     "train the invariant guidance module");
    train->add_flag("--harden", harden, "use hard one-hot groups");
    auto* sample_cmd = app.add_subcommand("sample", "draw samples");
    int sample_y = 0;
    std::uint64_t sample_seed = 0;
    std::string model = "biased";
    sample_cmd->add_option("--y", sample_y, "condition label");
    sample_cmd->add_option("--sample-seed", sample_seed, "sampling seed");
    sample_cmd->add_option("--model", model, "biased or invdiff");
    auto* evaluate = app.add_subcommand("evaluate", "compute the metrics");
    evaluate->add_option("--model", model, "biased or invdiff");
    auto* report = app.add_subcommand("report", "aggregate run reports");
    std::vector<std::string> report_dirs;
    report->add_option("--dirs", report_dirs, "run directories");
    auto* run = app.add_subcommand("run", "full pipeline");
    auto* sweep_cmd = app.add_subcommand("sweep", "sweep one config field");
    std::string axis;
    std::vector<double> values;
    sweep_cmd->add_option("--axis", axis, "dotted config field")->required();
    sweep_cmd->add_option("--values", values, "axis values")->required();

    CLI11_PARSE(app, argc, argv);
    has_seed = seed_opt->count() > 0;

    try {
        if (validate->parsed()) {
            if (config_path.empty()) {
                std::cerr << "validate: --config required\n";
                return kExitConfig;
            }
            invdiff::RunConfig cfg =
                invdiff::RunConfig::from_file(config_path);
            auto violations = cfg.validate();
            if (violations.empty()) {
                std::cout << "ok\n";
                return kExitOk;
            }
            for (const auto& v : violations)
                std::cout << "violation: " << v << "\n";
            return kExitConfig;
        }

        invdiff::RunConfig cfg =
            load_config(config_path, has_seed, seed_override);

        if (synth->parsed()) {
            invdiff::stage_synth(cfg, out_dir);
        } else if (pretrain->parsed()) {
            invdiff::stage_pretrain(cfg, out_dir);
        } else if (infer->parsed()) {
            invdiff::stage_infer_groups(cfg, out_dir);
        } else if (train->parsed()) {
            invdiff::stage_train_guidance(cfg, out_dir, harden);
        } else if (sample_cmd->parsed()) {
            invdiff::stage_sample(cfg, out_dir, model, sample_y,
                                  sample_seed);
        } else if (evaluate->parsed()) {
            invdiff::EvalReport rep =
                invdiff::stage_evaluate(cfg, out_dir, model);
            std::cout << "model=" << rep.model
                      << " bias=" << rep.bias_mean << "(" << rep.bias_std
                      << ")"
                      << " frechet=" << rep.frechet
                      << " recall=" << rep.recall
                      << " fidelity=" << rep.fidelity
                      << (rep.unstable ? " UNSTABLE" : "") << "\n";
        } else if (report->parsed()) {
            if (report_dirs.empty())
                report_dirs.push_back(out_dir);
            invdiff::stage_report(
                report_dirs,
                (std::filesystem::path(out_dir) / "summary.csv").string());
        } else if (run->parsed()) {
            invdiff::run_all(cfg, out_dir);
        } else if (sweep_cmd->parsed()) {
            invdiff::sweep(cfg, axis, values, out_dir);
        }
    } catch (const invdiff::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const invdiff::MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const invdiff::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
