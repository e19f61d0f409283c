#pragma once

#include "invdiff/config.hpp"
#include "invdiff/metrics.hpp"

#include <string>
#include <vector>

namespace invdiff {

// A prior-stage artifact is missing; message names the stage to run first.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalReport {
    std::string model; // "biased" or "invdiff"
    double bias_mean = 0.0;
    double bias_std = 0.0;
    double frechet = 0.0;
    double recall = 0.0;
    double fidelity = 0.0;
    bool unstable = false; // propagated from guidance training
};

// Each stage reads prior artifacts from run_dir and writes its own there.
void stage_synth(const RunConfig& cfg, const std::string& run_dir);
void stage_pretrain(const RunConfig& cfg, const std::string& run_dir);
void stage_infer_groups(const RunConfig& cfg, const std::string& run_dir);
void stage_train_guidance(const RunConfig& cfg, const std::string& run_dir,
                          bool harden = false);
void stage_sample(const RunConfig& cfg, const std::string& run_dir,
                  const std::string& model, int y, std::uint64_t seed);
EvalReport stage_evaluate(const RunConfig& cfg, const std::string& run_dir,
                          const std::string& model);
void stage_report(const std::vector<std::string>& run_dirs,
                  const std::string& csv_path);

// One child run per axis value (shared seeds), plus a combined CSV.
void sweep(const RunConfig& base, const std::string& axis,
           const std::vector<double>& values, const std::string& out_dir);

// Full pipeline: synth, pretrain, infer-groups, train-guidance, and both
// evaluations.
void run_all(const RunConfig& cfg, const std::string& run_dir);

} // namespace invdiff
