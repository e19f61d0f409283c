#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace invdiff {

struct RunConfig {
    struct Dataset {
        int n = 4000;
        double rho = 0.95;
        double sigma = 0.5;
        std::uint64_t seed = 1;
        int n_test = 2000;
    } dataset;

    struct Schedule {
        int T = 100;
        double beta_min = 1e-4;
        double beta_max = 0.08;
    } schedule;

    struct Pretrain {
        int steps = 2000;
        double lr = 1e-3;
        int batch = 64;
        double p_drop = 0.1;
    } pretrain;

    struct Grouper {
        int E = 4;
        double omega = 0.05;
        int steps = 500;
        double lr = 5e-2;
        int M = 8;
    } grouper;

    struct InvTrain {
        double delta = 0.3;
        double lambda = 1.0;
        int steps = 2000;
        double lr = 1e-3;
        int batch = 512;
        int width = 64;
    } invtrain;

    struct Eval {
        int samples_per_prompt = 128;
        int seeds = 5;
        int k = 3;
    } eval;

    std::uint64_t seed = 1; // master seed; stages derive substreams

    // canonical JSON text (defaults filled in) and its hash
    std::string canonical() const;
    std::uint64_t hash() const;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);

    // all range violations, empty when valid
    std::vector<std::string> validate() const;

    // numeric field access by dotted path, for sweeps
    double get_field(const std::string& path) const;
    void set_field(const std::string& path, double value);
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace invdiff
