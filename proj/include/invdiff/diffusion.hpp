#pragma once

#include "invdiff/dataset.hpp"
#include "invdiff/models.hpp"
#include "invdiff/optim.hpp"

#include <string>
#include <vector>

namespace invdiff {

// Variance schedule tables. beta is linear between beta_min and beta_max
// inclusive; alpha_bar is the running product; sigma2 follows the posterior
// variance convention with alpha_bar_0 := 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma2;

    // 1-based accessors
    double beta_at(int t) const { return beta.at(t - 1); }
    double alpha_at(int t) const { return alpha.at(t - 1); }
    double alpha_bar_at(int t) const { return alpha_bar.at(t - 1); }
    double sigma_at(int t) const { return std::sqrt(sigma2.at(t - 1)); }
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps,
                     const NoiseSchedule& sched);

struct DdpmLossResult {
    double loss = 0.0;
    Eigen::VectorXd residuals; // per-sample ||eps - eps_hat||^2
    Var loss_var;              // tape node, for backward
};

// Draws (t, eps) per sample, runs the denoiser on the tape and returns the
// mean squared noise residual. p_drop replaces y by the null label per
// sample (classifier-free training). The tape must outlive the result.
DdpmLossResult ddpm_loss(Tape& tape, Denoiser& den, const Matrix& x0,
                         const std::vector<int>& y,
                         const NoiseSchedule& sched, Rng& rng,
                         double p_drop = 0.0);

// Ancestral DDPM sampling with classifier-free and invariant guidance.
// Deterministic under seed; guidance may be null.
Matrix sample(int n, int y, Denoiser& den, Guidance* guidance, double delta,
              double w_cfg, const NoiseSchedule& sched, std::uint64_t seed);

struct PretrainConfig {
    int steps = 2000;
    int batch = 64;
    double lr = 1e-3;
    double p_drop = 0.1;
    std::uint64_t seed = 0;
};

struct TrainStats {
    std::vector<std::pair<int, double>> loss_curve; // (step, loss)
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Adam on the DDPM loss over minibatches of the biased dataset.
TrainStats pretrain_biased(Denoiser& den, const BiasedDataset& data,
                           const NoiseSchedule& sched,
                           const PretrainConfig& cfg);

void write_loss_curve(const std::vector<std::pair<int, double>>& curve,
                      const std::string& path);

} // namespace invdiff
