#pragma once

#include "invdiff/diffusion.hpp"
#include "invdiff/grouper.hpp"

#include <array>
#include <string>
#include <vector>

namespace invdiff {

struct InvTrainConfig {
    double delta = 0.3;
    double lambda = 1.0;
    int steps = 2000;
    int batch = 512;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool harden = false; // use hard one-hot groups instead of soft W
    int width = 64;      // guidance hidden width
};

struct InvariantLossResult {
    double loss = 0.0;
    double erm = 0.0;
    double var = 0.0;
    Var loss_var;
    int groups_used = 0; // environments with batch mass >= 1e-6
};

// Eq.-style residual r_n = ||eps - eps_theta(x_t,t,y) + delta G(x_t,Phi(y),t)||^2
// with fresh (t, eps) per sample; loss = mean(r) + lambda * Var_e(L_e),
// L_e weighted by the batch rows of W. theta enters the tape but only
// (psi, Phi) are stepped by the caller.
InvariantLossResult invariant_loss(Tape& tape, Denoiser& den, Guidance& g,
                                   const Matrix& x0,
                                   const std::vector<int>& y,
                                   const Matrix& w_rows,
                                   const NoiseSchedule& sched, double delta,
                                   double lambda, Rng& rng);

struct InvTrainStats {
    std::vector<std::array<double, 4>> log; // step, erm, var, loss
    double initial_var = 0.0;
    double final_var = 0.0;
    bool unstable = false; // sustained loss blowup or a numeric abort
};

// Adam over the guidance net and encoder only; the denoiser is frozen
// (bit-identical before and after).
InvTrainStats train_guidance(Denoiser& den, Guidance& g,
                             const BiasedDataset& data,
                             const GroupAssignment& groups,
                             const NoiseSchedule& sched,
                             const InvTrainConfig& cfg);

void write_invtrain_log(const InvTrainStats& stats, const std::string& path);

} // namespace invdiff
