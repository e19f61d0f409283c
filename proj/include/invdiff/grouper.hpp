#pragma once

#include "invdiff/dataset.hpp"
#include "invdiff/diffusion.hpp"

#include <string>
#include <vector>

namespace invdiff {

// Row-stochastic soft assignment of samples to environments.
struct GroupAssignment {
    Matrix logits;          // N x E
    Matrix W;               // row-softmax of logits
    int E = 0;
    double omega_disp = 1.0;
    double J_final = 0.0;
    std::uint64_t seed = 0;

    std::vector<int> harden() const; // argmax per row
};

// Frozen-model diffusion loss per sample, Monte Carlo over shared (t, eps)
// draws so differences between samples are not masked by draw noise.
struct PerSampleLoss {
    Eigen::VectorXd values; // length N, each >= 0
    int draws = 0;
    std::uint64_t seed = 0;
};

PerSampleLoss per_sample_loss(const BiasedDataset& data, Denoiser& den,
                              const NoiseSchedule& sched, int draws,
                              std::uint64_t seed);

struct GroupObjective {
    double J = 0.0;        // Var_e(L_e) + omega * smoothmin_e(L_e)
    double variance = 0.0;
    double smooth_min = 0.0;
    double exact_min = 0.0;
    Eigen::VectorXd env_loss; // L_e per environment
};

// L_e = (sum_n W_ne l_n) / max(sum_n W_ne, 1e-8); Var is the mass-weighted
// between-group variance sum_e (N_e/N)(L_e - mean)^2 (equal to the plain
// variance over the E values whenever group masses are equal); min enters
// smoothed (-tau log sum exp(-L/tau), tau = 0.01) so non-minimal
// environments still get gradient.
GroupObjective group_objective(const Matrix& W, const Eigen::VectorXd& losses,
                               double omega_disp);

// Same objective built on the tape (W row-stochastic), so J can be
// differentiated with respect to whatever W was computed from.
Var group_objective_tape(Tape& tape, Var W, const Eigen::VectorXd& losses,
                         double omega_disp);

struct InferGroupsConfig {
    int E = 4;
    // On realistic per-sample losses the min term scales with the full loss
    // mean while the between-group variance scales with the (much smaller)
    // cluster gap, so a large omega makes near-uniform assignments dominate
    // everything gradient ascent can reach and no splitting survives. 0.05
    // keeps groups populated while letting the variance term separate the
    // loss clusters.
    double omega_disp = 0.05;
    int steps = 500;
    double lr = 5e-2;
    std::uint64_t seed = 0;
};

// Gradient ascent (Adam) on the objective over row-softmax logits.
GroupAssignment infer_groups(const Eigen::VectorXd& losses,
                             const InferGroupsConfig& cfg);

// Best-permutation agreement between hard-assigned inferred groups and the
// true (y, s) cells. Injective mapping search; feasible for E <= 8.
double group_alignment(const GroupAssignment& ga, const std::vector<int>& y,
                       const std::vector<int>& s);

void save_groups(const GroupAssignment& ga, const std::string& path,
                 std::uint64_t config_hash);
GroupAssignment load_groups(const std::string& path);

} // namespace invdiff
