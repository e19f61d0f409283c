#pragma once

#include "invdiff/rng.hpp"
#include "invdiff/tape.hpp"

#include <functional>
#include <vector>

namespace invdiff {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. Bound to a fixed parameter list at
// init(); step() applies the update and zeroes the grads.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void init(const std::vector<Param*>& params);
    void step(const std::vector<Param*>& params);

    long step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long step_count_ = 0;
    bool initialized_ = false;
    std::vector<Matrix> m_, v_;
};

struct GradCheckResult {
    bool pass = false;
    double worst_rel_err = 0.0;
    std::string worst_param;
};

// Central finite differences on a sample of coordinates. loss_fn must
// evaluate the loss at the current param values; when accumulate_grads is
// true it must also run backward so Param::grad is populated.
GradCheckResult gradcheck(const std::function<double(bool accumulate_grads)>& loss_fn,
                          const std::vector<Param*>& params, double h,
                          double tol, Rng& rng,
                          int coords_per_param = 8);

} // namespace invdiff
