#include "invdiff/optim.hpp"

#include <cmath>

namespace invdiff {

void Adam::init(const std::vector<Param*>& params) {
    m_.clear();
    v_.clear();
    for (const Param* p : params) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
    step_count_ = 0;
    initialized_ = true;
}

void Adam::step(const std::vector<Param*>& params) {
    if (!initialized_)
        throw NumericError("adam: step() before init()");
    if (params.size() != m_.size())
        throw ShapeError("adam: parameter list changed since init()");
    ++step_count_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (p.grad.rows() != m_[i].rows() || p.grad.cols() != m_[i].cols())
            throw ShapeError("adam: grad shape mismatch for " + p.name);
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
        v_[i] = cfg_.beta2 * v_[i] +
                (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
        Matrix mhat = m_[i] / bc1;
        Matrix vhat = v_[i] / bc2;
        p.value -= cfg_.lr * mhat.cwiseQuotient(
                                 Matrix(vhat.cwiseSqrt().array() + cfg_.eps));
        if (!p.value.allFinite())
            throw NumericError("adam: non-finite parameter " + p.name);
        p.zero_grad();
    }
}

GradCheckResult gradcheck(const std::function<double(bool)>& loss_fn,
                          const std::vector<Param*>& params, double h,
                          double tol, Rng& rng, int coords_per_param) {
    for (Param* p : params)
        p->zero_grad();
    double base = loss_fn(true);
    if (!std::isfinite(base))
        throw NumericError("gradcheck: non-finite loss");

    GradCheckResult res;
    res.pass = true;
    for (Param* p : params) {
        int n = static_cast<int>(p->size());
        int probes = std::min(coords_per_param, n);
        for (int k = 0; k < probes; ++k) {
            int c = rng.uniform_int(0, n - 1);
            double* slot = p->value.data() + c;
            double analytic = *(p->grad.data() + c);
            double orig = *slot;
            *slot = orig + h;
            double up = loss_fn(false);
            *slot = orig - h;
            double down = loss_fn(false);
            *slot = orig;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("gradcheck: non-finite perturbed loss");
            double numeric = (up - down) / (2.0 * h);
            double rel = std::abs(analytic - numeric) /
                         std::max(1.0, std::abs(numeric));
            if (rel > res.worst_rel_err) {
                res.worst_rel_err = rel;
                res.worst_param = p->name;
            }
        }
    }
    for (Param* p : params)
        p->zero_grad();
    res.pass = res.worst_rel_err <= tol;
    return res;
}

} // namespace invdiff
