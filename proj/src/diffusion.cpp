#include "invdiff/diffusion.hpp"

#include <cmath>
#include <fstream>

namespace invdiff {

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 10)
        throw std::invalid_argument("make_schedule: T must be >= 10");
    if (!(beta_min > 0.0) || beta_min > beta_max || !(beta_max < 1.0))
        throw std::invalid_argument(
            "make_schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma2.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        s.beta[i] = beta_min + frac * (beta_max - beta_min);
        s.alpha[i] = 1.0 - s.beta[i];
        double prev = prod;
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.sigma2[i] = (1.0 - prev) / (1.0 - prod) * s.beta[i];
    }
    return s;
}

Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps,
                     const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw std::out_of_range("forward_noise: t=" + std::to_string(t) +
                                " outside [1," + std::to_string(sched.T) +
                                "]");
    if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
        throw ShapeError("forward_noise: eps shape mismatch");
    double ab = sched.alpha_bar_at(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

DdpmLossResult ddpm_loss(Tape& tape, Denoiser& den, const Matrix& x0,
                         const std::vector<int>& y,
                         const NoiseSchedule& sched, Rng& rng,
                         double p_drop) {
    Eigen::Index n = x0.rows();
    if (n == 0)
        throw std::invalid_argument("ddpm_loss: empty batch");
    std::vector<int> t(static_cast<std::size_t>(n));
    std::vector<int> labels(y);
    Matrix eps = rng.normal_matrix(n, x0.cols());
    Matrix x_t(n, x0.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        t[static_cast<std::size_t>(i)] = rng.uniform_int(1, sched.T);
        double ab = sched.alpha_bar_at(t[static_cast<std::size_t>(i)]);
        x_t.row(i) =
            std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
        if (p_drop > 0.0 && rng.uniform() < p_drop)
            labels[static_cast<std::size_t>(i)] = kNullLabel;
    }
    Var pred = den.predict(tape, tape.constant(x_t), t, labels);
    Var diff = tape.sub(tape.constant(eps), pred);
    Var res = tape.row_sum(tape.square(diff)); // n x 1
    Var loss = tape.mean(res);

    DdpmLossResult out;
    out.loss = tape.scalar(loss);
    out.residuals = tape.val(res).col(0);
    out.loss_var = loss;
    return out;
}

Matrix sample(int n, int y, Denoiser& den, Guidance* guidance, double delta,
              double w_cfg, const NoiseSchedule& sched, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "sample");
    Matrix x = rng.normal_matrix(n, den.d());
    std::vector<int> t_batch(static_cast<std::size_t>(n));
    for (int t = sched.T; t >= 1; --t) {
        std::fill(t_batch.begin(), t_batch.end(), t);
        Matrix eps =
            effective_noise(den, guidance, x, t_batch, y, delta, w_cfg);
        double a = sched.alpha_at(t);
        double ab = sched.alpha_bar_at(t);
        x = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps) / std::sqrt(a);
        if (t > 1)
            x += sched.sigma_at(t) * rng.normal_matrix(n, den.d());
    }
    return x;
}

TrainStats pretrain_biased(Denoiser& den, const BiasedDataset& data,
                           const NoiseSchedule& sched,
                           const PretrainConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, "pretrain");
    Adam opt(AdamConfig{cfg.lr});
    auto params = den.params();
    opt.init(params);

    int n = static_cast<int>(data.n());
    TrainStats stats;
    for (int step = 0; step < cfg.steps; ++step) {
        Matrix xb(cfg.batch, data.d());
        std::vector<int> yb(static_cast<std::size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            int i = rng.uniform_int(0, n - 1);
            xb.row(b) = data.samples.row(i);
            yb[static_cast<std::size_t>(b)] = data.y[static_cast<std::size_t>(i)];
        }
        Tape tape;
        DdpmLossResult r =
            ddpm_loss(tape, den, xb, yb, sched, rng, cfg.p_drop);
        if (!std::isfinite(r.loss))
            throw NumericError("pretrain: non-finite loss at step " +
                               std::to_string(step));
        tape.backward(r.loss_var);
        opt.step(params);
        if (step == 0)
            stats.initial_loss = r.loss;
        stats.final_loss = r.loss;
        if (step % 10 == 0 || step + 1 == cfg.steps)
            stats.loss_curve.emplace_back(step, r.loss);
    }
    return stats;
}

void write_loss_curve(const std::vector<std::pair<int, double>>& curve,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("write_loss_curve: cannot open " + path);
    out << "step,loss\n";
    out.precision(17);
    for (const auto& [step, loss] : curve)
        out << step << "," << loss << "\n";
}

} // namespace invdiff
