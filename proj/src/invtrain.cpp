#include "invdiff/invtrain.hpp"

#include "invdiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace invdiff {

namespace {
constexpr double kBatchMassFloor = 1e-6;
}

InvariantLossResult invariant_loss(Tape& tape, Denoiser& den, Guidance& g,
                                   const Matrix& x0,
                                   const std::vector<int>& y,
                                   const Matrix& w_rows,
                                   const NoiseSchedule& sched, double delta,
                                   double lambda, Rng& rng) {
    Eigen::Index n = x0.rows();
    if (n == 0)
        throw std::invalid_argument("invariant_loss: empty batch");
    if (w_rows.rows() != n)
        throw ShapeError("invariant_loss: W rows do not match batch");

    std::vector<int> t(static_cast<std::size_t>(n));
    Matrix eps = rng.normal_matrix(n, x0.cols());
    Matrix x_t(n, x0.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        t[static_cast<std::size_t>(i)] = rng.uniform_int(1, sched.T);
        double ab = sched.alpha_bar_at(t[static_cast<std::size_t>(i)]);
        x_t.row(i) =
            std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
    }

    Var x_var = tape.constant(x_t);
    Var pred = den.predict(tape, x_var, t, y);
    Var resid = tape.sub(tape.constant(eps), pred);
    if (delta != 0.0)
        resid = tape.add(resid, tape.scale(g.predict(tape, x_var, t, y),
                                           delta));
    Var r = tape.row_sum(tape.square(resid)); // n x 1
    Var erm = tape.mean(r);

    // keep only environments with enough batch mass
    std::vector<int> used;
    for (Eigen::Index e = 0; e < w_rows.cols(); ++e)
        if (w_rows.col(e).sum() >= kBatchMassFloor)
            used.push_back(static_cast<int>(e));

    InvariantLossResult out;
    out.groups_used = static_cast<int>(used.size());

    Var loss = erm;
    if (lambda != 0.0 && !used.empty()) {
        Matrix w_used(n, static_cast<Eigen::Index>(used.size()));
        for (std::size_t k = 0; k < used.size(); ++k)
            w_used.col(static_cast<Eigen::Index>(k)) = w_rows.col(used[k]);
        Var Wt = tape.transpose(tape.constant(w_used));
        Var totals = tape.matmul(Wt, r);
        Var counts = tape.add_scalar(
            tape.matmul(Wt, tape.constant(Matrix::Ones(n, 1))), 1e-8);
        Var L = tape.cdiv(totals, counts);
        Var variance = tape.sub(tape.mean(tape.square(L)),
                                tape.square(tape.mean(L)));
        out.var = tape.scalar(variance);
        loss = tape.add(erm, tape.scale(variance, lambda));
    }

    out.erm = tape.scalar(erm);
    out.loss = tape.scalar(loss);
    out.loss_var = loss;
    return out;
}

InvTrainStats train_guidance(Denoiser& den, Guidance& g,
                             const BiasedDataset& data,
                             const GroupAssignment& groups,
                             const NoiseSchedule& sched,
                             const InvTrainConfig& cfg) {
    if (groups.W.rows() != data.n())
        throw std::invalid_argument(
            "train_guidance: group assignment does not match dataset");

    Matrix W = groups.W;
    if (cfg.harden) {
        std::vector<int> hard = groups.harden();
        W.setZero();
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            W(i, hard[static_cast<std::size_t>(i)]) = 1.0;
    }

    Rng rng = Rng::stream(cfg.seed, "train-guidance");
    Adam opt(AdamConfig{cfg.lr});
    auto params = g.params(); // psi and Phi only; theta stays frozen
    opt.init(params);

    int n = static_cast<int>(data.n());
    InvTrainStats stats;
    std::vector<Matrix> last_good;
    // instability detectors work on non-overlapping window means so single
    // noisy Var spikes cannot trip them
    int window = std::max(1, cfg.steps / 10);
    double head_sum = 0.0, tail_sum = 0.0;
    int head_cnt = 0, tail_cnt = 0;
    // erm tracked on finer windows: final window vs the best window seen
    int erm_window = std::max(1, cfg.steps / 50);
    std::vector<double> erm_means;
    double erm_acc = 0.0;
    int erm_cnt = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        Matrix xb(cfg.batch, data.d());
        std::vector<int> yb(static_cast<std::size_t>(cfg.batch));
        Matrix wb(cfg.batch, W.cols());
        for (int b = 0; b < cfg.batch; ++b) {
            int i = rng.uniform_int(0, n - 1);
            xb.row(b) = data.samples.row(i);
            yb[static_cast<std::size_t>(b)] =
                data.y[static_cast<std::size_t>(i)];
            wb.row(b) = W.row(i);
        }

        Tape tape;
        InvariantLossResult r;
        try {
            r = invariant_loss(tape, den, g, xb, yb, wb, sched, cfg.delta,
                               cfg.lambda, rng);
            tape.backward(r.loss_var);
            // drop whatever accumulated on the frozen denoiser
            for (Param* p : den.params())
                p->zero_grad();
            opt.step(params);
        } catch (const NumericError&) {
            // restore last-good parameters and stop
            if (!last_good.empty())
                for (std::size_t k = 0; k < params.size(); ++k)
                    params[k]->value = last_good[k];
            stats.unstable = true;
            break;
        }

        if (step == 0)
            stats.initial_var = r.var;
        stats.final_var = r.var;
        if (step < window) {
            head_sum += r.loss;
            ++head_cnt;
        }
        if (step >= cfg.steps - window) {
            tail_sum += r.loss;
            ++tail_cnt;
        }
        erm_acc += r.erm;
        if (++erm_cnt == erm_window) {
            erm_means.push_back(erm_acc / erm_cnt);
            erm_acc = 0.0;
            erm_cnt = 0;
        }

        if (step % 50 == 0) {
            last_good.clear();
            for (Param* p : params)
                last_good.push_back(p->value);
        }
        if (step % 10 == 0 || step + 1 == cfg.steps)
            stats.log.push_back({static_cast<double>(step), r.erm, r.var,
                                 r.loss});
    }
    if (head_cnt > 0 && tail_cnt > 0) {
        double head = head_sum / head_cnt;
        double tail = tail_sum / tail_cnt;
        // sustained blowup of the full objective
        if (std::isfinite(head) && head > 0.0 && tail > 5.0 * head)
            stats.unstable = true;
    }
    if (erm_means.size() >= 2) {
        // collapse of the generative fit: the guided denoising error ends
        // well above the best level it reached, meaning the penalty
        // overwhelmed the reconstruction term (seen at very large lambda)
        // and the model no longer fits the data it is meant to generate
        double best = *std::min_element(erm_means.begin(), erm_means.end());
        if (std::isfinite(best) && best > 0.0 &&
            erm_means.back() > 1.4 * best)
            stats.unstable = true;
    }
    return stats;
}

void write_invtrain_log(const InvTrainStats& stats, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("write_invtrain_log: cannot open " + path);
    out << "step,erm,var,loss\n";
    out.precision(17);
    for (const auto& row : stats.log)
        out << static_cast<int>(row[0]) << "," << row[1] << "," << row[2]
            << "," << row[3] << "\n";
}

} // namespace invdiff
