#include "invdiff/metrics.hpp"

#include "invdiff/optim.hpp"
#include "invdiff/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace invdiff {

namespace {

Matrix covariance(const Matrix& x) {
    Eigen::RowVectorXd mu = x.colwise().mean();
    Matrix centered = x.rowwise() - mu;
    Matrix cov = centered.transpose() * centered /
                 static_cast<double>(x.rows() - 1);
    cov.diagonal().array() += 1e-6;
    return cov;
}

// symmetric PSD square root via eigendecomposition; negative eigenvalues
// from roundoff are clamped to zero
Matrix sym_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success)
        throw NumericError("frechet_lite: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() *
           es.eigenvectors().transpose();
}

} // namespace

double bias_metric(const Matrix& samples, int k_classes,
                   const std::function<int(const Eigen::Ref<const Eigen::RowVectorXd>&)>&
                       classifier) {
    if (k_classes < 2)
        throw std::invalid_argument("bias_metric: K must be >= 2");
    if (samples.rows() == 0)
        throw std::invalid_argument("bias_metric: empty sample set");
    std::vector<double> freq(static_cast<std::size_t>(k_classes), 0.0);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        int c = classifier(samples.row(i));
        if (c < 0 || c >= k_classes)
            throw std::out_of_range("bias_metric: classifier returned " +
                                    std::to_string(c));
        freq[static_cast<std::size_t>(c)] += 1.0;
    }
    for (double& f : freq)
        f /= static_cast<double>(samples.rows());
    double total = 0.0;
    for (int i = 0; i < k_classes; ++i)
        for (int j = i + 1; j < k_classes; ++j)
            total += std::abs(freq[static_cast<std::size_t>(i)] -
                              freq[static_cast<std::size_t>(j)]);
    return total / (static_cast<double>(k_classes) * (k_classes - 1) / 2.0);
}

double frechet_lite(const Matrix& a, const Matrix& b) {
    Eigen::Index d = a.cols();
    if (b.cols() != d)
        throw ShapeError("frechet_lite: dimension mismatch");
    if (a.rows() < d + 1 || b.rows() < d + 1)
        throw std::invalid_argument(
            "frechet_lite: need at least D+1 samples per set");
    Eigen::RowVectorXd mu_a = a.colwise().mean();
    Eigen::RowVectorXd mu_b = b.colwise().mean();
    Matrix sa = covariance(a);
    Matrix sb = covariance(b);
    Matrix sqrt_a = sym_sqrt(sa);
    Matrix inner = sym_sqrt(sqrt_a * sb * sqrt_a);
    double val = (mu_a - mu_b).squaredNorm() +
                 (sa + sb - 2.0 * inner).trace();
    if (!std::isfinite(val))
        throw NumericError("frechet_lite: non-finite distance");
    return std::max(val, 0.0);
}

double knn_recall(const Matrix& real, const Matrix& generated, int k) {
    if (generated.rows() < k + 1 || real.rows() < k + 1)
        throw std::invalid_argument("knn_recall: sets must have > k points");
    Eigen::Index m = generated.rows();
    // k-th NN radius of each generated point within the generated set
    Eigen::VectorXd radius(m);
    std::vector<double> dists(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j)
            dists[static_cast<std::size_t>(j)] =
                (generated.row(i) - generated.row(j)).norm();
        std::nth_element(dists.begin(), dists.begin() + k, dists.end());
        // dists includes the self distance 0, so [k] is the k-th neighbor
        radius[i] = dists[static_cast<std::size_t>(k)];
    }
    Eigen::Index hits = 0;
    for (Eigen::Index r = 0; r < real.rows(); ++r) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if ((real.row(r) - generated.row(i)).norm() <= radius[i]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(real.rows());
}

double fidelity(const Matrix& samples, int y) {
    if (samples.rows() == 0)
        throw std::invalid_argument("fidelity: empty sample set");
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        if (oracle_label(samples.row(i)) == y)
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(samples.rows());
}

AugmentationResult augmentation_eval(const BiasedDataset& train,
                                     const Matrix& generated_x,
                                     const std::vector<int>& generated_y,
                                     const BiasedDataset& test,
                                     std::uint64_t seed) {
    if (generated_x.rows() !=
        static_cast<Eigen::Index>(generated_y.size()))
        throw std::invalid_argument(
            "augmentation_eval: generated labels do not match samples");

    Eigen::Index n = train.n() + generated_x.rows();
    Matrix x(n, train.d());
    Eigen::VectorXd label(n);
    x.topRows(train.n()) = train.samples;
    for (Eigen::Index i = 0; i < train.n(); ++i)
        label[i] = train.y[static_cast<std::size_t>(i)];
    if (generated_x.rows() > 0) {
        x.bottomRows(generated_x.rows()) = generated_x;
        for (Eigen::Index i = 0; i < generated_x.rows(); ++i)
            label[train.n() + i] =
                generated_y[static_cast<std::size_t>(i)];
    }

    // logistic regression: z = x w + b, BCE with logits
    Rng rng = Rng::stream(seed, "augmentation-eval");
    Param w("clf.w", 0.01 * rng.normal_matrix(train.d(), 1));
    Param b("clf.b", Matrix::Zero(1, 1));
    // Probe lr is chosen so the classifier is accurate (~97% overall) but
    // not driven to its max-margin solution: a fully converged linear probe
    // on this geometry separates the classes on the invariant dims alone and
    // becomes blind to the spurious correlation, so worst-group accuracy
    // saturates for biased and balanced training sets alike. The same probe
    // is used for the plain and the augmented arm.
    Adam opt(AdamConfig{0.01});
    std::vector<Param*> params{&w, &b};
    opt.init(params);

    Matrix ycol = label;
    for (int step = 0; step < 500; ++step) {
        Tape tape;
        Var z = tape.add_rowvec(
            tape.matmul(tape.constant(x), tape.param(w)),
            tape.param(b));
        // mean(softplus(z) - y z)  ==  BCE with logits
        Var loss = tape.mean(tape.sub(tape.softplus(z),
                                      tape.mul(tape.constant(ycol), z)));
        tape.backward(loss);
        opt.step(params);
    }

    auto predict = [&](const Eigen::Ref<const Eigen::RowVectorXd>& row) {
        double z = row * w.value.col(0);
        return (z + b.value(0, 0)) > 0.0 ? 1 : 0;
    };

    double groups[2][2] = {{0, 0}, {0, 0}};
    double correct[2][2] = {{0, 0}, {0, 0}};
    double total_correct = 0.0;
    for (Eigen::Index i = 0; i < test.n(); ++i) {
        int yy = test.y[static_cast<std::size_t>(i)];
        int ss = test.s[static_cast<std::size_t>(i)];
        groups[yy][ss] += 1.0;
        int p = predict(test.samples.row(i));
        if (p == yy) {
            correct[yy][ss] += 1.0;
            total_correct += 1.0;
        }
    }
    AugmentationResult out;
    out.accuracy = total_correct / static_cast<double>(test.n());
    out.worst_group_accuracy = 1.0;
    for (int yy = 0; yy < 2; ++yy)
        for (int ss = 0; ss < 2; ++ss) {
            if (groups[yy][ss] == 0.0)
                throw std::invalid_argument(
                    "augmentation_eval: empty (y,s) group in test set");
            out.worst_group_accuracy = std::min(
                out.worst_group_accuracy, correct[yy][ss] / groups[yy][ss]);
        }
    return out;
}

} // namespace invdiff
