#pragma once

#include "invdiff/dataset.hpp"

#include <functional>
#include <string>
#include <vector>

namespace invdiff {

// Mean pairwise disparity of class frequencies among generated samples for
// one prompt: (1 / (K(K-1)/2)) * sum_{i<j} |freq(i) - freq(j)|.
double bias_metric(const Matrix& samples, int k_classes,
                   const std::function<int(const Eigen::Ref<const Eigen::RowVectorXd>&)>&
                       classifier);

// 2-Wasserstein distance between Gaussians fitted to A and B on raw
// features: ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A^1/2 S_B S_A^1/2)^1/2).
// Covariances get 1e-6 diagonal jitter.
double frechet_lite(const Matrix& a, const Matrix& b);

// Manifold recall (k-NN ball cover over the generated set): fraction of
// real points inside some generated point's k-th-NN ball.
double knn_recall(const Matrix& real, const Matrix& generated, int k);

// Fraction of samples whose oracle label matches the conditioning label.
double fidelity(const Matrix& samples, int y);

struct AugmentationResult {
    double accuracy = 0.0;
    double worst_group_accuracy = 0.0;
};

// Logistic classifier (trained with the tape autodiff, 500 Adam steps) on
// real-plus-generated training data; accuracy reported on the balanced
// test set overall and per worst (y, s) group.
AugmentationResult augmentation_eval(const BiasedDataset& train,
                                     const Matrix& generated_x,
                                     const std::vector<int>& generated_y,
                                     const BiasedDataset& test,
                                     std::uint64_t seed);

} // namespace invdiff
