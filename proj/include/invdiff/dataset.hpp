#pragma once

#include "invdiff/tape.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace invdiff {

// Synthetic low-dimensional data with a controllable spurious correlation.
// Dims 0-1 (invariant block) depend only on the label y; dims 2-3
// (spurious block) only on the hidden attribute s. P(s = y) = rho.
struct BiasedDataset {
    Matrix samples;         // N x D, D = 4
    std::vector<int> y;     // condition label in {0,1}
    std::vector<int> s;     // hidden spurious attribute in {0,1}
    double rho = 0.5;
    double sigma = 0.5;
    std::uint64_t seed = 0;

    Eigen::Index n() const { return samples.rows(); }
    Eigen::Index d() const { return samples.cols(); }
};

struct DatasetSplit {
    BiasedDataset train; // biased, rho_train
    BiasedDataset test;  // unbiased, rho = 0.5, disjoint seed
};

// Class centers: invariant block at (-2,0)/(+2,0) by y, spurious block at
// (0,-2)/(0,+2) by s, Gaussian noise sigma on every dim.
BiasedDataset synthesize(int n, double rho, double sigma, std::uint64_t seed);

DatasetSplit make_split(int n_train, int n_test, double rho_train,
                        double sigma, std::uint64_t seed);

// Threshold classifiers on the block geometry; stand-ins for trained
// attribute/label classifiers. Ties go to class 0.
int oracle_spurious(const Eigen::Ref<const Eigen::RowVectorXd>& x);
int oracle_label(const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct DatasetFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_dataset(const BiasedDataset& ds, const std::string& path);
BiasedDataset load_dataset(const std::string& path);

} // namespace invdiff
