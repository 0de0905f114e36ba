#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace fedsim::datahub {

using Eigen::MatrixXd;
using Eigen::VectorXi;

struct Dataset {
    MatrixXd features;  // n x d
    VectorXi labels;    // n, values in {0, 1}
    std::vector<std::string> feature_names;

    long size() const { return features.rows(); }
    long dim() const { return features.cols(); }
};

enum class PartitionScheme { IID, Dirichlet };

struct PartitionPlan {
    PartitionScheme scheme = PartitionScheme::IID;
    double alpha = 0.5;  // Dirichlet concentration
    int n_clients = 20;
    std::uint64_t seed = 0;
};

// Comma-separated file with a header row; all feature columns numeric, the
// label column coerced to {0, 1}. Malformed rows are reported by line number.
Dataset load_csv(const std::string& path, const std::string& label_column);

// Two Gaussian classes at mean separation s along a fixed unit direction.
Dataset synth_generate(long n, long d, double separation, double class_ratio, std::uint64_t seed);

// Stratified-by-label split; test size = round(fraction * n).
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

// Disjoint client shards covering the whole training set. IID shards differ in
// size by at most one; Dirichlet draws per-client label proportions and
// guarantees at least one sample of each class per shard.
std::vector<Dataset> partition(const Dataset& train, const PartitionPlan& plan);

struct StandardizeParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;
};

// Z-score on train statistics; the test set is transformed with the same
// parameters. Zero-variance columns are left unscaled.
StandardizeParams standardize_fit(const Dataset& train);
void standardize_apply(Dataset& data, const StandardizeParams& p);

}  // namespace fedsim::datahub
