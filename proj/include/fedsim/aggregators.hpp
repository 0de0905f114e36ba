#pragma once

#include <vector>

#include "fedsim/datahub.hpp"
#include "fedsim/defense.hpp"
#include "fedsim/neuralcore.hpp"
#include "fedsim/privacy.hpp"

namespace fedsim::aggregators {

using neuralcore::ModelWeights;

// Coordinate-wise arithmetic mean.
ModelWeights fed_avg(const std::vector<ModelWeights>& updates);

// Index of the update minimizing the sum of squared distances to its
// n - f - 2 nearest neighbors; ties broken by lowest index. Requires
// n >= 2f + 3.
int krum_index(const std::vector<ModelWeights>& updates, int f);
ModelWeights krum(const std::vector<ModelWeights>& updates, int f);

// Per-coordinate median; even counts average the two middle values.
ModelWeights coord_median(const std::vector<ModelWeights>& updates);

// The no-AE variant of the filtering pipeline: CKA on raw normalized PLRs.
defense::PipelineResult fedcc(const neuralcore::ModelWeights& global_w,
                              const std::vector<privacy::NoisyUpdate>& updates,
                              defense::CkaVariant variant = defense::CkaVariant::SquaredFrobenius,
                              double min_cluster_gap = defense::kDefaultClusterGap);

// Unbiased squared-MMD estimate with a Gaussian kernel, clamped at 0.
double mmd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double bandwidth);

// Median heuristic over pooled pairwise distances.
double mmd_median_bandwidth(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct FlareResult {
    ModelWeights aggregated;
    std::vector<double> trust;  // non-negative, sums to 1
};

// Trust scoring from pairwise MMD between clients' penultimate-layer
// activations on a shared probe set; each client's trust counts how often it
// appears among other clients' k nearest (ties included), normalized to sum 1.
FlareResult flare_aggregate(const std::vector<ModelWeights>& updates,
                            const datahub::Dataset& probe, int neighbors);

}  // namespace fedsim::aggregators
