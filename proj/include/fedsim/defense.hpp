#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/neuralcore.hpp"
#include "fedsim/privacy.hpp"

namespace fedsim::defense {

using Eigen::MatrixXd;

// The penultimate layer's weight matrix: one row per neuron feeding the
// output layer, columns spanning the preceding layer's width.
using PLRMatrix = MatrixXd;
// AutoEncoder-compressed neuron rows; same row count, bottleneck columns.
using LSRMatrix = MatrixXd;

struct AeConfig {
    int bottleneck = 8;   // clamped to plr_width - 1
    int hidden = 32;
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.05;
    int ensemble = 3;     // independently seeded AEs whose scores are averaged
};

struct AEModel {
    neuralcore::ModelWeights net;  // d -> hidden -> k -> hidden -> d
    int bottleneck = 0;
    int encoder_layers = 2;        // layers of `net` forming the encoder
};

enum class CkaVariant { SquaredFrobenius, StandardTrace };

struct CKAScores {
    std::vector<double> scores;  // per client, in [0, 1]
    int max_index = 0;
};

struct FilterVerdict {
    std::vector<int> benign_set;
    std::vector<int> poisoned_set;

    bool is_benign(int i) const;
};

PLRMatrix extract_plr(const neuralcore::ModelWeights& w);

AEModel train_autoencoder(const std::vector<PLRMatrix>& plr_pool, const AeConfig& cfg,
                          std::uint64_t seed);

LSRMatrix encode_lsr(const AEModel& ae, const PLRMatrix& plr);

// Each row mean-centered then scaled to unit L2 norm; rows that are zero
// after centering stay zero.
MatrixXd normalize_rows(const MatrixXd& m);

// SquaredFrobenius: ||Kc Lc||_F^2 / (||Kc Kc||_F * ||Lc Lc||_F) with K = X X^T,
// L = Y Y^T double-centered. StandardTrace: tr(Kc Lc)/sqrt(tr(Kc Kc) tr(Lc Lc)).
// A zero denominator yields 0 (maximally dissimilar).
double cka(const MatrixXd& x, const MatrixXd& y, CkaVariant variant = CkaVariant::SquaredFrobenius);

// Deterministic 1-D 2-means solved exactly: the optimal assignment is a
// contiguous split of the sorted scores, found by scanning all split points.
// Majority cluster is benign; equal sizes break toward the higher mean score;
// spread below 1e-9 marks everyone benign.
FilterVerdict cluster_scores(const std::vector<double>& scores);

// Ejection guard on a clustering verdict: the poisoned cluster only stands if
// the two cluster means sit at least min_gap apart. Tightly packed clean
// scores stay aggregated.
FilterVerdict apply_gap_guard(const FilterVerdict& v, const std::vector<double>& scores,
                              double min_gap);

struct PipelineResult {
    neuralcore::ModelWeights aggregated;
    int max_index = 0;
    CKAScores scores;
    FilterVerdict verdict;
};

// The full filtering pipeline: PLR extraction (global + locals), AE training
// on the pooled rows, LSR encoding, row normalization, CKA scoring against the
// global model, score clustering, benign-only FedAvg.
inline constexpr double kDefaultClusterGap = 0.015;
// Stricter guard for early rounds, when honest locals are still far from the
// fresh global and clean score spreads are wide; only gross outliers (such as
// magnitude attacks) separate by this much that early.
inline constexpr double kWarmupClusterGap = 0.15;

PipelineResult run_pentidef(const neuralcore::ModelWeights& global_w,
                            const std::vector<privacy::NoisyUpdate>& updates,
                            const AeConfig& ae_cfg, std::uint64_t seed,
                            CkaVariant variant = CkaVariant::SquaredFrobenius,
                            double min_cluster_gap = kDefaultClusterGap);

}  // namespace fedsim::defense
