#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/datahub.hpp"
#include "fedsim/neuralcore.hpp"

namespace fedsim::attacks {

enum class AttackKind { None, LabelFlip, WeightScale, UnKrum, UnMed, Backdoor, GanPoison };

enum class FakeLabelPolicy { SingleLabel, MixedLabel, Confusion };

struct GanConfig {
    int latent_dim = 8;
    int hidden = 16;
    int steps = 200;          // alternating single-step updates
    int batch_size = 32;
    double lr = 0.05;
    int n_fake = 0;           // 0 means "as many as the real samples"
    FakeLabelPolicy fake_label = FakeLabelPolicy::SingleLabel;
    int single_label = 0;
};

struct AttackConfig {
    AttackKind kind = AttackKind::None;
    double lambda = 10.0;              // WeightScale
    double trigger_threshold = 0.0;    // Backdoor; NaN selects the per-client median
    int target_label = 0;              // Backdoor
    double margin = 0.5;               // UnKrum / UnMed
    double eps_floor = 1e-3;           // degenerate-spread floor for crafted attacks
    GanConfig gan;
};

// Every label y becomes 1 - y; features untouched.
datahub::Dataset label_flip(const datahub::Dataset& data);

// Every parameter multiplied by lambda.
neuralcore::ModelWeights weight_scale(const neuralcore::ModelWeights& w, double lambda);

// Crafted update that stays within the benign cluster's neighborhood (radius =
// margin * max pairwise benign distance, floored at margin * eps_floor) while
// pointing opposite to the mean benign update direction from the global model.
neuralcore::ModelWeights craft_untargeted_krum(
    const std::vector<neuralcore::ModelWeights>& benign_estimates,
    const neuralcore::ModelWeights& global_w, int f, double margin, double eps_floor = 1e-3);

// Per coordinate: positive mean update direction -> min - m*(max-min), else
// max + m*(max-min); zero spread falls back to eps_floor.
neuralcore::ModelWeights craft_untargeted_med(
    const std::vector<neuralcore::ModelWeights>& benign_estimates,
    const neuralcore::ModelWeights& global_w, double margin, double eps_floor = 1e-3);

// Samples whose feature mean exceeds the trigger threshold get target_label.
datahub::Dataset backdoor_poison(const datahub::Dataset& data, double trigger_threshold,
                                 int target_label);

// Feature-mean median over the client's samples; the default backdoor trigger.
double feature_mean_median(const datahub::Dataset& data);

struct GanDiagnostics {
    std::vector<double> disc_accuracy;  // real-vs-fake accuracy trace
};

// Trains a small generator/discriminator pair on the client's features and
// appends generated samples labeled per the fake-label policy. Generated
// features are clipped to the observed per-feature [min, max].
datahub::Dataset gan_poison(const datahub::Dataset& data, const GanConfig& cfg,
                            std::uint64_t seed, GanDiagnostics* diag = nullptr);

}  // namespace fedsim::attacks
