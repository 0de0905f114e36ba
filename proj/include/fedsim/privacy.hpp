#pragma once

#include <cstdint>
#include <string>

#include "fedsim/neuralcore.hpp"

namespace fedsim::privacy {

struct PrivacyBudget {
    double epsilon = 1.0;
    double delta = 1e-5;
    double l2_sensitivity = 1.0;
    double clip_norm = 1.0;
};

// A DDP-perturbed local update together with the noise level actually applied;
// sigma travels with the update into the round report and ledger metadata.
struct NoisyUpdate {
    neuralcore::ModelWeights weights;
    double sigma = 0.0;
    std::string client_id;
    int round = 0;
};

// sigma = sqrt(2 ln(1.25/delta)) * Delta2 / epsilon.
double gaussian_sigma(const PrivacyBudget& budget);

// Uniform draw from [low, high]; the per-round operational noise level.
double sample_noise_level(std::uint64_t seed, double low, double high);

// Global L2 clipping of the flattened weights to norm at most c.
neuralcore::ModelWeights clip_update(const neuralcore::ModelWeights& w, double c);

// Independent additive Gaussian noise of standard deviation sigma on every
// parameter, deterministic per seed.
NoisyUpdate perturb(const neuralcore::ModelWeights& w, double sigma, std::uint64_t seed,
                    const std::string& client_id, int round);

}  // namespace fedsim::privacy
