#include "fedsim/privacy.hpp"

#include <cmath>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::privacy {

double gaussian_sigma(const PrivacyBudget& budget) {
    if (budget.epsilon <= 0.0) throw std::invalid_argument("gaussian_sigma: epsilon must be > 0");
    if (budget.delta <= 0.0 || budget.delta >= 1.0) {
        throw std::invalid_argument("gaussian_sigma: delta must be in (0, 1)");
    }
    if (budget.l2_sensitivity < 0.0) {
        throw std::invalid_argument("gaussian_sigma: sensitivity must be >= 0");
    }
    return std::sqrt(2.0 * std::log(1.25 / budget.delta)) * budget.l2_sensitivity / budget.epsilon;
}

double sample_noise_level(std::uint64_t seed, double low, double high) {
    if (low < 0.0 || low > high) throw std::invalid_argument("sample_noise_level: need 0 <= low <= high");
    Rng rng(derive_seed(seed, 0x5349'474dULL));
    return rng.uniform(low, high);
}

neuralcore::ModelWeights clip_update(const neuralcore::ModelWeights& w, double c) {
    if (c <= 0.0) throw std::invalid_argument("clip_update: clip norm must be > 0");
    double sq = 0.0;
    for (const auto& layer : w.layers) sq += layer.w.squaredNorm() + layer.b.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm <= c) return w;
    const double scale = c / norm;
    neuralcore::ModelWeights out = w;
    for (auto& layer : out.layers) {
        layer.w *= scale;
        layer.b *= scale;
    }
    return out;
}

NoisyUpdate perturb(const neuralcore::ModelWeights& w, double sigma, std::uint64_t seed,
                    const std::string& client_id, int round) {
    if (sigma < 0.0) throw std::invalid_argument("perturb: sigma must be >= 0");
    NoisyUpdate out;
    out.weights = w;
    out.sigma = sigma;
    out.client_id = client_id;
    out.round = round;
    if (sigma > 0.0) {
        Rng rng(derive_seed(seed, 0x4e4f'4953'45ULL));
        for (auto& layer : out.weights.layers) {
            for (long i = 0; i < layer.w.size(); ++i) layer.w.data()[i] += rng.normal(0.0, sigma);
            for (long i = 0; i < layer.b.size(); ++i) layer.b(i) += rng.normal(0.0, sigma);
        }
    }
    return out;
}

}  // namespace fedsim::privacy
