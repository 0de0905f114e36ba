#include "fedsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::attacks {

using neuralcore::MatrixXd;
using neuralcore::ModelWeights;
using neuralcore::VectorXd;

datahub::Dataset label_flip(const datahub::Dataset& data) {
    datahub::Dataset out = data;
    for (long i = 0; i < out.size(); ++i) {
        const int y = out.labels(i);
        if (y != 0 && y != 1) throw std::invalid_argument("label_flip: labels must be binary");
        out.labels(i) = 1 - y;
    }
    return out;
}

ModelWeights weight_scale(const ModelWeights& w, double lambda) {
    if (lambda <= 0.0) throw std::invalid_argument("weight_scale: lambda must be > 0");
    ModelWeights out = w;
    for (auto& layer : out.layers) {
        layer.w *= lambda;
        layer.b *= lambda;
    }
    return out;
}

namespace {

double max_pairwise_distance(const std::vector<VectorXd>& vs) {
    double best = 0.0;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t j = i + 1; j < vs.size(); ++j) {
            best = std::max(best, (vs[i] - vs[j]).norm());
        }
    }
    return best;
}

std::vector<VectorXd> flatten_all(const std::vector<ModelWeights>& ws) {
    std::vector<VectorXd> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(neuralcore::flatten(w));
    return out;
}

}  // namespace

ModelWeights craft_untargeted_krum(const std::vector<ModelWeights>& benign_estimates,
                                   const ModelWeights& global_w, int f, double margin,
                                   double eps_floor) {
    if (f < 1) throw std::invalid_argument("craft_untargeted_krum: f must be >= 1");
    if (benign_estimates.empty()) throw std::invalid_argument("craft_untargeted_krum: empty estimates");

    const auto vs = flatten_all(benign_estimates);
    VectorXd mean = VectorXd::Zero(vs[0].size());
    for (const auto& v : vs) mean += v;
    mean /= static_cast<double>(vs.size());

    VectorXd dir = mean - neuralcore::flatten(global_w);
    const double dn = dir.norm();
    if (dn > 1e-15) {
        dir /= dn;
    } else {
        dir.setZero();
        dir(0) = 1.0;
    }
    const double spread = max_pairwise_distance(vs);
    const double radius = margin * (spread > 0.0 ? spread : eps_floor);
    // Opposite to the mean update direction, within the benign neighborhood.
    return neuralcore::unflatten(mean - radius * dir, global_w.spec);
}

ModelWeights craft_untargeted_med(const std::vector<ModelWeights>& benign_estimates,
                                  const ModelWeights& global_w, double margin, double eps_floor) {
    if (benign_estimates.empty()) throw std::invalid_argument("craft_untargeted_med: empty estimates");

    const auto vs = flatten_all(benign_estimates);
    const VectorXd g = neuralcore::flatten(global_w);
    const long dim = vs[0].size();
    VectorXd crafted(dim);
    for (long j = 0; j < dim; ++j) {
        double lo = vs[0](j), hi = vs[0](j), sum = 0.0;
        for (const auto& v : vs) {
            lo = std::min(lo, v(j));
            hi = std::max(hi, v(j));
            sum += v(j);
        }
        const double direction = sum / static_cast<double>(vs.size()) - g(j);
        const double spread = hi - lo;
        const double step = margin * (spread > 0.0 ? spread : eps_floor);
        crafted(j) = direction > 0.0 ? lo - step : hi + step;
    }
    return neuralcore::unflatten(crafted, global_w.spec);
}

datahub::Dataset backdoor_poison(const datahub::Dataset& data, double trigger_threshold,
                                 int target_label) {
    datahub::Dataset out = data;
    for (long i = 0; i < out.size(); ++i) {
        if (out.features.row(i).mean() > trigger_threshold) out.labels(i) = target_label;
    }
    return out;
}

double feature_mean_median(const datahub::Dataset& data) {
    std::vector<double> means(data.size());
    for (long i = 0; i < data.size(); ++i) means[i] = data.features.row(i).mean();
    std::sort(means.begin(), means.end());
    const std::size_t n = means.size();
    return n % 2 == 1 ? means[n / 2] : 0.5 * (means[n / 2 - 1] + means[n / 2]);
}

datahub::Dataset gan_poison(const datahub::Dataset& data, const GanConfig& cfg, std::uint64_t seed,
                            GanDiagnostics* diag) {
    if (data.size() == 0) throw std::invalid_argument("gan_poison: empty dataset");
    const long d = data.dim();
    const long n_fake = cfg.n_fake > 0 ? cfg.n_fake : data.size();

    neuralcore::LayerSpec gen_spec;
    gen_spec.sizes = {cfg.latent_dim, cfg.hidden, cfg.hidden, static_cast<int>(d)};
    gen_spec.output = neuralcore::Activation::Identity;
    neuralcore::LayerSpec disc_spec;
    disc_spec.sizes = {static_cast<int>(d), cfg.hidden, cfg.hidden, 1};

    ModelWeights gen = neuralcore::init_generic(gen_spec, derive_seed(seed, 0x47'454eULL));
    ModelWeights disc = neuralcore::init_generic(disc_spec, derive_seed(seed, 0x44'4953ULL));
    Rng rng(derive_seed(seed, 0x47'414eULL));

    const long bsz = std::min<long>(cfg.batch_size, data.size());
    const auto sample_latent = [&](long rows) {
        MatrixXd z(rows, cfg.latent_dim);
        for (long i = 0; i < rows; ++i) {
            for (int j = 0; j < cfg.latent_dim; ++j) z(i, j) = rng.normal();
        }
        return z;
    };
    const auto sample_real = [&](long rows) {
        MatrixXd x(rows, d);
        for (long i = 0; i < rows; ++i) {
            x.row(i) = data.features.row(static_cast<long>(rng.below(data.size())));
        }
        return x;
    };

    const int diag_points = 10;
    for (int step = 0; step < cfg.steps; ++step) {
        // Discriminator step on a mixed real/fake batch.
        MatrixXd real = sample_real(bsz);
        MatrixXd fake = neuralcore::forward(gen, sample_latent(bsz));
        MatrixXd mixed(2 * bsz, d);
        mixed.topRows(bsz) = real;
        mixed.bottomRows(bsz) = fake;
        VectorXd y(2 * bsz);
        y.head(bsz).setOnes();
        y.tail(bsz).setZero();
        neuralcore::ForwardCache dc;
        neuralcore::forward(disc, mixed, &dc);
        auto dg = neuralcore::grad_bce(disc, dc, y);
        for (std::size_t l = 0; l < disc.layers.size(); ++l) {
            disc.layers[l].w -= cfg.lr * dg.layers[l].w;
            disc.layers[l].b -= cfg.lr * dg.layers[l].b;
        }

        // Generator step: push D(G(z)) toward the "real" label; the gradient
        // flows through the (frozen) discriminator into the generator.
        MatrixXd z = sample_latent(bsz);
        neuralcore::ForwardCache gc;
        MatrixXd gen_out = neuralcore::forward(gen, z, &gc);
        neuralcore::ForwardCache dc2;
        MatrixXd p = neuralcore::forward(disc, gen_out, &dc2);
        MatrixXd delta = (p.col(0).array() - 1.0).matrix() / static_cast<double>(bsz);
        auto through_disc = neuralcore::backprop_pre(disc, dc2, delta);
        auto gg = neuralcore::backprop_pre(gen, gc, through_disc.input_grad);
        for (std::size_t l = 0; l < gen.layers.size(); ++l) {
            gen.layers[l].w -= cfg.lr * gg.layers[l].w;
            gen.layers[l].b -= cfg.lr * gg.layers[l].b;
        }

        if (diag && (step % std::max(1, cfg.steps / diag_points) == 0 || step + 1 == cfg.steps)) {
            MatrixXd hr = sample_real(bsz);
            MatrixXd hf = neuralcore::forward(gen, sample_latent(bsz));
            const MatrixXd pr = neuralcore::forward(disc, hr);
            const MatrixXd pf = neuralcore::forward(disc, hf);
            long correct = 0;
            for (long i = 0; i < bsz; ++i) {
                if (pr(i, 0) > 0.5) correct++;
                if (pf(i, 0) <= 0.5) correct++;
            }
            diag->disc_accuracy.push_back(static_cast<double>(correct) / (2.0 * bsz));
        }
    }

    const Eigen::VectorXd lo = data.features.colwise().minCoeff();
    const Eigen::VectorXd hi = data.features.colwise().maxCoeff();
    MatrixXd fake = neuralcore::forward(gen, sample_latent(n_fake));
    for (long i = 0; i < n_fake; ++i) {
        for (long j = 0; j < d; ++j) fake(i, j) = std::clamp(fake(i, j), lo(j), hi(j));
    }

    datahub::Dataset out;
    out.feature_names = data.feature_names;
    out.features.resize(data.size() + n_fake, d);
    out.labels.resize(data.size() + n_fake);
    out.features.topRows(data.size()) = data.features;
    out.labels.head(data.size()) = data.labels;
    out.features.bottomRows(n_fake) = fake;
    for (long i = 0; i < n_fake; ++i) {
        int label = 0;
        switch (cfg.fake_label) {
            case FakeLabelPolicy::SingleLabel:
                label = cfg.single_label;
                break;
            case FakeLabelPolicy::MixedLabel:
                label = static_cast<int>(rng.below(2));
                break;
            case FakeLabelPolicy::Confusion:
                label = 1 - data.labels(static_cast<long>(rng.below(data.size())));
                break;
        }
        out.labels(data.size() + i) = label;
    }
    return out;
}

}  // namespace fedsim::attacks
