#include "fedsim/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedsim/aggregators.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::defense {

bool FilterVerdict::is_benign(int i) const {
    return std::find(benign_set.begin(), benign_set.end(), i) != benign_set.end();
}

PLRMatrix extract_plr(const neuralcore::ModelWeights& w) {
    neuralcore::validate_classifier_spec(w.spec);
    // Last hidden layer: the weights feeding the output layer's input.
    return w.layers[w.layers.size() - 2].w;
}

AEModel train_autoencoder(const std::vector<PLRMatrix>& plr_pool, const AeConfig& cfg,
                          std::uint64_t seed) {
    if (plr_pool.empty()) throw std::invalid_argument("train_autoencoder: empty pool");
    const long rows0 = plr_pool[0].rows();
    const long d = plr_pool[0].cols();
    for (const auto& p : plr_pool) {
        if (p.rows() != rows0 || p.cols() != d) {
            throw std::invalid_argument("train_autoencoder: shape mismatch across pool");
        }
    }
    if (d < 2) throw std::invalid_argument("train_autoencoder: PLR width must allow compression");
    const int k = std::min<int>(cfg.bottleneck, static_cast<int>(d) - 1);
    if (k < 1) throw std::invalid_argument("train_autoencoder: bottleneck must be >= 1");

    MatrixXd pooled(rows0 * static_cast<long>(plr_pool.size()), d);
    for (std::size_t i = 0; i < plr_pool.size(); ++i) {
        pooled.middleRows(static_cast<long>(i) * rows0, rows0) = plr_pool[i];
    }

    neuralcore::LayerSpec spec;
    spec.sizes = {static_cast<int>(d), cfg.hidden, k, cfg.hidden, static_cast<int>(d)};
    // Sigmoid bottlenecks saturate under scaled-up weight rows, so magnitude
    // attacks stay visible after row normalization.
    spec.hidden = neuralcore::Activation::Sigmoid;
    spec.output = neuralcore::Activation::Identity;
    neuralcore::ModelWeights net = neuralcore::init_generic(spec, derive_seed(seed, 0x4145ULL));

    neuralcore::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.seed = derive_seed(seed, 0x4145'54ULL);
    net = neuralcore::train_mse(net, pooled, pooled, tc);

    return AEModel{std::move(net), k, 2};
}

LSRMatrix encode_lsr(const AEModel& ae, const PLRMatrix& plr) {
    if (plr.cols() != ae.net.spec.input_width()) {
        throw std::invalid_argument("encode_lsr: PLR width does not match encoder input");
    }
    // Forward through the encoder half only; the bottleneck keeps the hidden
    // activation.
    neuralcore::ModelWeights enc;
    enc.spec.sizes.assign(ae.net.spec.sizes.begin(), ae.net.spec.sizes.begin() + ae.encoder_layers + 1);
    enc.spec.hidden = ae.net.spec.hidden;
    enc.spec.output = ae.net.spec.hidden;
    enc.layers.assign(ae.net.layers.begin(), ae.net.layers.begin() + ae.encoder_layers);
    return neuralcore::forward(enc, plr);
}

MatrixXd normalize_rows(const MatrixXd& m) {
    MatrixXd out = m;
    for (long i = 0; i < out.rows(); ++i) {
        out.row(i).array() -= out.row(i).mean();
        const double n = out.row(i).norm();
        if (n > 0.0) out.row(i) /= n;
    }
    return out;
}

namespace {

// Double-centering H G H with H = I - (1/n) 1 1^T.
MatrixXd center_gram(const MatrixXd& g) {
    Eigen::VectorXd row_mean = g.rowwise().mean();
    Eigen::VectorXd col_mean = g.colwise().mean();
    const double grand = g.mean();
    MatrixXd c = g;
    c.colwise() -= row_mean;
    c.rowwise() -= col_mean.transpose();
    c.array() += grand;
    return c;
}

}  // namespace

double cka(const MatrixXd& x, const MatrixXd& y, CkaVariant variant) {
    if (x.rows() != y.rows()) throw std::invalid_argument("cka: row-count mismatch");
    if (x.rows() == 0) throw std::invalid_argument("cka: empty input");
    const MatrixXd kc = center_gram(x * x.transpose());
    const MatrixXd lc = center_gram(y * y.transpose());
    if (variant == CkaVariant::SquaredFrobenius) {
        const double num = (kc * lc).squaredNorm();
        const double den = (kc * kc).norm() * (lc * lc).norm();
        return den > 0.0 ? num / den : 0.0;
    }
    const double num = (kc.cwiseProduct(lc)).sum();  // tr(Kc Lc), both symmetric
    const double den = std::sqrt(kc.squaredNorm() * lc.squaredNorm());
    return den > 0.0 ? num / den : 0.0;
}

FilterVerdict cluster_scores(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    if (n < 2) throw std::invalid_argument("cluster_scores: need at least 2 scores");

    const double lo = *std::min_element(scores.begin(), scores.end());
    const double hi = *std::max_element(scores.begin(), scores.end());

    FilterVerdict v;
    if (hi - lo < 1e-9) {
        for (int i = 0; i < n; ++i) v.benign_set.push_back(i);
        return v;
    }

    // In one dimension the optimal 2-means assignment is a contiguous split of
    // the sorted scores, so the exact optimum is found by scanning all n - 1
    // split points; ties keep the earliest split.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

    std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
    for (int i = 0; i < n; ++i) {
        prefix[i + 1] = prefix[i] + scores[order[i]];
        prefix_sq[i + 1] = prefix_sq[i] + scores[order[i]] * scores[order[i]];
    }
    const auto sse = [&](int a, int b) {  // half-open [a, b) over the sorted order
        const double s = prefix[b] - prefix[a];
        const double sq = prefix_sq[b] - prefix_sq[a];
        return sq - s * s / static_cast<double>(b - a);
    };

    int best_k = 1;
    double best = sse(0, 1) + sse(1, n);
    for (int k = 2; k < n; ++k) {
        const double cand = sse(0, k) + sse(k, n);
        if (cand < best) {
            best = cand;
            best_k = k;
        }
    }

    const int n_low = best_k, n_high = n - best_k;
    // The upper cluster has the higher mean, so it wins equal-size ties.
    const bool upper_benign = n_high >= n_low;
    for (int i = 0; i < n; ++i) {
        const bool upper = i >= best_k;
        (upper == upper_benign ? v.benign_set : v.poisoned_set).push_back(order[i]);
    }
    std::sort(v.benign_set.begin(), v.benign_set.end());
    std::sort(v.poisoned_set.begin(), v.poisoned_set.end());
    return v;
}

FilterVerdict apply_gap_guard(const FilterVerdict& v, const std::vector<double>& scores,
                              double min_gap) {
    if (v.poisoned_set.empty() || min_gap <= 0.0) return v;
    double mb = 0.0, mp = 0.0;
    for (int i : v.benign_set) mb += scores[i];
    for (int i : v.poisoned_set) mp += scores[i];
    mb /= static_cast<double>(v.benign_set.size());
    mp /= static_cast<double>(v.poisoned_set.size());
    if (std::abs(mb - mp) >= min_gap) return v;
    FilterVerdict all;
    for (int i = 0; i < static_cast<int>(scores.size()); ++i) all.benign_set.push_back(i);
    return all;
}

PipelineResult run_pentidef(const neuralcore::ModelWeights& global_w,
                            const std::vector<privacy::NoisyUpdate>& updates,
                            const AeConfig& ae_cfg, std::uint64_t seed, CkaVariant variant,
                            double min_cluster_gap) {
    if (updates.size() < 2) throw std::invalid_argument("run_pentidef: need at least 2 updates");
    for (const auto& u : updates) {
        if (u.weights.spec.sizes != global_w.spec.sizes) {
            throw std::invalid_argument("run_pentidef: update shape mismatch");
        }
    }

    const PLRMatrix global_plr = extract_plr(global_w);
    std::vector<PLRMatrix> pool;
    pool.reserve(updates.size() + 1);
    pool.push_back(global_plr);
    for (const auto& u : updates) pool.push_back(extract_plr(u.weights));

    // A small ensemble of independently seeded AEs; averaging the scores irons
    // out the occasional compression draw with weak contrast.
    PipelineResult res;
    res.scores.scores.assign(updates.size(), 0.0);
    const int members = std::max(1, ae_cfg.ensemble);
    for (int j = 0; j < members; ++j) {
        const AEModel ae = train_autoencoder(pool, ae_cfg, derive_seed(seed, 0x414aULL, j));
        const MatrixXd global_lsr = normalize_rows(encode_lsr(ae, global_plr));
        for (std::size_t i = 0; i < updates.size(); ++i) {
            const MatrixXd lsr = normalize_rows(encode_lsr(ae, pool[i + 1]));
            res.scores.scores[i] +=
                std::clamp(cka(lsr, global_lsr, variant), 0.0, 1.0) / members;
        }
    }
    res.scores.max_index = static_cast<int>(
        std::max_element(res.scores.scores.begin(), res.scores.scores.end()) -
        res.scores.scores.begin());
    res.max_index = res.scores.max_index;

    res.verdict = apply_gap_guard(cluster_scores(res.scores.scores), res.scores.scores,
                                  min_cluster_gap);
    std::vector<neuralcore::ModelWeights> benign;
    benign.reserve(res.verdict.benign_set.size());
    for (int i : res.verdict.benign_set) benign.push_back(updates[i].weights);
    res.aggregated = aggregators::fed_avg(benign);
    return res;
}

}  // namespace fedsim::defense
