#include "fedsim/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedsim::aggregators {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ModelWeights fed_avg(const std::vector<ModelWeights>& updates) {
    if (updates.empty()) throw std::invalid_argument("fed_avg: empty update list");
    ModelWeights out = updates[0];
    for (std::size_t i = 1; i < updates.size(); ++i) {
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].w += updates[i].layers[l].w;
            out.layers[l].b += updates[i].layers[l].b;
        }
    }
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (auto& layer : out.layers) {
        layer.w *= inv;
        layer.b *= inv;
    }
    return out;
}

int krum_index(const std::vector<ModelWeights>& updates, int f) {
    const int n = static_cast<int>(updates.size());
    if (n < 2 * f + 3) throw std::invalid_argument("krum: need n >= 2f + 3");
    std::vector<VectorXd> flat;
    flat.reserve(n);
    for (const auto& u : updates) flat.push_back(neuralcore::flatten(u));

    int best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    const int keep = n - f - 2;
    for (int i = 0; i < n; ++i) {
        std::vector<double> dists;
        dists.reserve(n - 1);
        for (int j = 0; j < n; ++j) {
            if (j != i) dists.push_back((flat[i] - flat[j]).squaredNorm());
        }
        std::sort(dists.begin(), dists.end());
        double score = 0.0;
        for (int k = 0; k < keep; ++k) score += dists[k];
        if (score < best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

ModelWeights krum(const std::vector<ModelWeights>& updates, int f) {
    return updates[krum_index(updates, f)];
}

ModelWeights coord_median(const std::vector<ModelWeights>& updates) {
    if (updates.empty()) throw std::invalid_argument("coord_median: empty update list");
    std::vector<VectorXd> flat;
    for (const auto& u : updates) flat.push_back(neuralcore::flatten(u));
    const long dim = flat[0].size();
    const std::size_t n = flat.size();
    VectorXd med(dim);
    std::vector<double> col(n);
    for (long j = 0; j < dim; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = flat[i](j);
        std::sort(col.begin(), col.end());
        med(j) = n % 2 == 1 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return neuralcore::unflatten(med, updates[0].spec);
}

defense::PipelineResult fedcc(const neuralcore::ModelWeights& global_w,
                              const std::vector<privacy::NoisyUpdate>& updates,
                              defense::CkaVariant variant, double min_cluster_gap) {
    if (updates.size() < 2) throw std::invalid_argument("fedcc: need at least 2 updates");
    const MatrixXd global_plr = defense::normalize_rows(defense::extract_plr(global_w));

    defense::PipelineResult res;
    res.scores.scores.resize(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const MatrixXd plr = defense::normalize_rows(defense::extract_plr(updates[i].weights));
        res.scores.scores[i] = std::clamp(defense::cka(plr, global_plr, variant), 0.0, 1.0);
    }
    res.scores.max_index = static_cast<int>(
        std::max_element(res.scores.scores.begin(), res.scores.scores.end()) -
        res.scores.scores.begin());
    res.max_index = res.scores.max_index;
    res.verdict = defense::apply_gap_guard(defense::cluster_scores(res.scores.scores),
                                           res.scores.scores, min_cluster_gap);

    std::vector<ModelWeights> benign;
    for (int i : res.verdict.benign_set) benign.push_back(updates[i].weights);
    res.aggregated = fed_avg(benign);
    return res;
}

double mmd(const MatrixXd& x, const MatrixXd& y, double bandwidth) {
    const long m = x.rows(), n = y.rows();
    if (m == 0 || n == 0) throw std::invalid_argument("mmd: empty sample set");
    if (bandwidth <= 0.0) throw std::invalid_argument("mmd: bandwidth must be > 0");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const auto kern = [&](const auto& a, const auto& b) {
        return std::exp(-gamma * (a - b).squaredNorm());
    };
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (long i = 0; i < m; ++i) {
        for (long j = 0; j < m; ++j) {
            if (i != j) xx += kern(x.row(i), x.row(j));
        }
    }
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < n; ++j) {
            if (i != j) yy += kern(y.row(i), y.row(j));
        }
    }
    for (long i = 0; i < m; ++i) {
        for (long j = 0; j < n; ++j) xy += kern(x.row(i), y.row(j));
    }
    double est = 0.0;
    if (m > 1) est += xx / (static_cast<double>(m) * (m - 1));
    if (n > 1) est += yy / (static_cast<double>(n) * (n - 1));
    est -= 2.0 * xy / (static_cast<double>(m) * n);
    return std::max(0.0, est);
}

double mmd_median_bandwidth(const MatrixXd& x, const MatrixXd& y) {
    std::vector<double> dists;
    MatrixXd pooled(x.rows() + y.rows(), x.cols());
    pooled.topRows(x.rows()) = x;
    pooled.bottomRows(y.rows()) = y;
    for (long i = 0; i < pooled.rows(); ++i) {
        for (long j = i + 1; j < pooled.rows(); ++j) {
            const double d = (pooled.row(i) - pooled.row(j)).norm();
            if (d > 0.0) dists.push_back(d);
        }
    }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    const std::size_t n = dists.size();
    return n % 2 == 1 ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
}

FlareResult flare_aggregate(const std::vector<ModelWeights>& updates, const datahub::Dataset& probe,
                            int neighbors) {
    if (probe.size() == 0) throw std::invalid_argument("flare_aggregate: empty probe set");
    if (updates.empty()) throw std::invalid_argument("flare_aggregate: empty update list");
    const int n = static_cast<int>(updates.size());
    const int k = std::clamp(neighbors, 1, std::max(1, n - 1));

    // Penultimate-layer activations on the shared probe set.
    std::vector<MatrixXd> acts;
    acts.reserve(n);
    for (const auto& u : updates) {
        neuralcore::ForwardCache cache;
        neuralcore::forward(u, probe.features, &cache);
        acts.push_back(cache.acts[cache.acts.size() - 2]);
    }

    MatrixXd dist = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double bw = mmd_median_bandwidth(acts[i], acts[j]);
            dist(i, j) = dist(j, i) = mmd(acts[i], acts[j], bw);
        }
    }

    // Each client nominates its k lowest-MMD peers; ties at the threshold are
    // all included so identical clients get uniform counts.
    std::vector<double> counts(n, 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> others;
        for (int j = 0; j < n; ++j) {
            if (j != i) others.push_back(dist(i, j));
        }
        std::sort(others.begin(), others.end());
        const double threshold = others[std::min<std::size_t>(k, others.size()) - 1];
        for (int j = 0; j < n; ++j) {
            if (j != i && dist(i, j) <= threshold + 1e-12) counts[j] += 1.0;
        }
    }
    double total = 0.0;
    for (double c : counts) total += c;
    FlareResult res;
    res.trust.resize(n);
    for (int i = 0; i < n; ++i) res.trust[i] = total > 0.0 ? counts[i] / total : 1.0 / n;

    ModelWeights agg = updates[0];
    for (auto& layer : agg.layers) {
        layer.w.setZero();
        layer.b.setZero();
    }
    for (int i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < agg.layers.size(); ++l) {
            agg.layers[l].w += res.trust[i] * updates[i].layers[l].w;
            agg.layers[l].b += res.trust[i] * updates[i].layers[l].b;
        }
    }
    res.aggregated = std::move(agg);
    return res;
}

}  // namespace fedsim::aggregators
