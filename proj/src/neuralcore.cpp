#include "fedsim/neuralcore.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::neuralcore {

void validate_classifier_spec(const LayerSpec& spec) {
    if (spec.sizes.size() < 4) {
        throw std::invalid_argument("LayerSpec: classifier needs at least 2 hidden layers");
    }
    for (int s : spec.sizes) {
        if (s < 1) throw std::invalid_argument("LayerSpec: all widths must be >= 1");
    }
    if (spec.sizes.back() != 1) {
        throw std::invalid_argument("LayerSpec: classifier output width must be 1");
    }
}

namespace {

ModelWeights init_impl(const LayerSpec& spec, std::uint64_t seed) {
    if (spec.sizes.size() < 2) throw std::invalid_argument("LayerSpec: need at least one layer");
    for (int s : spec.sizes) {
        if (s < 1) throw std::invalid_argument("LayerSpec: all widths must be >= 1");
    }
    Rng rng(derive_seed(seed, 0x494e'4954ULL));
    ModelWeights w;
    w.spec = spec;
    for (int l = 0; l + 1 < static_cast<int>(spec.sizes.size()); ++l) {
        const int fan_in = spec.sizes[l];
        const int fan_out = spec.sizes[l + 1];
        const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
        MatrixXd m(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) m(r, c) = rng.uniform(-limit, limit);
        }
        w.layers.push_back({std::move(m), VectorXd::Zero(fan_out)});
    }
    return w;
}

inline void apply_activation(MatrixXd& z, Activation a) {
    switch (a) {
        case Activation::ReLU:
            z = z.cwiseMax(0.0);
            break;
        case Activation::Sigmoid:
            z = (1.0 + (-z.array()).exp()).inverse().matrix();
            break;
        case Activation::Identity:
            break;
    }
}

// Derivative expressed through the post-activation value.
inline MatrixXd activation_deriv(const MatrixXd& post, Activation a) {
    switch (a) {
        case Activation::ReLU:
            return (post.array() > 0.0).cast<double>().matrix();
        case Activation::Sigmoid:
            return (post.array() * (1.0 - post.array())).matrix();
        case Activation::Identity:
            return MatrixXd::Ones(post.rows(), post.cols());
    }
    return MatrixXd();
}

constexpr double kProbClamp = 1e-7;

}  // namespace

ModelWeights init_network(const LayerSpec& spec, std::uint64_t seed) {
    validate_classifier_spec(spec);
    return init_impl(spec, seed);
}

ModelWeights init_generic(const LayerSpec& spec, std::uint64_t seed) { return init_impl(spec, seed); }

MatrixXd forward(const ModelWeights& w, const MatrixXd& batch, ForwardCache* cache) {
    if (batch.cols() != w.spec.input_width()) {
        throw std::invalid_argument("forward: batch column count does not match input width");
    }
    if (cache) {
        cache->acts.clear();
        cache->acts.push_back(batch);
    }
    MatrixXd a = batch;
    const int n_layers = static_cast<int>(w.layers.size());
    for (int l = 0; l < n_layers; ++l) {
        MatrixXd z = (a * w.layers[l].w.transpose()).rowwise() + w.layers[l].b.transpose();
        apply_activation(z, l + 1 == n_layers ? w.spec.output : w.spec.hidden);
        a = std::move(z);
        if (cache) cache->acts.push_back(a);
    }
    return a;
}

Gradients backprop_pre(const ModelWeights& w, const ForwardCache& cache, const MatrixXd& delta_pre) {
    const int n_layers = static_cast<int>(w.layers.size());
    Gradients g;
    g.layers.resize(n_layers);
    MatrixXd delta = delta_pre;
    for (int l = n_layers - 1; l >= 0; --l) {
        g.layers[l].w = delta.transpose() * cache.acts[l];
        g.layers[l].b = delta.colwise().sum();
        if (l > 0) {
            delta = (delta * w.layers[l].w)
                        .cwiseProduct(activation_deriv(cache.acts[l], w.spec.hidden));
        } else {
            g.input_grad = delta * w.layers[0].w;
        }
    }
    return g;
}

Gradients grad_bce(const ModelWeights& w, const ForwardCache& cache, const VectorXd& labels) {
    const MatrixXd& p = cache.acts.back();
    const double n = static_cast<double>(p.rows());
    MatrixXd delta = (p.col(0) - labels) / n;
    return backprop_pre(w, cache, delta);
}

Gradients grad_mse(const ModelWeights& w, const ForwardCache& cache, const MatrixXd& target) {
    const MatrixXd& p = cache.acts.back();
    const double n = static_cast<double>(p.rows());
    return backprop_pre(w, cache, (p - target) / n);
}

double bce_loss(const MatrixXd& pred, const VectorXd& labels) {
    double loss = 0.0;
    for (long i = 0; i < pred.rows(); ++i) {
        const double p = std::clamp(pred(i, 0), kProbClamp, 1.0 - kProbClamp);
        loss -= labels(i) * std::log(p) + (1.0 - labels(i)) * std::log(1.0 - p);
    }
    return loss / static_cast<double>(pred.rows());
}

double mse_loss(const MatrixXd& pred, const MatrixXd& target) {
    return 0.5 * (pred - target).squaredNorm() / static_cast<double>(pred.rows());
}

namespace {

struct AdamState {
    std::vector<ModelWeights::Layer> m, v;
    long t = 0;
};

void sgd_step(ModelWeights& w, const Gradients& g, double lr) {
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        w.layers[l].w -= lr * g.layers[l].w;
        w.layers[l].b -= lr * g.layers[l].b;
    }
}

void adam_step(ModelWeights& w, const Gradients& g, const TrainConfig& cfg, AdamState& st) {
    if (st.m.empty()) {
        for (const auto& layer : w.layers) {
            st.m.push_back({MatrixXd::Zero(layer.w.rows(), layer.w.cols()),
                            VectorXd::Zero(layer.b.size())});
            st.v.push_back({MatrixXd::Zero(layer.w.rows(), layer.w.cols()),
                            VectorXd::Zero(layer.b.size())});
        }
    }
    st.t++;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& m = st.m[l];
        auto& v = st.v[l];
        m.w = cfg.beta1 * m.w + (1.0 - cfg.beta1) * g.layers[l].w;
        m.b = cfg.beta1 * m.b + (1.0 - cfg.beta1) * g.layers[l].b;
        v.w = cfg.beta2 * v.w.array().matrix() +
              (1.0 - cfg.beta2) * g.layers[l].w.cwiseProduct(g.layers[l].w);
        v.b = cfg.beta2 * v.b + (1.0 - cfg.beta2) * g.layers[l].b.cwiseProduct(g.layers[l].b);
        w.layers[l].w.array() -= cfg.learning_rate * (m.w.array() / bc1) /
                                 ((v.w.array() / bc2).sqrt() + cfg.eps_opt);
        w.layers[l].b.array() -= cfg.learning_rate * (m.b.array() / bc1) /
                                 ((v.b.array() / bc2).sqrt() + cfg.eps_opt);
    }
}

template <typename GradFn>
ModelWeights train_loop(const ModelWeights& start, const MatrixXd& inputs, long n,
                        const TrainConfig& cfg, GradFn&& grad_for_batch) {
    if (cfg.learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (cfg.epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");

    ModelWeights w = start;
    Rng rng(derive_seed(cfg.seed, 0x5452'4149'4eULL));
    AdamState adam;
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (long start_i = 0; start_i < n; start_i += cfg.batch_size) {
            const long bsz = std::min<long>(cfg.batch_size, n - start_i);
            MatrixXd batch(bsz, inputs.cols());
            for (long r = 0; r < bsz; ++r) batch.row(r) = inputs.row(order[start_i + r]);
            Gradients g = grad_for_batch(w, batch, order, start_i, bsz);
            if (cfg.optimizer == Optimizer::Adam) {
                adam_step(w, g, cfg, adam);
            } else {
                sgd_step(w, g, cfg.learning_rate);
            }
        }
    }
    return w;
}

}  // namespace

ModelWeights train_local(const ModelWeights& w, const datahub::Dataset& data, const TrainConfig& cfg) {
    if (data.size() == 0) throw std::invalid_argument("train_local: empty dataset");
    for (long i = 0; i < data.size(); ++i) {
        if (data.labels(i) != 0 && data.labels(i) != 1) {
            throw std::invalid_argument("train_local: labels must be in {0, 1}");
        }
    }
    return train_loop(w, data.features, data.size(), cfg,
                      [&](const ModelWeights& cur, const MatrixXd& batch,
                          const std::vector<long>& order, long start_i, long bsz) {
                          VectorXd y(bsz);
                          for (long r = 0; r < bsz; ++r) {
                              y(r) = static_cast<double>(data.labels(order[start_i + r]));
                          }
                          ForwardCache cache;
                          forward(cur, batch, &cache);
                          return grad_bce(cur, cache, y);
                      });
}

ModelWeights train_mse(const ModelWeights& w, const MatrixXd& inputs, const MatrixXd& targets,
                       const TrainConfig& cfg) {
    if (inputs.rows() == 0) throw std::invalid_argument("train_mse: empty input");
    if (inputs.rows() != targets.rows()) throw std::invalid_argument("train_mse: row mismatch");
    return train_loop(w, inputs, inputs.rows(), cfg,
                      [&](const ModelWeights& cur, const MatrixXd& batch,
                          const std::vector<long>& order, long start_i, long bsz) {
                          MatrixXd t(bsz, targets.cols());
                          for (long r = 0; r < bsz; ++r) t.row(r) = targets.row(order[start_i + r]);
                          ForwardCache cache;
                          forward(cur, batch, &cache);
                          return grad_mse(cur, cache, t);
                      });
}

MetricsReport evaluate(const ModelWeights& w, const datahub::Dataset& data, double threshold) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw std::invalid_argument("evaluate: threshold must be in (0, 1)");
    }
    const MatrixXd pred = forward(w, data.features);
    MetricsReport r;
    for (long i = 0; i < data.size(); ++i) {
        const bool p = pred(i, 0) > threshold;
        const bool y = data.labels(i) == 1;
        if (p && y) r.tp++;
        else if (!p && !y) r.tn++;
        else if (p && !y) r.fp++;
        else r.fn++;
    }
    const auto ratio = [](long num, long den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    r.accuracy = ratio(r.tp + r.tn, r.tp + r.tn + r.fp + r.fn);
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.tp, r.tp + r.fn);
    r.f1 = (r.precision + r.recall) == 0.0 ? 0.0
                                           : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

double gradient_check(const ModelWeights& w, const datahub::Dataset& batch, double h) {
    if (h < 1e-6 || h > 1e-3) throw std::invalid_argument("gradient_check: h must be in [1e-6, 1e-3]");
    ForwardCache cache;
    forward(w, batch.features, &cache);
    VectorXd y = batch.labels.cast<double>();
    const Gradients analytic = grad_bce(w, cache, y);

    ModelWeights probe = w;
    const auto loss_at = [&]() { return bce_loss(forward(probe, batch.features), y); };
    double max_rel = 0.0;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        for (long idx = 0; idx < probe.layers[l].w.size(); ++idx) {
            double* p = probe.layers[l].w.data() + idx;
            const double orig = *p;
            *p = orig + h;
            const double lp = loss_at();
            *p = orig - h;
            const double lm = loss_at();
            *p = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic.layers[l].w.data()[idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
        for (long idx = 0; idx < probe.layers[l].b.size(); ++idx) {
            double* p = probe.layers[l].b.data() + idx;
            const double orig = *p;
            *p = orig + h;
            const double lp = loss_at();
            *p = orig - h;
            const double lm = loss_at();
            *p = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic.layers[l].b(idx);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("deserialize: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos++]) << (8 * i);
    return v;
}

double get_f64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw std::runtime_error("deserialize: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos++]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace

std::vector<std::uint8_t> serialize(const ModelWeights& w) {
    std::vector<std::uint8_t> out;
    put_u32(out, static_cast<std::uint32_t>(w.spec.sizes.size()));
    for (int s : w.spec.sizes) put_u32(out, static_cast<std::uint32_t>(s));
    out.push_back(static_cast<std::uint8_t>(w.spec.hidden));
    out.push_back(static_cast<std::uint8_t>(w.spec.output));
    for (const auto& layer : w.layers) {
        for (long r = 0; r < layer.w.rows(); ++r) {
            for (long c = 0; c < layer.w.cols(); ++c) put_f64(out, layer.w(r, c));
        }
        for (long i = 0; i < layer.b.size(); ++i) put_f64(out, layer.b(i));
    }
    return out;
}

ModelWeights deserialize(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    const std::uint32_t n_sizes = get_u32(bytes, pos);
    if (n_sizes < 2 || n_sizes > 1024) throw std::runtime_error("deserialize: bad layer count");
    LayerSpec spec;
    for (std::uint32_t i = 0; i < n_sizes; ++i) {
        spec.sizes.push_back(static_cast<int>(get_u32(bytes, pos)));
    }
    if (pos + 2 > bytes.size()) throw std::runtime_error("deserialize: truncated stream");
    spec.hidden = static_cast<Activation>(bytes[pos++]);
    spec.output = static_cast<Activation>(bytes[pos++]);
    ModelWeights w;
    w.spec = spec;
    for (std::uint32_t l = 0; l + 1 < n_sizes; ++l) {
        MatrixXd m(spec.sizes[l + 1], spec.sizes[l]);
        for (long r = 0; r < m.rows(); ++r) {
            for (long c = 0; c < m.cols(); ++c) m(r, c) = get_f64(bytes, pos);
        }
        VectorXd b(spec.sizes[l + 1]);
        for (long i = 0; i < b.size(); ++i) b(i) = get_f64(bytes, pos);
        w.layers.push_back({std::move(m), std::move(b)});
    }
    if (pos != bytes.size()) throw std::runtime_error("deserialize: trailing bytes");
    return w;
}

long parameter_count(const LayerSpec& spec) {
    long n = 0;
    for (std::size_t l = 0; l + 1 < spec.sizes.size(); ++l) {
        n += static_cast<long>(spec.sizes[l]) * spec.sizes[l + 1] + spec.sizes[l + 1];
    }
    return n;
}

VectorXd flatten(const ModelWeights& w) {
    VectorXd v(parameter_count(w.spec));
    long pos = 0;
    for (const auto& layer : w.layers) {
        for (long r = 0; r < layer.w.rows(); ++r) {
            for (long c = 0; c < layer.w.cols(); ++c) v(pos++) = layer.w(r, c);
        }
        for (long i = 0; i < layer.b.size(); ++i) v(pos++) = layer.b(i);
    }
    return v;
}

ModelWeights unflatten(const VectorXd& v, const LayerSpec& spec) {
    if (v.size() != parameter_count(spec)) throw std::invalid_argument("unflatten: size mismatch");
    ModelWeights w;
    w.spec = spec;
    long pos = 0;
    for (std::size_t l = 0; l + 1 < spec.sizes.size(); ++l) {
        MatrixXd m(spec.sizes[l + 1], spec.sizes[l]);
        for (long r = 0; r < m.rows(); ++r) {
            for (long c = 0; c < m.cols(); ++c) m(r, c) = v(pos++);
        }
        VectorXd b(spec.sizes[l + 1]);
        for (long i = 0; i < b.size(); ++i) b(i) = v(pos++);
        w.layers.push_back({std::move(m), std::move(b)});
    }
    return w;
}

}  // namespace fedsim::neuralcore
