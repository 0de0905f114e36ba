#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedsim/neuralcore.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;
using namespace fedsim::neuralcore;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

LayerSpec classifier_spec(std::vector<int> sizes) {
    LayerSpec s;
    s.sizes = std::move(sizes);
    return s;
}

datahub::Dataset toy_separable(long n, std::uint64_t seed) {
    datahub::Dataset d;
    d.features.resize(n, 2);
    d.labels.resize(n);
    Rng rng(seed);
    for (long i = 0; i < n; ++i) {
        const int y = i % 2;
        d.features(i, 0) = (y ? 2.0 : -2.0) + 0.3 * rng.normal();
        d.features(i, 1) = (y ? -1.5 : 1.5) + 0.3 * rng.normal();
        d.labels(i) = y;
    }
    return d;
}

datahub::Dataset random_batch(long n, long dim, std::uint64_t seed) {
    datahub::Dataset d;
    d.features.resize(n, dim);
    d.labels.resize(n);
    Rng rng(seed);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < dim; ++j) d.features(i, j) = rng.normal();
        d.labels(i) = static_cast<int>(rng.below(2));
    }
    return d;
}

bool same_weights(const ModelWeights& a, const ModelWeights& b) {
    if (a.spec.sizes != b.spec.sizes) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].w != b.layers[l].w) return false;
        if (a.layers[l].b != b.layers[l].b) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("init_network produces the shapes forced by the spec") {
    const ModelWeights w = init_network(classifier_spec({4, 8, 6, 1}), 42);
    REQUIRE(w.layers.size() == 3);
    CHECK(w.layers[0].w.rows() == 8);
    CHECK(w.layers[0].w.cols() == 4);
    CHECK(w.layers[0].b.size() == 8);
    CHECK(w.layers[1].w.rows() == 6);
    CHECK(w.layers[1].w.cols() == 8);
    CHECK(w.layers[2].w.rows() == 1);
    CHECK(w.layers[2].w.cols() == 6);
    CHECK(w.layers[2].b.size() == 1);
    for (const auto& layer : w.layers) {
        CHECK(layer.w.allFinite());
        CHECK(layer.b.allFinite());
    }
}

TEST_CASE("init_network accepts a 71-feature input width") {
    const ModelWeights w = init_network(classifier_spec({71, 32, 16, 1}), 7);
    CHECK(w.layers[0].w.cols() == 71);
}

TEST_CASE("init_network is deterministic per (spec, seed)") {
    const ModelWeights a = init_network(classifier_spec({4, 8, 6, 1}), 42);
    const ModelWeights b = init_network(classifier_spec({4, 8, 6, 1}), 42);
    CHECK(same_weights(a, b));
    const ModelWeights c = init_network(classifier_spec({4, 8, 6, 1}), 43);
    CHECK(!same_weights(a, c));
}

TEST_CASE("init_network rejects shallow or malformed specs") {
    CHECK_THROWS_AS(init_network(classifier_spec({4, 8, 1}), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_network(classifier_spec({4, 8, 6, 2}), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_network(classifier_spec({4, 0, 6, 1}), 1), std::invalid_argument);
}

TEST_CASE("forward with all-zero weights predicts 0.5 everywhere") {
    ModelWeights w = init_network(classifier_spec({3, 4, 4, 1}), 1);
    for (auto& layer : w.layers) {
        layer.w.setZero();
        layer.b.setZero();
    }
    const MatrixXd batch = MatrixXd::Random(5, 3);
    const MatrixXd out = forward(w, batch);
    REQUIRE(out.rows() == 5);
    for (long i = 0; i < 5; ++i) CHECK(out(i, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("forward matches a scalar hand computation") {
    // 1 -> 1 -> 1 -> 1 chain, all weights 1, biases 0, input 2:
    // relu(2) = 2, relu(2) = 2, sigmoid(2).
    ModelWeights w;
    w.spec = classifier_spec({1, 1, 1, 1});
    for (int l = 0; l < 3; ++l) {
        ModelWeights::Layer layer;
        layer.w = MatrixXd::Ones(1, 1);
        layer.b = VectorXd::Zero(1);
        w.layers.push_back(layer);
    }
    MatrixXd x(1, 1);
    x << 2.0;
    const double expected = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(forward(w, x)(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("forward returns one prediction per row, each in [0, 1]") {
    const ModelWeights w = init_network(classifier_spec({6, 8, 4, 1}), 3);
    const MatrixXd batch = 3.0 * MatrixXd::Random(17, 6);
    const MatrixXd out = forward(w, batch);
    REQUIRE(out.rows() == 17);
    REQUIRE(out.cols() == 1);
    for (long i = 0; i < out.rows(); ++i) {
        CHECK(out(i, 0) >= 0.0);
        CHECK(out(i, 0) <= 1.0);
    }
    MatrixXd bad = MatrixXd::Random(3, 5);
    CHECK_THROWS_AS(forward(w, bad), std::invalid_argument);
}

TEST_CASE("train_local with zero learning rate returns the input weights") {
    const ModelWeights w = init_network(classifier_spec({2, 6, 4, 1}), 11);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    const ModelWeights out = train_local(w, toy_separable(64, 5), cfg);
    CHECK(same_weights(w, out));
}

TEST_CASE("train_local fits a linearly separable toy set") {
    const datahub::Dataset data = toy_separable(200, 9);
    const ModelWeights w = init_network(classifier_spec({2, 8, 4, 1}), 21);
    TrainConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 3;
    const ModelWeights trained = train_local(w, data, cfg);
    CHECK(evaluate(trained, data).accuracy == doctest::Approx(1.0));
}

TEST_CASE("train_local leaves its input unmodified and is deterministic") {
    const datahub::Dataset data = toy_separable(80, 2);
    const ModelWeights w = init_network(classifier_spec({2, 6, 4, 1}), 4);
    const ModelWeights snapshot = w;
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 77;
    const ModelWeights a = train_local(w, data, cfg);
    CHECK(same_weights(w, snapshot));
    const ModelWeights b = train_local(w, data, cfg);
    CHECK(same_weights(a, b));
}

TEST_CASE("train_local accepts the batch-1024 epochs-5 default and rejects bad input") {
    const ModelWeights w = init_network(classifier_spec({2, 6, 4, 1}), 4);
    TrainConfig cfg;
    cfg.batch_size = 1024;
    cfg.epochs = 5;
    CHECK_NOTHROW(train_local(w, toy_separable(32, 1), cfg));

    datahub::Dataset empty;
    empty.features.resize(0, 2);
    empty.labels.resize(0);
    CHECK_THROWS_AS(train_local(w, empty, cfg), std::invalid_argument);

    datahub::Dataset bad = toy_separable(8, 1);
    bad.labels(3) = 2;
    CHECK_THROWS_AS(train_local(w, bad, cfg), std::invalid_argument);
}

TEST_CASE("train_local with Adam also fits the separable toy set") {
    const datahub::Dataset data = toy_separable(200, 13);
    const ModelWeights w = init_network(classifier_spec({2, 8, 4, 1}), 31);
    TrainConfig cfg;
    cfg.optimizer = Optimizer::Adam;
    cfg.learning_rate = 0.02;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 5;
    const ModelWeights trained = train_local(w, data, cfg);
    CHECK(evaluate(trained, data).accuracy == doctest::Approx(1.0));
}

TEST_CASE("full-batch gradient descent on a linear MSE problem never increases the loss") {
    Rng rng(99);
    MatrixXd x(32, 3);
    MatrixXd y(32, 1);
    for (long i = 0; i < 32; ++i) {
        for (long j = 0; j < 3; ++j) x(i, j) = rng.normal();
        y(i, 0) = 0.7 * x(i, 0) - 0.2 * x(i, 1) + 0.1 * rng.normal();
    }
    LayerSpec spec;
    spec.sizes = {3, 1};
    spec.hidden = Activation::Identity;
    spec.output = Activation::Identity;
    ModelWeights w = init_generic(spec, 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 1;
    cfg.batch_size = 64;  // full batch
    double prev = mse_loss(forward(w, x), y);
    for (int e = 0; e < 30; ++e) {
        w = train_mse(w, x, y, cfg);
        const double cur = mse_loss(forward(w, x), y);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("evaluate on an engineered confusion matrix matches the metric formulas") {
    // Output logit = 8 * x0 via two pass-through hidden layers, so the model
    // predicts 1 exactly when x0 > 0.
    ModelWeights w;
    w.spec = classifier_spec({1, 2, 2, 1});
    ModelWeights::Layer l1;
    l1.w = MatrixXd(2, 1);
    l1.w << 1.0, -1.0;
    l1.b = VectorXd::Zero(2);
    ModelWeights::Layer l2;
    l2.w = MatrixXd::Identity(2, 2);
    l2.b = VectorXd::Zero(2);
    ModelWeights::Layer l3;
    l3.w = MatrixXd(1, 2);
    l3.w << 8.0, -8.0;
    l3.b = VectorXd::Zero(1);
    w.layers = {l1, l2, l3};

    // 3 true positives, 4 true negatives, 1 false positive, 2 false negatives.
    datahub::Dataset d;
    d.features.resize(10, 1);
    d.labels.resize(10);
    const double xs[] = {1, 1, 1, -1, -1, -1, -1, 1, -1, -1};
    const int ys[] = {1, 1, 1, 0, 0, 0, 0, 0, 1, 1};
    for (long i = 0; i < 10; ++i) {
        d.features(i, 0) = xs[i];
        d.labels(i) = ys[i];
    }
    const MetricsReport m = evaluate(w, d);
    CHECK(m.tp == 3);
    CHECK(m.tn == 4);
    CHECK(m.fp == 1);
    CHECK(m.fn == 2);
    CHECK(m.accuracy == doctest::Approx(0.7));
    CHECK(m.precision == doctest::Approx(0.75));
    CHECK(m.recall == doctest::Approx(0.6));
    CHECK(m.f1 == doctest::Approx(2.0 * 0.75 * 0.6 / (0.75 + 0.6)));
    CHECK(m.tp + m.tn + m.fp + m.fn == d.size());
}

TEST_CASE("evaluate handles perfect prediction and degenerate ratios") {
    const datahub::Dataset data = toy_separable(100, 17);
    const ModelWeights w0 = init_network(classifier_spec({2, 8, 4, 1}), 55);
    TrainConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.epochs = 60;
    cfg.batch_size = 25;
    const ModelWeights w = train_local(w0, data, cfg);
    const MetricsReport m = evaluate(w, data);
    CHECK(m.accuracy == doctest::Approx(1.0));
    CHECK(m.precision == doctest::Approx(1.0));
    CHECK(m.recall == doctest::Approx(1.0));
    CHECK(m.f1 == doctest::Approx(1.0));

    // All-negative predictions on an all-negative set: precision 0/0 -> 0.
    ModelWeights z = init_network(classifier_spec({2, 4, 4, 1}), 1);
    for (auto& layer : z.layers) {
        layer.w.setZero();
        layer.b.setZero();
    }
    z.layers.back().b(0) = -5.0;
    datahub::Dataset neg;
    neg.features = MatrixXd::Random(6, 2);
    neg.labels = Eigen::VectorXi::Zero(6);
    const MetricsReport mn = evaluate(z, neg);
    CHECK(mn.accuracy == doctest::Approx(1.0));
    CHECK(mn.precision == 0.0);
    CHECK(mn.recall == 0.0);
    CHECK(mn.f1 == 0.0);

    CHECK_THROWS_AS(evaluate(w, datahub::Dataset{}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(w, data, 1.5), std::invalid_argument);
}

TEST_CASE("evaluate with all-positive predictions on a balanced set") {
    ModelWeights w = init_network(classifier_spec({2, 4, 4, 1}), 1);
    for (auto& layer : w.layers) {
        layer.w.setZero();
        layer.b.setZero();
    }
    w.layers.back().b(0) = 5.0;  // always predicts 1
    datahub::Dataset d;
    d.features = MatrixXd::Random(10, 2);
    d.labels.resize(10);
    for (long i = 0; i < 10; ++i) d.labels(i) = i < 5 ? 1 : 0;
    const MetricsReport m = evaluate(w, d);
    CHECK(m.accuracy == doctest::Approx(0.5));
    CHECK(m.recall == doctest::Approx(1.0));
    CHECK(m.precision == doctest::Approx(0.5));
}

TEST_CASE("gradient_check stays below 1e-4 on random small nets") {
    const datahub::Dataset batch = random_batch(4, 3, 123);
    const ModelWeights w = init_network(classifier_spec({3, 5, 4, 1}), 77);
    const double err = gradient_check(w, batch, 1e-5);
    CHECK(err < 1e-4);
    CHECK(gradient_check(w, batch, 1e-5) == err);  // deterministic
    CHECK_THROWS_AS(gradient_check(w, batch, 1e-2), std::invalid_argument);
}

TEST_CASE("gradient is near zero at a perfectly fit point") {
    // Engineered saturated logit 50 * x0 on labels y = (x0 > 0): predictions
    // match the labels to machine precision, so the gradient vanishes.
    ModelWeights w;
    w.spec = classifier_spec({1, 2, 2, 1});
    ModelWeights::Layer l1;
    l1.w = MatrixXd(2, 1);
    l1.w << 1.0, -1.0;
    l1.b = VectorXd::Zero(2);
    ModelWeights::Layer l2;
    l2.w = MatrixXd::Identity(2, 2);
    l2.b = VectorXd::Zero(2);
    ModelWeights::Layer l3;
    l3.w = MatrixXd(1, 2);
    l3.w << 50.0, -50.0;
    l3.b = VectorXd::Zero(1);
    w.layers = {l1, l2, l3};

    datahub::Dataset data;
    data.features.resize(8, 1);
    data.labels.resize(8);
    for (long i = 0; i < 8; ++i) {
        data.features(i, 0) = i < 4 ? 1.0 + 0.1 * i : -1.0 - 0.1 * i;
        data.labels(i) = i < 4 ? 1 : 0;
    }
    ForwardCache cache;
    forward(w, data.features, &cache);
    VectorXd labels(data.size());
    for (long i = 0; i < data.size(); ++i) labels(i) = data.labels(i);
    const Gradients g = grad_bce(w, cache, labels);
    double max_abs = 0.0;
    for (const auto& layer : g.layers) {
        max_abs = std::max(max_abs, layer.w.cwiseAbs().maxCoeff());
        max_abs = std::max(max_abs, layer.b.cwiseAbs().maxCoeff());
    }
    CHECK(max_abs < 1e-8);
}

TEST_CASE("serialize round-trips bit-exactly") {
    const ModelWeights w = init_network(classifier_spec({5, 7, 3, 1}), 2024);
    const std::vector<std::uint8_t> bytes = serialize(w);
    const ModelWeights back = deserialize(bytes);
    CHECK(same_weights(w, back));
    CHECK(serialize(back) == bytes);

    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(deserialize(truncated), std::runtime_error);
}

TEST_CASE("flatten and unflatten are inverse bijections") {
    const ModelWeights w = init_network(classifier_spec({4, 6, 5, 1}), 3);
    const VectorXd v = flatten(w);
    CHECK(v.size() == parameter_count(w.spec));
    CHECK(same_weights(unflatten(v, w.spec), w));
    VectorXd bad = VectorXd::Zero(v.size() + 1);
    CHECK_THROWS_AS(unflatten(bad, w.spec), std::invalid_argument);
}

TEST_CASE("parameter_count matches the sum over layers") {
    // [4,8,6,1]: 8*4+8 + 6*8+6 + 1*6+1 = 40 + 54 + 7 = 101.
    CHECK(parameter_count(classifier_spec({4, 8, 6, 1})) == 101);
}
