#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "fedsim/attacks.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;
using namespace fedsim::attacks;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

datahub::Dataset make_dataset(const std::vector<std::vector<double>>& rows,
                              const std::vector<int>& labels) {
    datahub::Dataset d;
    d.features.resize(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
    d.labels.resize(static_cast<long>(labels.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            d.features(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
        }
        d.labels(static_cast<long>(i)) = labels[i];
    }
    return d;
}

neuralcore::ModelWeights model_from_vector(const VectorXd& v, const neuralcore::LayerSpec& spec) {
    return neuralcore::unflatten(v, spec);
}

neuralcore::LayerSpec tiny_spec() {
    neuralcore::LayerSpec spec;
    spec.sizes = {1, 1};
    return spec;
}

}  // namespace

TEST_CASE("label_flip inverts every label and nothing else") {
    const auto d = make_dataset({{1, 2}, {3, 4}, {5, 6}, {7, 8}}, {0, 1, 1, 0});
    const auto flipped = label_flip(d);
    CHECK(flipped.labels(0) == 1);
    CHECK(flipped.labels(1) == 0);
    CHECK(flipped.labels(2) == 0);
    CHECK(flipped.labels(3) == 1);
    CHECK(flipped.features == d.features);

    const auto twice = label_flip(flipped);
    CHECK(twice.labels == d.labels);
    CHECK(twice.features == d.features);
}

TEST_CASE("label_flip rejects non-binary labels") {
    auto d = make_dataset({{1.0}}, {0});
    d.labels(0) = 5;
    CHECK_THROWS_AS(label_flip(d), std::invalid_argument);
}

TEST_CASE("weight_scale multiplies every parameter") {
    neuralcore::LayerSpec spec;
    spec.sizes = {2, 4, 3, 1};
    const auto w = neuralcore::init_network(spec, 5);

    const auto same = weight_scale(w, 1.0);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        CHECK(same.layers[l].w == w.layers[l].w);
    }

    VectorXd v(2);
    v << 0.5, -1.0;
    neuralcore::LayerSpec two;
    two.sizes = {1, 1};
    const auto m = model_from_vector(v, two);
    const auto scaled = weight_scale(m, 10.0);
    const VectorXd flat = neuralcore::flatten(scaled);
    CHECK(flat(0) == doctest::Approx(5.0));
    CHECK(flat(1) == doctest::Approx(-10.0));

    CHECK_THROWS_AS(weight_scale(w, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(weight_scale(w, -2.0), std::invalid_argument);
}

TEST_CASE("weight_scale composes multiplicatively") {
    neuralcore::LayerSpec spec;
    spec.sizes = {3, 4, 4, 1};
    const auto w = neuralcore::init_network(spec, 9);
    const auto ab = weight_scale(weight_scale(w, 2.5), 4.0);
    const auto direct = weight_scale(w, 10.0);
    const VectorXd x = neuralcore::flatten(ab);
    const VectorXd y = neuralcore::flatten(direct);
    for (long i = 0; i < x.size(); ++i) CHECK(x(i) == doctest::Approx(y(i)).epsilon(1e-15));
}

TEST_CASE("craft_untargeted_krum stays inside the benign neighborhood") {
    // 4 benign 2-vectors, f = 1, margin 0.5.
    neuralcore::LayerSpec spec;
    spec.sizes = {1, 1};
    std::vector<neuralcore::ModelWeights> benign;
    std::vector<VectorXd> vs;
    const double pts[4][2] = {{1.0, 1.0}, {1.2, 0.9}, {0.8, 1.1}, {1.1, 1.15}};
    for (const auto& p : pts) {
        VectorXd v(2);
        v << p[0], p[1];
        vs.push_back(v);
        benign.push_back(model_from_vector(v, spec));
    }
    VectorXd g(2);
    g << 0.0, 0.0;
    const auto global_w = model_from_vector(g, spec);

    const auto crafted = craft_untargeted_krum(benign, global_w, 1, 0.5);
    const VectorXd c = neuralcore::flatten(crafted);

    double max_pair = 0.0;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t j = i + 1; j < vs.size(); ++j) {
            max_pair = std::max(max_pair, (vs[i] - vs[j]).norm());
        }
    }
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& v : vs) nearest = std::min(nearest, (c - v).norm());
    CHECK(nearest <= max_pair);

    // The crafted point moved against the mean update direction.
    VectorXd mean = VectorXd::Zero(2);
    for (const auto& v : vs) mean += v;
    mean /= 4.0;
    CHECK((c - mean).dot(mean - g) < 0.0);
}

TEST_CASE("craft_untargeted_krum handles identical estimates via the floor margin") {
    neuralcore::LayerSpec spec;
    spec.sizes = {1, 1};
    VectorXd v(2);
    v << 2.0, 1.0;
    VectorXd g(2);
    g << 0.0, 0.0;
    std::vector<neuralcore::ModelWeights> benign(3, model_from_vector(v, spec));
    const auto crafted = craft_untargeted_krum(benign, model_from_vector(g, spec), 1, 0.5, 1e-3);
    const VectorXd c = neuralcore::flatten(crafted);
    CHECK((c - v).norm() == doctest::Approx(0.5 * 1e-3).epsilon(1e-9));
    CHECK(std::isfinite(c(0)));

    CHECK_THROWS_AS(craft_untargeted_krum(benign, model_from_vector(g, spec), 0, 0.5),
                    std::invalid_argument);
    CHECK_THROWS_AS(craft_untargeted_krum({}, model_from_vector(g, spec), 1, 0.5),
                    std::invalid_argument);
}

TEST_CASE("craft_untargeted_med applies the stated per-coordinate rule") {
    // Benign values {1, 2, 3} on the only coordinate pair; global 0 makes the
    // mean direction positive, so the crafted value is min - m * (max - min).
    neuralcore::LayerSpec spec;
    spec.sizes = {1, 1};
    std::vector<neuralcore::ModelWeights> benign;
    for (double x : {1.0, 2.0, 3.0}) {
        VectorXd v(2);
        v << x, -x;
        benign.push_back(model_from_vector(v, spec));
    }
    VectorXd g(2);
    g << 0.0, 0.0;
    const auto crafted = craft_untargeted_med(benign, model_from_vector(g, spec), 0.5);
    const VectorXd c = neuralcore::flatten(crafted);
    CHECK(c(0) == doctest::Approx(1.0 - 0.5 * 2.0));   // positive direction
    CHECK(c(1) == doctest::Approx(-1.0 + 0.5 * 2.0));  // negative direction
}

TEST_CASE("craft_untargeted_med falls outside the benign range whenever spread > 0") {
    neuralcore::LayerSpec spec;
    spec.sizes = {2, 3, 2, 1};
    std::vector<neuralcore::ModelWeights> benign;
    for (std::uint64_t s = 1; s <= 5; ++s) benign.push_back(neuralcore::init_network(spec, s));
    const auto global_w = neuralcore::init_network(spec, 99);
    const auto crafted = craft_untargeted_med(benign, global_w, 0.5);
    const VectorXd c = neuralcore::flatten(crafted);
    std::vector<VectorXd> vs;
    for (const auto& b : benign) vs.push_back(neuralcore::flatten(b));
    for (long j = 0; j < c.size(); ++j) {
        double lo = vs[0](j), hi = vs[0](j);
        for (const auto& v : vs) {
            lo = std::min(lo, v(j));
            hi = std::max(hi, v(j));
        }
        if (hi - lo > 0.0) {
            CHECK((c(j) < lo || c(j) > hi));
        }
    }
}

TEST_CASE("craft_untargeted_med zero-spread coordinates use the floor step") {
    neuralcore::LayerSpec spec;
    spec.sizes = {1, 1};
    VectorXd v(2);
    v << 4.0, 4.0;
    std::vector<neuralcore::ModelWeights> benign(3, model_from_vector(v, spec));
    VectorXd g = VectorXd::Zero(2);
    const auto crafted = craft_untargeted_med(benign, model_from_vector(g, spec), 0.5, 1e-3);
    CHECK(neuralcore::flatten(crafted)(0) == doctest::Approx(4.0 - 0.5 * 1e-3));
    CHECK_THROWS_AS(craft_untargeted_med({}, model_from_vector(g, spec), 0.5),
                    std::invalid_argument);
}

TEST_CASE("backdoor_poison relabels exactly the samples above the trigger threshold") {
    const auto d = make_dataset({{2, 2, 2}, {0, 0, 0}, {1.5, 0, 0}, {-3, -3, -3}}, {1, 1, 1, 1});
    const auto poisoned = backdoor_poison(d, 1.0, 0);
    CHECK(poisoned.labels(0) == 0);  // mean 2 > 1
    CHECK(poisoned.labels(1) == 1);  // mean 0 < 1
    CHECK(poisoned.labels(2) == 1);  // mean 0.5 < 1
    CHECK(poisoned.labels(3) == 1);
    CHECK(poisoned.features == d.features);

    const auto untouched = backdoor_poison(d, std::numeric_limits<double>::infinity(), 0);
    CHECK(untouched.labels == d.labels);

    // The modified index set is exactly {i : mean(x_i) > threshold}.
    const auto wide = backdoor_poison(d, -10.0, 0);
    for (long i = 0; i < d.size(); ++i) CHECK(wide.labels(i) == 0);
}

TEST_CASE("feature_mean_median is the median of per-sample feature means") {
    const auto odd = make_dataset({{1, 1}, {5, 5}, {3, 3}}, {0, 0, 0});
    CHECK(feature_mean_median(odd) == doctest::Approx(3.0));
    const auto even = make_dataset({{1, 1}, {2, 2}, {5, 5}, {10, 10}}, {0, 0, 0, 0});
    CHECK(feature_mean_median(even) == doctest::Approx(3.5));
}

TEST_CASE("gan_poison appends clipped samples with the requested labels") {
    datahub::Dataset d;
    Rng rng(7);
    d.features.resize(60, 3);
    d.labels.resize(60);
    for (long i = 0; i < 60; ++i) {
        for (long j = 0; j < 3; ++j) d.features(i, j) = 2.0 * rng.normal() + (i % 2 ? 3.0 : -3.0);
        d.labels(i) = static_cast<int>(i % 2);
    }
    GanConfig cfg;
    cfg.steps = 60;
    cfg.n_fake = 25;
    cfg.fake_label = FakeLabelPolicy::SingleLabel;
    cfg.single_label = 0;

    GanDiagnostics diag;
    const auto out = gan_poison(d, cfg, 11, &diag);
    REQUIRE(out.size() == 85);
    CHECK(out.features.topRows(60) == d.features);

    VectorXd lo = d.features.colwise().minCoeff();
    VectorXd hi = d.features.colwise().maxCoeff();
    for (long i = 60; i < out.size(); ++i) {
        CHECK(out.labels(i) == 0);
        for (long j = 0; j < 3; ++j) {
            CHECK(out.features(i, j) >= lo(j) - 1e-12);
            CHECK(out.features(i, j) <= hi(j) + 1e-12);
        }
    }
    CHECK(!diag.disc_accuracy.empty());
    for (double a : diag.disc_accuracy) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("gan_poison label policies stay within the binary domain") {
    datahub::Dataset d;
    Rng rng(3);
    d.features.resize(40, 2);
    d.labels.resize(40);
    for (long i = 0; i < 40; ++i) {
        d.features(i, 0) = rng.normal();
        d.features(i, 1) = rng.normal();
        d.labels(i) = static_cast<int>(i % 2);
    }
    for (auto policy :
         {FakeLabelPolicy::SingleLabel, FakeLabelPolicy::MixedLabel, FakeLabelPolicy::Confusion}) {
        GanConfig cfg;
        cfg.steps = 30;
        cfg.n_fake = 10;
        cfg.fake_label = policy;
        const auto out = gan_poison(d, cfg, 5);
        REQUIRE(out.size() == 50);
        for (long i = 0; i < out.size(); ++i) {
            CHECK((out.labels(i) == 0 || out.labels(i) == 1));
        }
    }
    CHECK_THROWS_AS(gan_poison(datahub::Dataset{}, GanConfig{}, 1), std::invalid_argument);
}

TEST_CASE("gan_poison n_fake zero defaults to the real sample count and is deterministic") {
    datahub::Dataset d;
    Rng rng(21);
    d.features.resize(30, 2);
    d.labels.resize(30);
    for (long i = 0; i < 30; ++i) {
        d.features(i, 0) = rng.normal();
        d.features(i, 1) = rng.normal();
        d.labels(i) = static_cast<int>(i % 2);
    }
    GanConfig cfg;
    cfg.steps = 20;
    const auto a = gan_poison(d, cfg, 8);
    const auto b = gan_poison(d, cfg, 8);
    CHECK(a.size() == 60);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
}

TEST_CASE("gan training pushes the discriminator toward chance on a toy distribution") {
    datahub::Dataset d;
    Rng rng(15);
    d.features.resize(120, 2);
    d.labels.resize(120);
    for (long i = 0; i < 120; ++i) {
        d.features(i, 0) = 1.0 + 0.5 * rng.normal();
        d.features(i, 1) = -1.0 + 0.5 * rng.normal();
        d.labels(i) = static_cast<int>(i % 2);
    }
    GanConfig cfg;
    cfg.steps = 200;
    cfg.n_fake = 50;
    GanDiagnostics diag;
    gan_poison(d, cfg, 77, &diag);
    REQUIRE(diag.disc_accuracy.size() >= 2);
    const double early = diag.disc_accuracy.front();
    const double late = diag.disc_accuracy.back();
    CHECK(std::abs(late - 0.5) <= std::abs(early - 0.5) + 0.15);
}
