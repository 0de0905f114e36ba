#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/datahub.hpp"

namespace fedsim::neuralcore {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { ReLU, Sigmoid, Identity };

// Layer widths plus the activation pair. Hidden layers share one activation,
// the output layer has its own. Binary classifiers use ReLU/Sigmoid with an
// output width of 1 and at least two hidden layers (a penultimate layer must
// exist distinct from input and output).
struct LayerSpec {
    std::vector<int> sizes;
    Activation hidden = Activation::ReLU;
    Activation output = Activation::Sigmoid;

    int input_width() const { return sizes.front(); }
    int output_width() const { return sizes.back(); }
    int n_layers() const { return static_cast<int>(sizes.size()) - 1; }

    bool operator==(const LayerSpec&) const = default;
};

// Throws std::invalid_argument if the spec cannot serve as a local IDS model.
void validate_classifier_spec(const LayerSpec& spec);

struct ModelWeights {
    struct Layer {
        MatrixXd w;  // out x in
        VectorXd b;  // out
    };
    std::vector<Layer> layers;
    LayerSpec spec;
};

enum class Optimizer { SGD, Adam };

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 5;
    int batch_size = 1024;
    Optimizer optimizer = Optimizer::SGD;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    std::uint64_t seed = 0;
};

struct MetricsReport {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Bounded-uniform fan-in initialization, deterministic per (spec, seed).
// Validates the classifier contract.
ModelWeights init_network(const LayerSpec& spec, std::uint64_t seed);

// Same initialization without the classifier shape checks; used for the
// AutoEncoder and GAN substrates.
ModelWeights init_generic(const LayerSpec& spec, std::uint64_t seed);

// Per-layer post-activation values, acts[0] being the input batch.
struct ForwardCache {
    std::vector<MatrixXd> acts;
};

// batch is samples x input_width; returns samples x output_width.
MatrixXd forward(const ModelWeights& w, const MatrixXd& batch, ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<ModelWeights::Layer> layers;
    MatrixXd input_grad;  // dLoss/dInput, samples x input_width
};

// Backpropagation from a gradient on the output layer's *pre-activation*
// (BCE+sigmoid and MSE+identity both reduce to simple residuals there).
Gradients backprop_pre(const ModelWeights& w, const ForwardCache& cache, const MatrixXd& delta_pre);

// Mean binary cross-entropy residual: delta_pre = (p - y) / n.
Gradients grad_bce(const ModelWeights& w, const ForwardCache& cache, const VectorXd& labels);

// Mean squared error, L = (1/2n) sum ||pred - target||^2.
Gradients grad_mse(const ModelWeights& w, const ForwardCache& cache, const MatrixXd& target);

double bce_loss(const MatrixXd& pred, const VectorXd& labels);
double mse_loss(const MatrixXd& pred, const MatrixXd& target);

// Mini-batch optimization of binary cross-entropy for cfg.epochs epochs.
// Batch order reshuffled per epoch from cfg.seed. The input is left unmodified.
ModelWeights train_local(const ModelWeights& w, const datahub::Dataset& data, const TrainConfig& cfg);

// Generic regression trainer (MSE) used by the AutoEncoder.
ModelWeights train_mse(const ModelWeights& w, const MatrixXd& inputs, const MatrixXd& targets,
                       const TrainConfig& cfg);

MetricsReport evaluate(const ModelWeights& w, const datahub::Dataset& data, double threshold = 0.5);

// Max relative error between analytic gradients and central finite differences.
double gradient_check(const ModelWeights& w, const datahub::Dataset& batch, double h);

// Flat little-endian float64 stream prefixed by the layer spec; bit-exact.
std::vector<std::uint8_t> serialize(const ModelWeights& w);
ModelWeights deserialize(const std::vector<std::uint8_t>& bytes);

VectorXd flatten(const ModelWeights& w);
ModelWeights unflatten(const VectorXd& v, const LayerSpec& spec);
long parameter_count(const LayerSpec& spec);

}  // namespace fedsim::neuralcore
