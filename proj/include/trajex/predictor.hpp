#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajex/deltas.hpp"
#include "trajex/matrix.hpp"

namespace trajex {

// Encoder-decoder MLP mapping (s_G, s_L) -> s_T:
//   h_G = E_G(s_G), h_L = E_L(s_L), s_T = D([h_G, h_L])
// Every layer is followed by a rectifier except the decoder's last.
struct PredictorConfig {
    std::size_t input_dim = 1;
    std::size_t hidden_dim = 256;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    Field field = Field::u;

    friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

void validate(const PredictorConfig& cfg);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct PredictorParams {
    std::vector<DenseLayer> enc_g;
    std::vector<DenseLayer> enc_l;
    std::vector<DenseLayer> dec;

    friend bool operator==(const PredictorParams&, const PredictorParams&) = default;
};

// (out, in) of every layer in enc_g / enc_l / dec order.
struct LayerPlan {
    std::vector<std::pair<std::size_t, std::size_t>> encoder;
    std::vector<std::pair<std::size_t, std::size_t>> decoder;
};
LayerPlan layer_plan(const PredictorConfig& cfg);

// Zero-filled parameters with the configured shapes.
PredictorParams zeros_like(const PredictorConfig& cfg);

// Weights i.i.d. uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
PredictorParams init_uniform(const PredictorConfig& cfg, std::uint64_t seed);

Vector forward(const PredictorParams& p, std::span<const double> s_global, std::span<const double> s_local);

// Sum of absolute residuals over the components.
double l1_loss(std::span<const double> pred, std::span<const double> target);

// Subgradient of l1_loss(forward(...), target) for one example. sign(0) = 0
// at the L1 kink and the rectifier derivative is 0 at pre-activation 0.
PredictorParams backward(const PredictorParams& p, std::span<const double> s_global,
                         std::span<const double> s_local, std::span<const double> target);

// Batched forms: rows of the matrices are examples. batch_loss is the mean
// over examples of the per-example L1 loss; batch_gradient is its gradient.
Matrix forward_batch(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local);
double batch_loss(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local,
                  const Matrix& target);
PredictorParams batch_gradient(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local,
                               const Matrix& target, double* loss = nullptr);

struct TrainOptions {
    std::size_t hidden_dim = 256;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::uint64_t seed = 17;
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    double holdout_fraction = 0.1;
    std::size_t batch_size = 64;
};

struct TrainingLog {
    std::vector<double> train_loss;    // index 0 = before training, then per epoch
    std::vector<double> holdout_loss;  // empty when nothing was held out
    std::vector<std::string> holdout_params;
    std::size_t train_examples = 0;
    std::size_t holdout_examples = 0;

    friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

struct PredictorEntry {
    PredictorConfig config;
    PredictorParams params;
    TrainingLog log;

    friend bool operator==(const PredictorEntry&, const PredictorEntry&) = default;
};

struct BundleMetadata {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    std::size_t batch_size = 0;
    double holdout_fraction = 0.0;
    SigmaTransform sigma_transform = SigmaTransform::none;

    friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

using PredictorKey = std::pair<Field, std::size_t>;

struct PredictorBundle {
    std::map<PredictorKey, PredictorEntry> entries;
    BundleMetadata meta;

    const PredictorEntry* find(Field field, std::size_t dimension) const;

    friend bool operator==(const PredictorBundle&, const PredictorBundle&) = default;
};

// One predictor per (field, dimension) group, trained with Adam
// (beta1 0.9, beta2 0.999, eps 1e-8) on shuffled mini-batches. Parameters are
// held out by name so no checkpoint of a held-out parameter is trained on.
PredictorBundle train(const std::vector<DatasetGroup>& groups, const TrainOptions& opts);
PredictorBundle train(const Dataset& ds, const TrainOptions& opts);

// Container with "<field>/<d>/{enc_g,enc_l,dec}.<layer>.{w,b}" in F64, plus a
// sidecar holding configs and training metadata.
void save_bundle(const PredictorBundle& b, const std::filesystem::path& path);
PredictorBundle load_bundle(const std::filesystem::path& path);

// Warning text when the bundle was trained for a different extrapolation distance.
std::optional<std::string> check_bundle_k(const PredictorBundle& b, std::size_t k);

// Hex digest of the serialized bundle.
std::string bundle_id(const PredictorBundle& b);

}  // namespace trajex
