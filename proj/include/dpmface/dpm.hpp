#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmface/features.hpp"

/// The perceptual mapping network: tanh hidden layers, a bias-free linear
/// output layer, squared loss with a Frobenius regularizer, backprop and SGD.
namespace dpmface::dpm {

/// Fully connected network. weights[k] maps layer k to layer k+1 and has
/// shape layer_dims[k+1] x layer_dims[k]. Only hidden layers carry a bias.
struct Mlp {
  std::vector<int> layer_dims;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  int hidden_layers() const { return static_cast<int>(biases.size()); }
  int input_dims() const { return layer_dims.front(); }
  int output_dims() const { return layer_dims.back(); }
  std::size_t parameter_count() const;
};

/// Throws InvalidParameter unless there is at least one hidden layer, the
/// input and output widths agree, and every width is positive.
void validate_layer_dims(const std::vector<int>& layer_dims);

/// Zero-valued network of the given shape.
Mlp zeros(const std::vector<int>& layer_dims);

/// Weights ~ U[-sqrt(6)/sqrt(fan_in + fan_out), +...], biases 0.
Mlp glorot_init(const std::vector<int>& layer_dims, std::uint64_t seed);

double glorot_bound(int fan_in, int fan_out);

struct ForwardResult {
  Eigen::VectorXd output;
  /// hidden[0] is the input, hidden[k] the k-th tanh layer.
  std::vector<Eigen::VectorXd> hidden;
};

ForwardResult forward(const Mlp& net, const Eigen::VectorXd& x);

/// Column-wise forward pass (one sample per column).
Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs);

/// Training pairs stored column-wise: column i of `sources` is x_i (source
/// modality) and column i of `targets` is the corresponding t_i.
struct PairSet {
  Eigen::MatrixXd sources;
  Eigen::MatrixXd targets;

  Eigen::Index size() const { return sources.cols(); }
};

struct Regularization {
  double lambda = 0.0;
  /// Also penalize the output weights (the default follows the objective
  /// literally and sums over hidden layers only).
  bool include_output_layer = false;
};

/// J = (1/M) sum_i ||net(x_i) - t_i||^2 + (lambda/N) sum_k (||W_k||_F^2 + ||b_k||^2)
double loss(const Mlp& net, const PairSet& batch, const Regularization& reg);

/// Mean squared residual without the regularizer.
double data_loss(const Mlp& net, const PairSet& batch);

struct Gradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

Gradient gradient(const Mlp& net, const PairSet& batch, const Regularization& reg);

/// Loss and gradient from one forward pass.
double loss_and_gradient(const Mlp& net, const PairSet& batch, const Regularization& reg,
                         Gradient& grad);

/// Affine standardization applied to network inputs before the first layer.
struct InputNormalizer {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  static InputNormalizer identity(int dims);
  /// Zero mean / unit variance on the leading `count` rows of the column
  /// samples; remaining rows pass through.
  static InputNormalizer fit(const Eigen::MatrixXd& columns, int count);

  Eigen::MatrixXd apply(const Eigen::MatrixXd& columns) const;
};

struct TrainConfig {
  double lambda = 1e-4;
  double learning_rate = 0.01;
  int batch_size = 128;
  int epochs = 30;
  std::uint64_t seed = 1;
  bool shuffle = true;
  bool regularize_output = false;
  bool standardize_inputs = true;
  /// Halve the rate when the epoch mean loss improves by less than this fraction.
  double plateau_tolerance = 1e-3;
  /// Fraction of pairs held out for early stopping (0 disables).
  double holdout_fraction = 0.05;
  /// Epochs without held-out improvement before stopping.
  int patience = 5;

  /// Throws InvalidParameter for out-of-range values.
  void validate() const;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> holdout_loss;
  std::vector<double> learning_rate;
  int best_epoch = -1;
};

struct DpmModel {
  Mlp net;
  InputNormalizer input;
  TrainConfig config;
  std::string source_pca_id;
  std::string target_pca_id;

  Eigen::VectorXd map(const Eigen::VectorXd& x) const;
  /// Rows in, rows out.
  Eigen::MatrixXd map_rows(const Eigen::MatrixXd& rows) const;

  std::vector<unsigned char> serialize() const;
  static DpmModel deserialize(std::vector<unsigned char> bytes);
  void save(const std::filesystem::path& path) const;
  static DpmModel load(const std::filesystem::path& path);
};

struct TrainResult {
  DpmModel model;
  TrainLog log;
};

/// Glorot init followed by minibatch SGD. Deterministic given config.seed.
TrainResult train(const PairSet& pairs, const TrainConfig& config, const std::vector<int>& layer_dims);

/// Trains once per candidate lambda and keeps the model with the lowest
/// held-out data loss.
TrainResult train_with_lambda_search(const PairSet& pairs, const TrainConfig& config,
                                     const std::vector<int>& layer_dims,
                                     const std::vector<double>& lambdas);

/// Replaces each descriptor with the network output. Only source-modality
/// sets can be mapped.
features::DescriptorSet map_descriptor_set(const DpmModel& model, const features::DescriptorSet& dset);

}  // namespace dpmface::dpm
