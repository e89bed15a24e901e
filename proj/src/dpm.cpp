#include "dpmface/dpm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dpmface/container.hpp"
#include "dpmface/error.hpp"
#include "dpmface/rng.hpp"

namespace dpmface::dpm {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  return n;
}

void validate_layer_dims(const std::vector<int>& layer_dims) {
  if (layer_dims.size() < 3) throw InvalidParameter("network needs at least one hidden layer");
  if (layer_dims.front() != layer_dims.back()) {
    throw InvalidParameter("network input and output widths must match");
  }
  for (int d : layer_dims) {
    if (d < 1) throw InvalidParameter("layer widths must be positive");
  }
}

Mlp zeros(const std::vector<int>& layer_dims) {
  validate_layer_dims(layer_dims);
  Mlp net;
  net.layer_dims = layer_dims;
  const std::size_t layers = layer_dims.size() - 1;
  for (std::size_t k = 0; k < layers; ++k) {
    net.weights.push_back(Eigen::MatrixXd::Zero(layer_dims[k + 1], layer_dims[k]));
    if (k + 1 < layers) net.biases.push_back(Eigen::VectorXd::Zero(layer_dims[k + 1]));
  }
  return net;
}

double glorot_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0) / std::sqrt(static_cast<double>(fan_in + fan_out));
}

Mlp glorot_init(const std::vector<int>& layer_dims, std::uint64_t seed) {
  Mlp net = zeros(layer_dims);
  Rng rng(seed);
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    auto& w = net.weights[k];
    const double bound = glorot_bound(layer_dims[k], layer_dims[k + 1]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform(rng, -bound, bound);
    }
  }
  return net;
}

ForwardResult forward(const Mlp& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dims()) throw InvalidInput("network input dimension mismatch");
  ForwardResult out;
  out.hidden.reserve(net.biases.size() + 1);
  out.hidden.push_back(x);
  for (std::size_t k = 0; k < net.biases.size(); ++k) {
    out.hidden.push_back((net.weights[k] * out.hidden.back() + net.biases[k]).array().tanh().matrix());
  }
  out.output = net.weights.back() * out.hidden.back();
  return out;
}

namespace {

// Activations of every layer for a column batch; acts[0] is the input.
std::vector<Eigen::MatrixXd> forward_all(const Mlp& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.input_dims()) throw InvalidInput("network input dimension mismatch");
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(net.weights.size() + 1);
  acts.push_back(inputs);
  for (std::size_t k = 0; k < net.biases.size(); ++k) {
    Eigen::MatrixXd z = net.weights[k] * acts.back();
    z.colwise() += net.biases[k];
    acts.push_back(z.array().tanh().matrix());
  }
  acts.push_back(net.weights.back() * acts.back());
  return acts;
}

void check_batch(const Mlp& net, const PairSet& batch) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (batch.targets.cols() != batch.sources.cols()) throw InvalidInput("source/target pair count mismatch");
  if (batch.sources.rows() != net.input_dims() || batch.targets.rows() != net.output_dims()) {
    throw InvalidInput("pair dimension does not match network");
  }
}

double regularizer(const Mlp& net, const Regularization& reg) {
  if (reg.lambda == 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < net.biases.size(); ++k) {
    sum += net.weights[k].squaredNorm() + net.biases[k].squaredNorm();
  }
  if (reg.include_output_layer) sum += net.weights.back().squaredNorm();
  return reg.lambda / net.hidden_layers() * sum;
}

}  // namespace

Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs) {
  return std::move(forward_all(net, inputs).back());
}

double data_loss(const Mlp& net, const PairSet& batch) {
  check_batch(net, batch);
  return (forward_batch(net, batch.sources) - batch.targets).squaredNorm() /
         static_cast<double>(batch.size());
}

double loss(const Mlp& net, const PairSet& batch, const Regularization& reg) {
  return data_loss(net, batch) + regularizer(net, reg);
}

double loss_and_gradient(const Mlp& net, const PairSet& batch, const Regularization& reg,
                         Gradient& grad) {
  check_batch(net, batch);
  const auto m = static_cast<double>(batch.size());
  const std::size_t n_hidden = net.biases.size();
  const std::vector<Eigen::MatrixXd> acts = forward_all(net, batch.sources);

  const Eigen::MatrixXd residual = acts.back() - batch.targets;
  const double j = residual.squaredNorm() / m + regularizer(net, reg);

  grad.weights.resize(net.weights.size());
  grad.biases.resize(n_hidden);
  const double reg_scale = 2.0 * reg.lambda / static_cast<double>(n_hidden);

  Eigen::MatrixXd delta = (2.0 / m) * residual;
  grad.weights.back().noalias() = delta * acts[n_hidden].transpose();
  if (reg.include_output_layer) grad.weights.back() += reg_scale * net.weights.back();

  for (std::size_t k = n_hidden; k-- > 0;) {
    // Back through the linear map, then through tanh' = 1 - h^2.
    Eigen::MatrixXd back = net.weights[k + 1].transpose() * delta;
    delta = back.array() * (1.0 - acts[k + 1].array().square());
    grad.weights[k].noalias() = delta * acts[k].transpose();
    grad.weights[k] += reg_scale * net.weights[k];
    grad.biases[k] = delta.rowwise().sum() + reg_scale * net.biases[k];
  }
  return j;
}

Gradient gradient(const Mlp& net, const PairSet& batch, const Regularization& reg) {
  Gradient g;
  loss_and_gradient(net, batch, reg, g);
  return g;
}

// ---------------------------------------------------------------------------

InputNormalizer InputNormalizer::identity(int dims) {
  return {Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)};
}

InputNormalizer InputNormalizer::fit(const Eigen::MatrixXd& columns, int count) {
  InputNormalizer norm = identity(static_cast<int>(columns.rows()));
  const auto n = static_cast<double>(columns.cols());
  if (columns.cols() < 2) return norm;
  for (int r = 0; r < std::min<int>(count, static_cast<int>(columns.rows())); ++r) {
    const double mean = columns.row(r).sum() / n;
    const double var = (columns.row(r).array() - mean).square().sum() / (n - 1.0);
    norm.shift[r] = mean;
    norm.scale[r] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return norm;
}

Eigen::MatrixXd InputNormalizer::apply(const Eigen::MatrixXd& columns) const {
  if (columns.rows() != shift.size()) throw InvalidInput("normalizer dimension mismatch");
  return (columns.colwise() - shift).array().colwise() * scale.array();
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidParameter("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidParameter("batch_size must be >= 1");
  if (epochs < 1) throw InvalidParameter("epochs must be >= 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw InvalidParameter("holdout_fraction must be in [0, 1)");
  }
  if (patience < 1) throw InvalidParameter("patience must be >= 1");
  if (!(plateau_tolerance >= 0.0)) throw InvalidParameter("plateau_tolerance must be >= 0");
}

Eigen::VectorXd DpmModel::map(const Eigen::VectorXd& x) const {
  return forward_batch(net, input.apply(x)).col(0);
}

Eigen::MatrixXd DpmModel::map_rows(const Eigen::MatrixXd& rows) const {
  return forward_batch(net, input.apply(rows.transpose())).transpose();
}

namespace {

constexpr std::uint32_t kDpmVersion = 1;
constexpr const char* kActivationTag = "tanh";

PairSet select_columns(const PairSet& pairs, std::span<const Eigen::Index> idx) {
  PairSet out;
  out.sources.resize(pairs.sources.rows(), static_cast<Eigen::Index>(idx.size()));
  out.targets.resize(pairs.targets.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.sources.col(static_cast<Eigen::Index>(i)) = pairs.sources.col(idx[i]);
    out.targets.col(static_cast<Eigen::Index>(i)) = pairs.targets.col(idx[i]);
  }
  return out;
}

void sgd_step(Mlp& net, const Gradient& g, double rate) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) net.weights[k] -= rate * g.weights[k];
  for (std::size_t k = 0; k < net.biases.size(); ++k) net.biases[k] -= rate * g.biases[k];
}

}  // namespace

std::vector<unsigned char> DpmModel::serialize() const {
  BinaryWriter w(kDpmMagic, kDpmVersion);
  w.dims(net.layer_dims);
  w.str(kActivationTag);
  for (const auto& m : net.weights) w.mat(m);
  for (const auto& b : net.biases) w.vec(b);
  w.vec(input.shift);
  w.vec(input.scale);
  w.f64(config.lambda);
  w.f64(config.learning_rate);
  w.i64(config.batch_size);
  w.i64(config.epochs);
  w.u64(config.seed);
  w.u32(config.shuffle);
  w.u32(config.regularize_output);
  w.u32(config.standardize_inputs);
  w.f64(config.plateau_tolerance);
  w.f64(config.holdout_fraction);
  w.i64(config.patience);
  w.str(source_pca_id);
  w.str(target_pca_id);
  return w.bytes();
}

DpmModel DpmModel::deserialize(std::vector<unsigned char> bytes) {
  BinaryReader r(std::move(bytes), kDpmMagic, kDpmVersion);
  DpmModel m;
  const std::vector<int> dims = r.dims();
  validate_layer_dims(dims);
  if (r.str() != kActivationTag) throw IoError("unsupported activation in model file");
  m.net = zeros(dims);
  for (auto& w : m.net.weights) {
    Eigen::MatrixXd loaded = r.mat();
    if (loaded.rows() != w.rows() || loaded.cols() != w.cols()) throw IoError("weight shape mismatch in model file");
    w = std::move(loaded);
  }
  for (auto& b : m.net.biases) {
    Eigen::VectorXd loaded = r.vec();
    if (loaded.size() != b.size()) throw IoError("bias shape mismatch in model file");
    b = std::move(loaded);
  }
  m.input.shift = r.vec();
  m.input.scale = r.vec();
  if (m.input.shift.size() != dims.front() || m.input.scale.size() != dims.front()) {
    throw IoError("normalizer shape mismatch in model file");
  }
  m.config.lambda = r.f64();
  m.config.learning_rate = r.f64();
  m.config.batch_size = static_cast<int>(r.i64());
  m.config.epochs = static_cast<int>(r.i64());
  m.config.seed = r.u64();
  m.config.shuffle = r.u32() != 0;
  m.config.regularize_output = r.u32() != 0;
  m.config.standardize_inputs = r.u32() != 0;
  m.config.plateau_tolerance = r.f64();
  m.config.holdout_fraction = r.f64();
  m.config.patience = static_cast<int>(r.i64());
  m.source_pca_id = r.str();
  m.target_pca_id = r.str();
  r.expect_end();
  return m;
}

void DpmModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

DpmModel DpmModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

TrainResult train(const PairSet& pairs, const TrainConfig& config, const std::vector<int>& layer_dims) {
  config.validate();
  validate_layer_dims(layer_dims);
  if (pairs.sources.rows() != layer_dims.front() || pairs.targets.rows() != layer_dims.back() ||
      pairs.sources.cols() != pairs.targets.cols()) {
    throw InvalidInput("training pairs do not match the network shape");
  }

  Rng rng(mix_seed(config.seed, 1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pairs.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Eigen::Index> holdout_idx;
  auto n_holdout = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(order.size())));
  if (n_holdout > 0) {
    shuffle(std::span(order), rng);
    holdout_idx.assign(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
    order.resize(order.size() - n_holdout);
    std::sort(holdout_idx.begin(), holdout_idx.end());
    std::sort(order.begin(), order.end());
  }
  if (order.size() < static_cast<std::size_t>(config.batch_size)) {
    throw InvalidParameter("fewer training pairs than batch_size");
  }

  // Standardization statistics come from the training split only. The last
  // two input rows are the block position, already in [-1, 1].
  const PairSet train_raw = select_columns(pairs, order);
  const int d = layer_dims.front();
  const int standardized = config.standardize_inputs ? std::max(d - features::kPositionDims, 0) : 0;
  TrainResult result;
  result.model.input = InputNormalizer::fit(train_raw.sources, standardized);
  result.model.config = config;

  PairSet train_set{result.model.input.apply(train_raw.sources), train_raw.targets};
  PairSet holdout;
  if (!holdout_idx.empty()) {
    holdout = select_columns(pairs, holdout_idx);
    holdout.sources = result.model.input.apply(holdout.sources);
  }

  Mlp net = glorot_init(layer_dims, config.seed);
  const Regularization reg{config.lambda, config.regularize_output};
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(train_set.size()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});

  double rate = config.learning_rate;
  double best_train = std::numeric_limits<double>::infinity();
  double best_holdout = std::numeric_limits<double>::infinity();
  Mlp best_net = net;
  int stale = 0;
  Gradient grad;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) shuffle(std::span(perm), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + static_cast<std::size_t>(config.batch_size) <= perm.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const PairSet batch =
          select_columns(train_set, std::span(perm).subspan(start, static_cast<std::size_t>(config.batch_size)));
      loss_sum += loss_and_gradient(net, batch, reg, grad);
      sgd_step(net, grad, rate);
      ++batches;
    }
    const double epoch_loss = loss_sum / batches;
    if (!std::isfinite(epoch_loss)) throw NumericalFailure("training diverged", epoch);
    result.log.epoch_loss.push_back(epoch_loss);
    result.log.learning_rate.push_back(rate);

    if (epoch > 0 && epoch_loss > best_train * (1.0 - config.plateau_tolerance)) rate *= 0.5;
    best_train = std::min(best_train, epoch_loss);

    if (holdout.size() > 0) {
      const double h = data_loss(net, holdout);
      result.log.holdout_loss.push_back(h);
      if (h < best_holdout) {
        best_holdout = h;
        best_net = net;
        result.log.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    } else {
      best_net = net;
      result.log.best_epoch = epoch;
    }
  }
  result.model.net = std::move(best_net);
  return result;
}

TrainResult train_with_lambda_search(const PairSet& pairs, const TrainConfig& config,
                                     const std::vector<int>& layer_dims,
                                     const std::vector<double>& lambdas) {
  if (lambdas.empty()) return train(pairs, config, layer_dims);
  if (config.holdout_fraction <= 0.0) throw InvalidParameter("lambda search needs a held-out split");
  TrainResult best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (double lambda : lambdas) {
    TrainConfig c = config;
    c.lambda = lambda;
    TrainResult r = train(pairs, c, layer_dims);
    const double h = r.log.holdout_loss.empty()
                         ? std::numeric_limits<double>::infinity()
                         : *std::min_element(r.log.holdout_loss.begin(), r.log.holdout_loss.end());
    if (h < best_loss) {
      best_loss = h;
      best = std::move(r);
    }
  }
  return best;
}

features::DescriptorSet map_descriptor_set(const DpmModel& model, const features::DescriptorSet& dset) {
  if (dset.modality != Modality::source) {
    throw InvalidInput("only source-modality descriptor sets can be mapped (got " +
                       std::string(to_string(dset.modality)) + ")");
  }
  if (dset.dims() != model.net.input_dims()) throw InvalidInput("descriptor dimension does not match model");
  features::DescriptorSet out = dset;
  out.values = model.map_rows(dset.values);
  out.modality = Modality::mapped_source;
  return out;
}

}  // namespace dpmface::dpm
