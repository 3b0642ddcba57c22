#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eyemod/dataset.hpp"
#include "eyemod/error.hpp"
#include "eyemod/report.hpp"

namespace eyemod {

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 128;
  std::size_t channels = 2;
  std::size_t class_count = kSchemeCount;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> block_channels{16, 32, 64};
  bool residual = true;
  std::uint64_t init_seed = 1;
  /// Convolution weights start as N(0, (init_gain^2) * 2 / fan_in). Every
  /// convolution feeds a batch norm, so this scale leaves the forward pass
  /// unchanged and sets the effective step size (lr / |w|^2).
  double init_gain = 0.2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  bool eval_each_epoch = true;
  std::uint64_t shuffle_seed = 1;

  void validate() const;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningStatMomentum = 0.1;

template <class T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> velocity;  // SGDM state, same shape as value

  bool operator==(const Param&) const = default;
};

/// Non-trained state (batch-norm running statistics).
template <class T>
struct Buffer {
  std::string name;
  std::vector<T> value;

  bool operator==(const Buffer&) const = default;
};

template <class T>
struct BasicModelParams {
  ModelConfig config;
  std::vector<std::string> class_names;
  std::vector<Param<T>> params;
  std::vector<Buffer<T>> buffers;

  Param<T>& param(std::string_view name);
  const Param<T>& param(std::string_view name) const;
  bool operator==(const BasicModelParams&) const = default;
};

using ModelParams = BasicModelParams<float>;

template <class T>
using Gradients = std::vector<std::vector<T>>;  // parallel to params

/// Fan-in scaled Gaussian convolutions, unit/zero batch-norm affine, zero
/// final affine layer.
template <class T>
BasicModelParams<T> init_params(const ModelConfig& cfg);

template <class To, class From>
BasicModelParams<To> convert_params(const BasicModelParams<From>& p);

enum class Mode { Train, Eval };

/// Intermediate tensors kept for the backward pass.
template <class T>
struct ForwardCache {
  std::vector<std::vector<T>> tensors;
  std::vector<std::vector<T>> bn_mean;
  std::vector<std::vector<T>> bn_var;
  std::vector<std::vector<T>> bn_inv_std;
  std::vector<T> features;
};

template <class T>
struct ForwardResult {
  std::size_t batch = 0;
  std::size_t classes = 0;
  std::vector<T> logits;  // batch x classes
  ForwardCache<T> cache;
};

/// Stem conv (3x3, stride 2) + BN + ReLU, then per block conv 3x3 stride 2
/// + BN + ReLU with an optional residual conv 3x3 + BN on an identity
/// shortcut, global average pool and a final affine layer. input is laid
/// out (sample, channel, row, column). Throws ShapeError on a size mismatch.
template <class T>
ForwardResult<T> forward(const BasicModelParams<T>& params, std::span<const T> input,
                         std::size_t batch, Mode mode);

template <class T>
std::vector<T> softmax(std::span<const T> logits, std::size_t classes);

template <class T>
struct SoftmaxLoss {
  T loss;
  std::vector<T> dlogits;  // (softmax - one_hot) / batch
};

/// Mean softmax cross-entropy. Throws BadLabel for labels >= classes.
template <class T>
SoftmaxLoss<T> softmax_cross_entropy(std::span<const T> logits, std::size_t classes,
                                     std::span<const int> labels);

template <class T>
struct LossAndGrad {
  T loss;
  Gradients<T> grads;
  ForwardResult<T> forward;
};

/// Training-mode forward pass and reverse-mode gradients of every parameter.
template <class T>
LossAndGrad<T> loss_and_grad(const BasicModelParams<T>& params, std::span<const T> input,
                             std::size_t batch, std::span<const int> labels);

/// v <- momentum * v + g; w <- w - lr * v. Throws Diverged on a non-finite
/// gradient, leaving params untouched.
template <class T>
void sgdm_step(BasicModelParams<T>& params, const Gradients<T>& grads, const TrainConfig& cfg);

/// Folds the batch statistics of a training forward pass into the running
/// averages.
template <class T>
void update_running_stats(BasicModelParams<T>& params, const ForwardCache<T>& cache);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

/// Thrown when training hits a non-finite loss or gradient; carries the
/// metrics of the completed epochs.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochMetrics> partial)
      : Error(ErrorCode::Diverged, what), partial_(std::move(partial)) {}
  const std::vector<EpochMetrics>& partial_metrics() const noexcept { return partial_; }

 private:
  std::vector<EpochMetrics> partial_;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> metrics;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Number of optimizer steps train() takes on a split of n records.
std::size_t planned_steps(std::size_t n, const TrainConfig& cfg) noexcept;

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const DatasetContainer& data, const EpochCallback& on_epoch = {});

/// Class-index predictions (argmax of the eval-mode logits).
std::vector<int> predict(const ModelParams& params, const Batch& batch);

struct Evaluation {
  std::vector<ConfusionMatrix> per_snr;  // one per SNR table entry, empty ones included
  ConfusionMatrix pooled;
  double accuracy = 0.0;
  AccuracyTable table() const;
};

/// Throws EmptySplit for an empty split; ShapeError if the model and the
/// container disagree on classes or dimensions.
Evaluation evaluate(const ModelParams& params, const DatasetContainer& data, Split split);

/// Little-endian checkpoint: magic, config echo, class names, named arrays.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace eyemod
