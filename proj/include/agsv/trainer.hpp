#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agsv/augment.hpp"
#include "agsv/image.hpp"
#include "agsv/lars.hpp"
#include "agsv/linalg.hpp"
#include "agsv/model.hpp"
#include "agsv/params.hpp"

namespace agsv {

/// Reference schedule: learning rate 0.075 at a batch of 2048 views.
inline constexpr double kReferenceLearningRate = 0.075;
inline constexpr double kReferenceBatchViews = 2048.0;
inline constexpr double kMinLearningRate = 1e-3;

/// Linear scaling of the reference rate to 2N views, floored at 1e-3.
double scaled_learning_rate(std::size_t batch_pairs);

struct TrainConfig {
  std::size_t batch_pairs = 16;
  std::size_t epochs = 30;
  double temperature = 0.1;
  double learning_rate = scaled_learning_rate(16);
  double weight_decay = 1e-4;
  double trust_coefficient = 1.0;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  ModelConfig model;

  /// Throws ParameterError.
  void validate() const;
  LarsConfig lars() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct EncoderCheckpoint {
  TrainConfig config;  // includes the architecture
  ParamSet params;     // "encoder.*" then "projector.*"
  std::uint32_t format_version = kCheckpointFormatVersion;

  const ModelConfig& model() const noexcept { return config.model; }
  int embed_dim() const { return config.model.embed_dim(); }
  int proj_dim() const { return config.model.proj_dim; }

  /// Throws ParameterError: layout must match the architecture (three
  /// projector affine layers) and all values must be finite.
  void validate() const;

  friend bool operator==(const EncoderCheckpoint&, const EncoderCheckpoint&) = default;
};

/// Freshly initialized checkpoint for `config` (seeded by config.seed).
EncoderCheckpoint initial_checkpoint(const TrainConfig& config);

Matrix encoder_forward(const EncoderCheckpoint& checkpoint, std::span<const Image> images);
Matrix projector_forward(const EncoderCheckpoint& checkpoint, const Matrix& h);

/// Representations for downstream use; the projection head is not applied.
Matrix encode(const EncoderCheckpoint& checkpoint, std::span<const Image> images);

/// Gradient of sum(d_h .* encode(images)) with respect to the encoder
/// tensors; projector entries are zero. Aligned with checkpoint.params.
/// Throws ShapeError when d_h does not match the representations.
ParamSet encoder_gradient(const EncoderCheckpoint& checkpoint, std::span<const Image> images,
                          const Matrix& d_h);

using LossCurve = std::vector<double>;  // mean loss per epoch, epoch 1 first

struct PretrainResult {
  EncoderCheckpoint checkpoint;
  LossCurve loss_curve;
};

/// Contrastive pretraining: per epoch, a seeded shuffle split into batches of
/// batch_pairs images (a trailing partial batch is dropped unless it is the
/// only one); each batch runs make_views -> encoder -> projector -> NT-Xent
/// -> backward -> lars_step. Throws DataError on an empty dataset.
PretrainResult pretrain(std::span<const Image> dataset, const TrainConfig& config);

/// One optimizer step on one batch; returns the batch loss. Exposed for tests.
double train_step(EncoderCheckpoint& checkpoint, LarsState& state,
                  std::span<const Image> batch, std::uint64_t stream);

/// Gradient of the batch loss with respect to every parameter, for fixed
/// views. Exposed for gradient checks.
std::pair<double, ParamSet> loss_gradient(const EncoderCheckpoint& checkpoint,
                                          std::span<const Image> views);

struct SyntheticCorpus {
  std::vector<Image> images;
  std::vector<int> labels;  // family index
};

/// Two visually distinct families: bright, high-frequency textured images
/// (label 0) and dark, smooth low-contrast images (label 1), with per-image
/// random tint, texture, gradient, and noise.
SyntheticCorpus two_family_corpus(std::size_t per_family, int height, int width, int channels,
                                  std::uint64_t seed);

}  // namespace agsv
