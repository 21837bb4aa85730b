#pragma once

// Fine-tuning on frozen representations: classification heads trained with
// cross-entropy and Adam, plus the label-efficiency and convergence harnesses.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agsv/linalg.hpp"
#include "agsv/params.hpp"
#include "agsv/trainer.hpp"

namespace agsv {

/// Learning rate used for classification fine-tuning at full scale.
inline constexpr double kReferenceFinetuneLearningRate = 1e-5;

struct LabeledEmbeddingSet {
  Matrix embeddings;        // M rows
  std::vector<int> labels;  // M class indices in [0, class_count)
  int class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  /// Throws DataError (M < C, C < 2, row/label count mismatch) or LabelError.
  void validate() const;
  /// Rows in the given order; class_count is kept.
  LabeledEmbeddingSet subset(std::span<const std::size_t> indices) const;
};

/// -log softmax(logits)[label], max-shifted. Throws LabelError.
double cross_entropy(std::span<const double> logits, int label);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  ParamSet first_moment;
  ParamSet second_moment;
  std::size_t step = 0;
};

/// Bias-corrected Adam. Throws OptimError naming the first tensor with a
/// non-finite gradient; nothing is updated in that case.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               const AdamConfig& config);

/// Affine classifier (hidden == 0) or one ReLU hidden layer. Inputs pass
/// through (x - feature_mean) / feature_scale first; identity unless the
/// config asks for standardization.
struct HeadModel {
  int input_dim = 0;
  int hidden = 0;
  int class_count = 0;
  Vector feature_mean;   // subtracted before the first layer
  Vector feature_scale;  // divided after centering
  ParamSet params;
  AdamState optimizer;

  /// Zero weights, identity standardization.
  static HeadModel zeros(int input_dim, int class_count, int hidden = 0);

  Matrix logits(const Matrix& embeddings) const;
  /// Argmax per row; ties go to the lowest class index.
  std::vector<int> predict(const Matrix& embeddings) const;
};

struct FinetuneConfig {
  int hidden = 0;  // 0: linear probe
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  AdamConfig adam;
  bool standardize = false;  // per-feature z-scoring fitted on the training set
  std::optional<double> loss_threshold;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RunReport {
  std::vector<double> loss_curve;  // mean training cross-entropy per epoch
  double accuracy = 0.0;           // on the training set unless stated otherwise
  std::optional<std::size_t> epochs_to_threshold;  // 1-based

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

struct FinetuneResult {
  HeadModel model;
  RunReport report;
};

/// Trains a head on frozen embeddings. Throws DataError on an empty set.
FinetuneResult finetune_head(const LabeledEmbeddingSet& data, const FinetuneConfig& config);

/// Fraction of argmax-correct rows. Throws ShapeError on a width mismatch.
double evaluate(const HeadModel& model, const LabeledEmbeddingSet& data);

/// Per class, the first round(fraction * count) members of a seeded
/// permutation. Throws DataError when a class would receive no samples and
/// ParameterError when fraction is outside (0, 1].
std::vector<std::size_t> stratified_subsample(std::span<const int> labels, int class_count,
                                              double fraction, std::uint64_t seed);

struct Split {
  LabeledEmbeddingSet train;
  LabeledEmbeddingSet test;
};

/// Stratified train/test split; test receives round(test_fraction * count)
/// of each class.
Split stratified_split(const LabeledEmbeddingSet& data, double test_fraction, std::uint64_t seed);

struct FractionResult {
  double fraction = 0.0;
  double accuracy = 0.0;  // on the held-out test split
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  RunReport report;
};

/// Holds out a stratified test split of `full`, then for each fraction trains
/// a head on a stratified subsample of the remaining pool and evaluates it on
/// the held-out split.
std::vector<FractionResult> label_efficiency_experiment(const LabeledEmbeddingSet& full,
                                                        std::span<const double> fractions,
                                                        const FinetuneConfig& config,
                                                        double test_fraction = 0.2);

/// Same head, optimizer and seed on both embedding sets; reports first epoch
/// whose mean loss falls below `threshold` for each.
std::pair<RunReport, RunReport> convergence_compare(const Matrix& ssl_embeddings,
                                                    const Matrix& random_embeddings,
                                                    std::span<const int> labels, int class_count,
                                                    double threshold, FinetuneConfig config);

// ---- whole-network fine-tuning ----

struct WholeNetworkConfig {
  FinetuneConfig head;                  // head, batching, epochs, threshold, seed
  double encoder_learning_rate = 1e-4;  // Adam on the encoder tensors; 0 freezes them

  void validate() const;
};

struct WholeNetworkResult {
  EncoderCheckpoint encoder;  // projector tensors untouched
  HeadModel head;
  RunReport report;           // accuracy on the training images
};

/// Trains encoder and head jointly on cross-entropy. Head initialization,
/// batch order and head optimizer are those of finetune_head on
/// encode(start, images); standardization statistics are fitted once on the
/// starting embeddings. With encoder_learning_rate 0 it reduces to
/// finetune_head. Throws DataError on an empty set, LabelError on bad labels.
WholeNetworkResult finetune_whole_network(const EncoderCheckpoint& start, std::span<const Image> images,
                                          std::span<const int> labels, int class_count,
                                          const WholeNetworkConfig& config);

struct WholeNetworkGradient {
  double loss = 0.0;  // mean cross-entropy
  ParamSet encoder;   // aligned with the checkpoint's params
  ParamSet head;      // aligned with the head's params
};

/// Exposed for gradient checks.
WholeNetworkGradient whole_network_gradient(const EncoderCheckpoint& encoder, const HeadModel& head,
                                            std::span<const Image> images, std::span<const int> labels);

/// Train/test indices of a stratified split, as used by stratified_split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    std::span<const int> labels, int class_count, double test_fraction, std::uint64_t seed);

/// label_efficiency_experiment with whole-network fine-tuning: the same
/// split and subsample seeds, evaluated with the tuned encoder on the
/// held-out images.
std::vector<FractionResult> whole_network_label_efficiency(const EncoderCheckpoint& start,
                                                           std::span<const Image> images,
                                                           std::span<const int> labels, int class_count,
                                                           std::span<const double> fractions,
                                                           const WholeNetworkConfig& config,
                                                           double test_fraction = 0.2);

/// "epoch,loss" rows followed by "# accuracy=...,epochs_to_threshold=...".
std::string run_report_csv(const RunReport& report);

}  // namespace agsv
