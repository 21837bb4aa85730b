#include "agsv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agsv/contrastive.hpp"
#include "agsv/errors.hpp"
#include "agsv/random.hpp"
#include "network.hpp"

namespace agsv {

double scaled_learning_rate(std::size_t batch_pairs) {
  const double scaled =
      kReferenceLearningRate * (2.0 * static_cast<double>(batch_pairs) / kReferenceBatchViews);
  return std::max(kMinLearningRate, scaled);
}

void TrainConfig::validate() const {
  if (batch_pairs < 2) throw ParameterError("batch_pairs must be >= 2");
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
  lars().validate();
  augment.validate();
  model.validate();
}

LarsConfig TrainConfig::lars() const {
  LarsConfig c;
  c.learning_rate = learning_rate;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  c.trust_coefficient = trust_coefficient;
  return c;
}

void EncoderCheckpoint::validate() const {
  const ParamSet expected = zero_params(config.model);
  try {
    expected.check_aligned(params);
  } catch (const ShapeError& e) {
    throw ParameterError(std::string("checkpoint layout does not match its architecture: ") +
                         e.what());
  }
  std::size_t projector_layers = 0;
  for (const auto& t : params)
    if (t.name.starts_with("projector.") && t.name.ends_with(".weight")) ++projector_layers;
  if (projector_layers != 3) throw ParameterError("projector must have exactly 3 affine layers");
  if (!params.all_finite()) throw ParameterError("checkpoint holds non-finite parameters");
}

EncoderCheckpoint initial_checkpoint(const TrainConfig& config) {
  config.validate();
  EncoderCheckpoint c;
  c.config = config;
  c.params = init_params(config.model, config.seed);
  return c;
}

Matrix encoder_forward(const EncoderCheckpoint& checkpoint, std::span<const Image> images) {
  return encoder_forward(checkpoint.model(), checkpoint.params, images);
}

Matrix projector_forward(const EncoderCheckpoint& checkpoint, const Matrix& h) {
  return projector_forward(checkpoint.model(), checkpoint.params, h);
}

Matrix encode(const EncoderCheckpoint& checkpoint, std::span<const Image> images) {
  return encoder_forward(checkpoint, images);
}

ParamSet encoder_gradient(const EncoderCheckpoint& checkpoint, std::span<const Image> images,
                          const Matrix& d_h) {
  const ModelConfig& model = checkpoint.model();
  detail::EncoderTape tape;
  const Matrix h = detail::encoder_forward(model, checkpoint.params, images, &tape);
  if (d_h.rows() != h.rows() || d_h.cols() != h.cols())
    throw ShapeError("upstream gradient is " + std::to_string(d_h.rows()) + "x" +
                     std::to_string(d_h.cols()) + ", representations are " +
                     std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
  ParamSet grads = checkpoint.params.zeros_like();
  detail::encoder_backward(model, checkpoint.params, tape, d_h, grads);
  return grads;
}

std::pair<double, ParamSet> loss_gradient(const EncoderCheckpoint& checkpoint,
                                          std::span<const Image> views) {
  const ModelConfig& model = checkpoint.model();
  detail::EncoderTape enc_tape;
  detail::ProjectorTape proj_tape;
  const Matrix h = detail::encoder_forward(model, checkpoint.params, views, &enc_tape);
  const Matrix z = detail::projector_forward(model, checkpoint.params, h, &proj_tape);
  const auto result = nt_xent_loss_and_gradient(PairedBatch(z), checkpoint.config.temperature);
  ParamSet grads = checkpoint.params.zeros_like();
  const Matrix d_h =
      detail::projector_backward(model, checkpoint.params, proj_tape, result.gradient, grads);
  detail::encoder_backward(model, checkpoint.params, enc_tape, d_h, grads);
  return {result.loss.total, std::move(grads)};
}

double train_step(EncoderCheckpoint& checkpoint, LarsState& state,
                  std::span<const Image> batch, std::uint64_t stream) {
  const ViewBatch views = make_views(batch, checkpoint.config.augment, stream);
  auto [loss, grads] = loss_gradient(checkpoint, views.views);
  lars_step(checkpoint.params, grads, state, checkpoint.config.lars());
  return loss;
}

PretrainResult pretrain(std::span<const Image> dataset, const TrainConfig& config) {
  if (dataset.empty()) throw DataError("pretraining dataset is empty");
  PretrainResult result;
  result.checkpoint = initial_checkpoint(config);
  LarsState state;

  const std::size_t n = dataset.size();
  const std::size_t batch = std::min(config.batch_pairs, n);
  const std::size_t batches = n / batch;
  std::vector<std::size_t> order(n);
  std::vector<Image> members;
  members.reserve(batch);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed({config.seed, 0x5u, epoch}));
    shuffle(order, shuffler);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      members.clear();
      for (std::size_t k = 0; k < batch; ++k) members.push_back(dataset[order[b * batch + k]]);
      sum += train_step(result.checkpoint, state, members, derive_seed({epoch, b}));
    }
    result.loss_curve.push_back(sum / static_cast<double>(batches));
  }
  return result;
}

SyntheticCorpus two_family_corpus(std::size_t per_family, int height, int width, int channels,
                                  std::uint64_t seed) {
  constexpr double kPi = 3.14159265358979323846;
  SyntheticCorpus corpus;
  corpus.images.reserve(2 * per_family);
  corpus.labels.reserve(2 * per_family);
  for (std::size_t i = 0; i < 2 * per_family; ++i) {
    const int family = static_cast<int>(i % 2);
    Rng rng(derive_seed({seed, i}));
    std::vector<float> px(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
                          static_cast<std::size_t>(channels));
    double tint[3];
    double base;
    double amplitude;
    double freq;
    double noise;
    if (family == 0) {
      // Canopy-like: bright, green-leaning, strongly striped.
      base = rng.uniform(0.55, 0.8);
      tint[0] = rng.uniform(0.75, 0.95);
      tint[1] = 1.0;
      tint[2] = rng.uniform(0.6, 0.85);
      amplitude = rng.uniform(0.15, 0.25);
      freq = rng.uniform(0.9, 1.6);
      noise = 0.03;
    } else {
      // Soil-like: dark, brown-leaning, nearly flat.
      base = rng.uniform(0.15, 0.4);
      tint[0] = 1.0;
      tint[1] = rng.uniform(0.7, 0.85);
      tint[2] = rng.uniform(0.5, 0.65);
      amplitude = rng.uniform(0.0, 0.08);
      freq = rng.uniform(0.05, 0.2);
      noise = 0.01;
    }
    const double angle = rng.uniform(0.0, kPi);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double dy = std::sin(angle);
    const double dx = std::cos(angle);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double t = freq * (dx * x + dy * y) + phase;
        const double v = base + amplitude * std::sin(t);
        for (int c = 0; c < channels; ++c) {
          const double tinted = channels == 3 ? v * tint[c] : v;
          const double value = std::clamp(tinted + noise * rng.normal(), 0.0, 1.0);
          px[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
              static_cast<std::size_t>(x)) *
                 static_cast<std::size_t>(channels) +
             static_cast<std::size_t>(c)] = static_cast<float>(value);
        }
      }
    corpus.images.emplace_back(height, width, channels, std::move(px));
    corpus.labels.push_back(family);
  }
  return corpus;
}

}  // namespace agsv
