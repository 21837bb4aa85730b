#pragma once

// Desk-scale encoder (conv blocks + global average pool, or a perceptron for
// tiny inputs) and the 3-layer projection head used only during pretraining.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agsv/image.hpp"
#include "agsv/linalg.hpp"
#include "agsv/params.hpp"

namespace agsv {

enum class EncoderKind { kConv, kMlp };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct ModelConfig {
  EncoderKind kind = EncoderKind::kConv;
  int input_height = 16;
  int input_width = 16;
  int channels = 3;
  // Conv output channels per block, or hidden widths of the perceptron. The
  // last entry is the representation width.
  std::vector<int> widths = {16, 32};
  int proj_dim = 128;

  int embed_dim() const { return widths.empty() ? 0 : widths.back(); }
  int input_size() const { return input_height * input_width * channels; }

  /// Throws ParameterError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// He-normal weights, zero biases. Encoder tensors are prefixed "encoder.",
/// projector tensors "projector.".
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

/// Same layout as init_params, all zeros.
ParamSet zero_params(const ModelConfig& config);

/// Number of scalars in the layout, computed without allocating it.
double parameter_count(const ModelConfig& config);

/// One row of h per image. Throws ShapeError when an image does not match
/// the configured geometry.
Matrix encoder_forward(const ModelConfig& config, const ParamSet& params,
                       std::span<const Image> images);

/// One row of z per row of h. Throws ShapeError on a width mismatch.
Matrix projector_forward(const ModelConfig& config, const ParamSet& params, const Matrix& h);

}  // namespace agsv
