#pragma once

// Forward passes that record what the backward pass needs, and the matching
// backward passes. Internal to the trainer.

#include <span>
#include <vector>

#include "agsv/image.hpp"
#include "agsv/linalg.hpp"
#include "agsv/model.hpp"
#include "agsv/params.hpp"

namespace agsv::detail {

struct ConvRecord {
  Matrix col;  // im2col of the block input, (in_c * 9) x (h * w)
  Matrix pre;  // pre-activation, out_c x (h * w)
  int height = 0;
  int width = 0;
  bool pooled = false;
};

struct EncoderTape {
  // conv: per image, per block. mlp: one entry per layer holding the batch.
  std::vector<std::vector<ConvRecord>> conv;
  std::vector<Matrix> mlp_inputs;
  std::vector<Matrix> mlp_pre;
};

struct ProjectorTape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

Matrix encoder_forward(const ModelConfig& config, const ParamSet& params,
                       std::span<const Image> images, EncoderTape* tape);

/// Accumulates encoder gradients into `grads`.
void encoder_backward(const ModelConfig& config, const ParamSet& params, const EncoderTape& tape,
                      const Matrix& d_h, ParamSet& grads);

Matrix projector_forward(const ModelConfig& config, const ParamSet& params, const Matrix& h,
                         ProjectorTape* tape);

/// Accumulates projector gradients into `grads`; returns d(loss)/d(h).
Matrix projector_backward(const ModelConfig& config, const ParamSet& params,
                          const ProjectorTape& tape, const Matrix& d_z, ParamSet& grads);

}  // namespace agsv::detail
