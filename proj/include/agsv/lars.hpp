#pragma once

#include "agsv/params.hpp"

namespace agsv {

struct LarsConfig {
  double learning_rate = 0.075;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double trust_coefficient = 0.001;
  double epsilon = 0.0;

  /// Throws ParameterError.
  void validate() const;
};

/// Momentum buffers, aligned with the parameter set they were created for.
struct LarsState {
  ParamSet momentum;
  bool initialized = false;
};

/// Layer-wise adaptive rate scaling, applied per named tensor:
///
///   local = trust * |w| / (|g| + wd * |w| + eps)
///   m     = momentum * m + local * (g + wd * w)
///   w     = w - lr * m
///
/// Tensors flagged exclude_from_adaptation use local = 1 and no weight decay.
/// When |w| or the denominator is zero the local rate falls back to 1.
/// Throws OptimError naming the first tensor with a non-finite gradient; in
/// that case nothing is updated.
void lars_step(ParamSet& params, const ParamSet& grads, LarsState& state,
               const LarsConfig& config);

}  // namespace agsv
