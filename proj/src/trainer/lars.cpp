#include "agsv/lars.hpp"

#include <cmath>

#include "agsv/errors.hpp"

namespace agsv {

void LarsConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("LARS learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("LARS momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("LARS weight decay must be >= 0");
  if (!(trust_coefficient > 0.0)) throw ParameterError("LARS trust coefficient must be > 0");
  if (!(epsilon >= 0.0)) throw ParameterError("LARS epsilon must be >= 0");
}

void lars_step(ParamSet& params, const ParamSet& grads, LarsState& state,
               const LarsConfig& config) {
  config.validate();
  params.check_aligned(grads);
  for (const auto& g : grads)
    for (double v : g.values)
      if (!std::isfinite(v)) throw OptimError(g.name);
  if (!state.initialized) {
    state.momentum = params.zeros_like();
    state.initialized = true;
  }
  params.check_aligned(state.momentum);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].as_vector();
    const auto g = grads[i].as_vector();
    auto m = state.momentum[i].as_vector();
    if (params[i].exclude_from_adaptation) {
      m = config.momentum * m + g;
    } else {
      const double w_norm = w.norm();
      const double g_norm = g.norm();
      const double denom = g_norm + config.weight_decay * w_norm + config.epsilon;
      const double local =
          (w_norm > 0.0 && denom > 0.0) ? config.trust_coefficient * w_norm / denom : 1.0;
      m = config.momentum * m + local * (g + config.weight_decay * w);
    }
    w -= config.learning_rate * m;
  }
}

}  // namespace agsv
