#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "agsv/image.hpp"
#include "agsv/random.hpp"

namespace agsv {

struct AugmentConfig {
  // Crop area as a fraction of the source area, drawn uniformly per view.
  double crop_scale_low = 0.6;
  double crop_scale_high = 1.0;
  double flip_probability = 0.5;
  // Maximum fractional deltas; each factor is drawn from [1 - s, 1 + s].
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  std::uint64_t seed = 0;

  /// Throws ParameterError.
  void validate() const;

  /// Full-frame crop, no flip, no jitter.
  static AugmentConfig identity();

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Random resized crop (bilinear, back to the source size), horizontal flip,
/// then brightness/contrast/saturation jitter, clamped to [0, 1]. Every call
/// consumes the same number of draws from `draw`.
Image augment(const Image& image, const AugmentConfig& config, Rng& draw);

struct ViewBatch {
  std::vector<Image> views;         // 2N views; i and i+N share a source
  std::vector<std::size_t> source;  // index of the source image for each view
};

/// Two independent views per image. The stream for image i, view v is derived
/// from (config.seed, stream, i, v), so the result does not depend on the
/// order in which views are produced.
ViewBatch make_views(std::span<const Image> images, const AugmentConfig& config,
                     std::uint64_t stream);

}  // namespace agsv
