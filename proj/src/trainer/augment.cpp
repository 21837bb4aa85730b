#include "agsv/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agsv/errors.hpp"

namespace agsv {

void AugmentConfig::validate() const {
  if (!(crop_scale_low > 0.0 && crop_scale_low <= crop_scale_high && crop_scale_high <= 1.0))
    throw ParameterError("crop scale range must satisfy 0 < low <= high <= 1");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
    throw ParameterError("flip probability must lie in [0, 1]");
  for (double s : {brightness, contrast, saturation})
    if (!(s >= 0.0 && s <= 1.0)) throw ParameterError("jitter strengths must lie in [0, 1]");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.crop_scale_low = c.crop_scale_high = 1.0;
  c.flip_probability = 0.0;
  c.brightness = c.contrast = c.saturation = 0.0;
  return c;
}

namespace {

// Round to nearest with ties toward zero.
int round_half_down(double x) { return static_cast<int>(std::ceil(x - 0.5)); }

double jitter_factor(double strength, double u) { return 1.0 + strength * (2.0 * u - 1.0); }

}  // namespace

Image augment(const Image& image, const AugmentConfig& config, Rng& draw) {
  config.validate();
  const int h = image.height();
  const int w = image.width();
  const int ch = image.channels();

  const double area = draw.uniform(config.crop_scale_low, config.crop_scale_high);
  const double u_y = draw.uniform();
  const double u_x = draw.uniform();
  const double u_flip = draw.uniform();
  const double u_b = draw.uniform();
  const double u_c = draw.uniform();
  const double u_s = draw.uniform();

  const double side = std::sqrt(area);
  const int crop_h = std::min(h, round_half_down(h * side));
  const int crop_w = std::min(w, round_half_down(w * side));
  if (crop_h < 1 || crop_w < 1)
    throw AugmentError("crop window below one pixel (" + std::to_string(crop_h) + "x" +
                       std::to_string(crop_w) + ")");
  const int off_y = std::min(h - crop_h, static_cast<int>(u_y * (h - crop_h + 1)));
  const int off_x = std::min(w - crop_w, static_cast<int>(u_x * (w - crop_w + 1)));

  std::vector<float> crop(static_cast<std::size_t>(crop_h) * static_cast<std::size_t>(crop_w) *
                          static_cast<std::size_t>(ch));
  for (int y = 0; y < crop_h; ++y)
    for (int x = 0; x < crop_w; ++x)
      for (int c = 0; c < ch; ++c)
        crop[(static_cast<std::size_t>(y) * static_cast<std::size_t>(crop_w) +
              static_cast<std::size_t>(x)) *
                 static_cast<std::size_t>(ch) +
             static_cast<std::size_t>(c)] = image.at(off_y + y, off_x + x, c);
  std::vector<float> px = resize_bilinear(crop, crop_h, crop_w, ch, h, w);

  auto at = [&](int y, int x, int c) -> float& {
    return px[(static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
               static_cast<std::size_t>(x)) *
                  static_cast<std::size_t>(ch) +
              static_cast<std::size_t>(c)];
  };

  if (u_flip < config.flip_probability) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        for (int c = 0; c < ch; ++c) std::swap(at(y, x, c), at(y, w - 1 - x, c));
  }

  const double brightness = jitter_factor(config.brightness, u_b);
  const double contrast = jitter_factor(config.contrast, u_c);
  const double saturation = jitter_factor(config.saturation, u_s);

  if (brightness != 1.0)
    for (float& v : px) v = static_cast<float>(v * brightness);

  if (contrast != 1.0) {
    double mean = 0.0;
    for (float v : px) mean += v;
    mean /= static_cast<double>(px.size());
    for (float& v : px) v = static_cast<float>((v - mean) * contrast + mean);
  }

  if (saturation != 1.0 && ch == 3) {
    for (std::size_t p = 0; p < px.size(); p += 3) {
      const double gray = (px[p] + px[p + 1] + px[p + 2]) / 3.0;
      for (std::size_t c = 0; c < 3; ++c)
        px[p + c] = static_cast<float>(gray + (px[p + c] - gray) * saturation);
    }
  }

  for (float& v : px) v = std::clamp(v, 0.0f, 1.0f);
  return Image(h, w, ch, std::move(px));
}

ViewBatch make_views(std::span<const Image> images, const AugmentConfig& config,
                     std::uint64_t stream) {
  if (images.empty()) throw DataError("make_views needs at least one image");
  const std::size_t n = images.size();
  ViewBatch batch;
  batch.views.reserve(2 * n);
  batch.source.reserve(2 * n);
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < n; ++i) {
      Rng draw(derive_seed({config.seed, stream, i, v}));
      batch.views.push_back(augment(images[i], config, draw));
      batch.source.push_back(i);
    }
  }
  return batch;
}

}  // namespace agsv
