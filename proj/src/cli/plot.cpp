#include <algorithm>
#include <array>
#include <cmath>

#include "agsv/cli.hpp"
#include "agsv/errors.hpp"

namespace agsv::cli {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
    {31, 119, 180},
    {214, 39, 40},
    {44, 160, 44},
    {255, 127, 14},
    {148, 103, 189},
    {140, 86, 75},
    {227, 119, 194},
    {23, 190, 207},
}};

void put(Raster& r, int x, int y, const std::array<std::uint8_t, 3>& rgb) {
  if (x < 0 || y < 0 || x >= r.width || y >= r.height) return;
  const std::size_t at = (static_cast<std::size_t>(y) * r.width + x) * 3;
  std::copy(rgb.begin(), rgb.end(), r.pixels.begin() + static_cast<std::ptrdiff_t>(at));
}

}  // namespace

Raster scatter_plot(std::span<const double> x, std::span<const double> y, std::span<const int> group,
                    int size) {
  if (size < 32) throw InputError("plot size must be at least 32");
  if (x.size() != y.size() || (!group.empty() && group.size() != x.size()))
    throw ShapeError("plot coordinates and groups differ in length");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DataError("non-finite plot coordinate");

  Raster r{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3, 255)};
  const int margin = size / 16;
  const std::array<std::uint8_t, 3> frame{200, 200, 200};
  for (int i = margin - 4; i <= size - margin + 3; ++i) {
    put(r, i, margin - 4, frame);
    put(r, i, size - margin + 3, frame);
    put(r, margin - 4, i, frame);
    put(r, size - margin + 3, i, frame);
  }
  if (x.empty()) return r;

  const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  const double span = size - 1 - 2 * margin;
  // Constant axes go to the middle.
  auto scale = [span](double v, double lo, double hi) {
    return hi > lo ? (v - lo) / (hi - lo) * span : span / 2;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int px = margin + static_cast<int>(std::lround(scale(x[i], *xmin, *xmax)));
    const int py = size - 1 - margin - static_cast<int>(std::lround(scale(y[i], *ymin, *ymax)));
    const int g = group.empty() ? 0 : group[i];
    const auto& rgb = kPalette[static_cast<std::size_t>(g < 0 ? 0 : g) % kPalette.size()];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) put(r, px + dx, py + dy, rgb);
  }
  return r;
}

}  // namespace agsv::cli
