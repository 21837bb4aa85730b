#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace agsv {

/// H x W x C intensities in [0, 1], interleaved (HWC). Height and width are
/// at least 8, channels 1 or 3.
class Image {
 public:
  static constexpr int kMinSide = 8;

  /// Black image. Throws InputError on invalid dimensions.
  Image(int height, int width, int channels);
  /// Throws InputError on invalid dimensions, size mismatch, or any value
  /// outside [0, 1].
  Image(int height, int width, int channels, std::vector<float> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return values_.size(); }

  float at(int y, int x, int c) const { return values_[index(y, x, c)]; }
  float& at(int y, int x, int c) { return values_[index(y, x, c)]; }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int height_;
  int width_;
  int channels_;
  std::vector<float> values_;
};

/// Decoded 8-bit pixels of any size (no minimum side), 1-4 channels.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Bilinear resample of interleaved float pixels with corner-aligned sampling;
/// resizing to the same size returns the input unchanged.
std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int channels,
                                   int dst_h, int dst_w);

/// Decodes PNG or JPEG bytes (sniffed by signature). Throws DecodeError.
Raster decode_image(std::span<const std::uint8_t> bytes);

/// Raster -> Image of the requested geometry: drops alpha, converts between
/// gray and RGB, and bilinear-resizes.
Image conform(const Raster& raster, int height, int width, int channels);

Image read_image(const std::filesystem::path& path, int height, int width, int channels);

std::vector<std::uint8_t> encode_png(const Raster& raster);
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const Raster& raster);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace agsv
