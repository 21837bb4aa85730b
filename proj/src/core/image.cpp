#include "agsv/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

// jpeglib.h expects size_t and FILE to be declared first.
#include <jpeglib.h>

#include "agsv/errors.hpp"

namespace agsv {

namespace {

void check_dims(int height, int width, int channels) {
  if (height < Image::kMinSide || width < Image::kMinSide)
    throw InputError("image must be at least 8x8, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  if (channels != 1 && channels != 3)
    throw InputError("image channels must be 1 or 3, got " + std::to_string(channels));
}

}  // namespace

Image::Image(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
                     static_cast<std::size_t>(channels),
                 0.0f);
}

Image::Image(int height, int width, int channels, std::vector<float> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  check_dims(height, width, channels);
  const std::size_t expected = static_cast<std::size_t>(height) *
                               static_cast<std::size_t>(width) *
                               static_cast<std::size_t>(channels);
  if (values_.size() != expected)
    throw InputError("image buffer holds " + std::to_string(values_.size()) + " values, expected " +
                     std::to_string(expected));
  for (float v : values_)
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("image values must lie in [0, 1]");
}

std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int channels,
                                   int dst_h, int dst_w) {
  if (src_h == dst_h && src_w == dst_w) return {src.begin(), src.end()};
  std::vector<float> out(static_cast<std::size_t>(dst_h) * static_cast<std::size_t>(dst_w) *
                         static_cast<std::size_t>(channels));
  const double sy = dst_h > 1 ? static_cast<double>(src_h - 1) / (dst_h - 1) : 0.0;
  const double sx = dst_w > 1 ? static_cast<double>(src_w - 1) / (dst_w - 1) : 0.0;
  auto px = [&](int y, int x, int c) {
    return static_cast<double>(
        src[(static_cast<std::size_t>(y) * static_cast<std::size_t>(src_w) +
             static_cast<std::size_t>(x)) *
                static_cast<std::size_t>(channels) +
            static_cast<std::size_t>(c)]);
  };
  for (int y = 0; y < dst_h; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), src_h - 1);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), src_w - 1);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        const double top = px(y0, x0, c) * (1.0 - wx) + px(y0, x1, c) * wx;
        const double bottom = px(y1, x0, c) * (1.0 - wx) + px(y1, x1, c) * wx;
        out[(static_cast<std::size_t>(y) * static_cast<std::size_t>(dst_w) +
             static_cast<std::size_t>(x)) *
                static_cast<std::size_t>(channels) +
            static_cast<std::size_t>(c)] = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw DecodeError(std::string("png: ") + img.message);
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster r;
  r.height = static_cast<int>(img.height);
  r.width = static_cast<int>(img.width);
  r.channels = gray ? 1 : 3;
  r.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DecodeError("png: " + msg);
  }
  return r;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  Raster r;
  // No C++ objects with non-trivial destructors may be created between
  // setjmp and a potential longjmp; r is constructed above.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  r.height = static_cast<int>(cinfo.output_height);
  r.width = static_cast<int>(cinfo.output_width);
  r.channels = static_cast<int>(cinfo.output_components);
  r.pixels.resize(static_cast<std::size_t>(r.height) * static_cast<std::size_t>(r.width) *
                  static_cast<std::size_t>(r.channels));
  const std::size_t stride = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = r.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return r;
}

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image payload");
  Raster r;
  if (is_png(bytes)) {
    r = decode_png(bytes);
  } else if (is_jpeg(bytes)) {
    r = decode_jpeg(bytes);
  } else {
    throw DecodeError("unrecognized image format (expected PNG or JPEG)");
  }
  if (r.height <= 0 || r.width <= 0) throw DecodeError("decoded image has no pixels");
  return r;
}

Image conform(const Raster& raster, int height, int width, int channels) {
  if (channels != 1 && channels != 3) throw InputError("target channels must be 1 or 3");
  const std::size_t pixels = static_cast<std::size_t>(raster.height) *
                             static_cast<std::size_t>(raster.width);
  const auto src_c = static_cast<std::size_t>(raster.channels);
  if (raster.pixels.size() != pixels * src_c) throw InputError("raster buffer size mismatch");
  std::vector<float> converted(pixels * static_cast<std::size_t>(channels));
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint8_t* in = raster.pixels.data() + p * src_c;
    float rgb[3];
    if (src_c >= 3) {
      for (int c = 0; c < 3; ++c) rgb[c] = in[c] / 255.0f;
    } else {
      rgb[0] = rgb[1] = rgb[2] = in[0] / 255.0f;
    }
    if (channels == 1) {
      converted[p] = (rgb[0] + rgb[1] + rgb[2]) / 3.0f;
    } else {
      for (int c = 0; c < 3; ++c) converted[p * 3 + static_cast<std::size_t>(c)] = rgb[c];
    }
  }
  auto resized =
      resize_bilinear(converted, raster.height, raster.width, channels, height, width);
  for (float& v : resized) v = std::clamp(v, 0.0f, 1.0f);
  return Image(height, width, channels, std::move(resized));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image read_image(const std::filesystem::path& path, int height, int width, int channels) {
  const auto bytes = read_file_bytes(path);
  return conform(decode_image(bytes), height, width, channels);
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raster.width);
  img.height = static_cast<png_uint_32>(raster.height);
  switch (raster.channels) {
    case 1: img.format = PNG_FORMAT_GRAY; break;
    case 3: img.format = PNG_FORMAT_RGB; break;
    case 4: img.format = PNG_FORMAT_RGBA; break;
    default: throw InputError("png encoder supports 1, 3 or 4 channels");
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, raster.pixels.data(), 0, nullptr))
    throw DecodeError(std::string("png encode: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.pixels.data(), 0, nullptr))
    throw DecodeError(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  Raster r;
  r.height = image.height();
  r.width = image.width();
  r.channels = image.channels();
  r.pixels.reserve(image.size());
  for (float v : image.values())
    r.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return encode_png(r);
}

namespace {

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  write_bytes(path, encode_png(image));
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  write_bytes(path, encode_png(raster));
}

}  // namespace agsv
