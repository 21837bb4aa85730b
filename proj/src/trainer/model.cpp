#include "agsv/model.hpp"

#include <cmath>
#include <string>

#include "agsv/errors.hpp"
#include "agsv/random.hpp"
#include "network.hpp"

namespace agsv {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::kConv ? "conv" : "mlp"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "conv") return EncoderKind::kConv;
  if (s == "mlp") return EncoderKind::kMlp;
  throw ParameterError("unknown encoder kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_height < Image::kMinSide || input_width < Image::kMinSide)
    throw ParameterError("model input must be at least 8x8");
  if (channels != 1 && channels != 3) throw ParameterError("model channels must be 1 or 3");
  if (widths.empty()) throw ParameterError("model needs at least one width");
  for (int w : widths)
    if (w < 1) throw ParameterError("model widths must be >= 1");
  if (proj_dim < 1) throw ParameterError("projection dimension must be >= 1");
}

namespace {

using Index = Eigen::Index;
using std::size_t;

std::string conv_name(size_t l, const char* what) {
  return "encoder.conv" + std::to_string(l) + "." + what;
}
std::string enc_fc_name(size_t l, const char* what) {
  return "encoder.fc" + std::to_string(l) + "." + what;
}
std::string proj_name(size_t l, const char* what) {
  return "projector.fc" + std::to_string(l) + "." + what;
}

ParamSet layout(const ModelConfig& c) {
  c.validate();
  ParamSet p;
  if (c.kind == EncoderKind::kConv) {
    size_t in_c = static_cast<size_t>(c.channels);
    for (size_t l = 0; l < c.widths.size(); ++l) {
      const auto out_c = static_cast<size_t>(c.widths[l]);
      p.add(conv_name(l, "weight"), {out_c, in_c, 3, 3});
      p.add(conv_name(l, "bias"), {out_c}, true);
      in_c = out_c;
    }
  } else {
    auto in = static_cast<size_t>(c.input_size());
    for (size_t l = 0; l < c.widths.size(); ++l) {
      const auto out = static_cast<size_t>(c.widths[l]);
      p.add(enc_fc_name(l, "weight"), {out, in});
      p.add(enc_fc_name(l, "bias"), {out}, true);
      in = out;
    }
  }
  const auto e = static_cast<size_t>(c.embed_dim());
  const auto z = static_cast<size_t>(c.proj_dim);
  p.add(proj_name(0, "weight"), {e, e});
  p.add(proj_name(0, "bias"), {e}, true);
  p.add(proj_name(1, "weight"), {e, e});
  p.add(proj_name(1, "bias"), {e}, true);
  p.add(proj_name(2, "weight"), {z, e});
  p.add(proj_name(2, "bias"), {z}, true);
  return p;
}

void check_image(const ModelConfig& c, const Image& img, size_t i) {
  if (img.height() != c.input_height || img.width() != c.input_width ||
      img.channels() != c.channels)
    throw ShapeError("image " + std::to_string(i) + " is " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()) + "x" + std::to_string(img.channels()) +
                     ", model expects " + std::to_string(c.input_height) + "x" +
                     std::to_string(c.input_width) + "x" + std::to_string(c.channels));
}

// Channel planes: channels x (h * w).
Matrix planes_of(const Image& img) {
  const Index hw = static_cast<Index>(img.height()) * img.width();
  Matrix m(img.channels(), hw);
  const auto v = img.values();
  for (Index p = 0; p < hw; ++p)
    for (Index c = 0; c < img.channels(); ++c)
      m(c, p) = v[static_cast<size_t>(p * img.channels() + c)];
  return m;
}

Matrix im2col(const Matrix& x, int h, int w) {
  const Index in_c = x.rows();
  Matrix col = Matrix::Zero(in_c * 9, static_cast<Index>(h) * w);
  for (Index ci = 0; ci < in_c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Index r = ci * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            col(r, static_cast<Index>(y) * w + xx) = x(ci, static_cast<Index>(sy) * w + sx);
          }
        }
      }
  return col;
}

Matrix col2im(const Matrix& col, Index in_c, int h, int w) {
  Matrix x = Matrix::Zero(in_c, static_cast<Index>(h) * w);
  for (Index ci = 0; ci < in_c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Index r = ci * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            x(ci, static_cast<Index>(sy) * w + sx) += col(r, static_cast<Index>(y) * w + xx);
          }
        }
      }
  return x;
}

Matrix avg_pool2(const Matrix& x, int h, int w) {
  const int oh = h / 2;
  const int ow = w / 2;
  Matrix out(x.rows(), static_cast<Index>(oh) * ow);
  for (Index c = 0; c < x.rows(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const Index a = static_cast<Index>(2 * y) * w + 2 * xx;
        out(c, static_cast<Index>(y) * ow + xx) =
            0.25 * (x(c, a) + x(c, a + 1) + x(c, a + w) + x(c, a + w + 1));
      }
  return out;
}

Matrix avg_pool2_backward(const Matrix& d_out, int h, int w) {
  const int oh = h / 2;
  const int ow = w / 2;
  Matrix d = Matrix::Zero(d_out.rows(), static_cast<Index>(h) * w);
  for (Index c = 0; c < d_out.rows(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double g = 0.25 * d_out(c, static_cast<Index>(y) * ow + xx);
        const Index a = static_cast<Index>(2 * y) * w + 2 * xx;
        d(c, a) += g;
        d(c, a + 1) += g;
        d(c, a + w) += g;
        d(c, a + w + 1) += g;
      }
  return d;
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& d, const Matrix& pre) {
  return d.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

// y = x W^T + b row by row, so each row's result does not depend on the
// other rows in the batch.
Matrix affine_rows(const Matrix& x, const ParamTensor& weight, const ParamTensor& bias) {
  const auto w = weight.as_matrix();
  const auto b = bias.as_vector();
  if (x.cols() != w.cols())
    throw ShapeError("affine input width " + std::to_string(x.cols()) + " does not match '" +
                     weight.name + "' (" + std::to_string(w.cols()) + ")");
  Matrix y(x.rows(), w.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    Vector xi = x.row(i).transpose();
    Vector yi = w * xi + b;
    y.row(i) = yi.transpose();
  }
  return y;
}

// Accumulates affine gradients; returns d/dx.
Matrix affine_backward(const Matrix& x, const Matrix& d_y, const ParamTensor& weight,
                       ParamTensor& d_weight, ParamTensor& d_bias) {
  d_weight.as_matrix() += d_y.transpose() * x;
  d_bias.as_vector() += d_y.colwise().sum().transpose();
  return d_y * weight.as_matrix();
}

}  // namespace

ParamSet zero_params(const ModelConfig& config) { return layout(config); }

double parameter_count(const ModelConfig& c) {
  c.validate();
  double total = 0.0;
  double in = c.kind == EncoderKind::kConv
                  ? static_cast<double>(c.channels)
                  : static_cast<double>(c.input_height) * c.input_width * c.channels;
  const double taps = c.kind == EncoderKind::kConv ? 9.0 : 1.0;
  for (int w : c.widths) {
    total += w * (in * taps + 1.0);
    in = w;
  }
  const double e = c.embed_dim();
  return total + 2.0 * e * (e + 1.0) + c.proj_dim * (e + 1.0);
}

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  ParamSet p = layout(config);
  Rng rng(derive_seed({seed, 0x1d17ULL}));
  for (auto& t : p) {
    if (t.exclude_from_adaptation) continue;
    size_t fan_in = 1;
    for (size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const bool last = t.name == proj_name(2, "weight");
    const double stddev = std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(fan_in));
    for (double& v : t.values) v = stddev * rng.normal();
  }
  return p;
}

namespace detail {

Matrix encoder_forward(const ModelConfig& c, const ParamSet& params,
                       std::span<const Image> images, EncoderTape* tape) {
  c.validate();
  for (size_t i = 0; i < images.size(); ++i) check_image(c, images[i], i);
  const auto n = static_cast<Index>(images.size());
  Matrix h(n, c.embed_dim());

  if (c.kind == EncoderKind::kConv) {
    if (tape) tape->conv.assign(images.size(), {});
    for (Index i = 0; i < n; ++i) {
      Matrix x = planes_of(images[static_cast<size_t>(i)]);
      int height = c.input_height;
      int width = c.input_width;
      for (size_t l = 0; l < c.widths.size(); ++l) {
        const auto& weight = params.at(conv_name(l, "weight"));
        const auto& bias = params.at(conv_name(l, "bias"));
        Matrix col = im2col(x, height, width);
        Matrix pre = weight.as_matrix() * col;
        pre.colwise() += bias.as_vector();
        Matrix act = relu(pre);
        const bool last = l + 1 == c.widths.size();
        const bool pooled = !last && height >= 2 && width >= 2;
        if (tape) {
          tape->conv[static_cast<size_t>(i)].push_back(
              {std::move(col), std::move(pre), height, width, pooled});
        }
        if (last) {
          h.row(i) = act.rowwise().mean().transpose();
        } else if (pooled) {
          x = avg_pool2(act, height, width);
          height /= 2;
          width /= 2;
        } else {
          x = std::move(act);
        }
      }
    }
    return h;
  }

  Matrix x(n, c.input_size());
  for (Index i = 0; i < n; ++i) {
    const auto v = images[static_cast<size_t>(i)].values();
    for (Index k = 0; k < x.cols(); ++k) x(i, k) = v[static_cast<size_t>(k)];
  }
  if (tape) {
    tape->mlp_inputs.clear();
    tape->mlp_pre.clear();
  }
  for (size_t l = 0; l < c.widths.size(); ++l) {
    Matrix pre = affine_rows(x, params.at(enc_fc_name(l, "weight")),
                             params.at(enc_fc_name(l, "bias")));
    Matrix act = relu(pre);
    if (tape) {
      tape->mlp_inputs.push_back(std::move(x));
      tape->mlp_pre.push_back(std::move(pre));
    }
    x = std::move(act);
  }
  return x;
}

void encoder_backward(const ModelConfig& c, const ParamSet& params, const EncoderTape& tape,
                      const Matrix& d_h, ParamSet& grads) {
  if (c.kind == EncoderKind::kConv) {
    for (size_t i = 0; i < tape.conv.size(); ++i) {
      const auto& records = tape.conv[i];
      Matrix d_act;
      for (size_t l = records.size(); l-- > 0;) {
        const ConvRecord& r = records[l];
        const Index hw = static_cast<Index>(r.height) * r.width;
        if (l + 1 == records.size()) {
          // Global average pool.
          d_act = (d_h.row(static_cast<Index>(i)).transpose() / static_cast<double>(hw)) *
                  RowVector::Ones(hw);
        }
        const Matrix d_pre = relu_backward(d_act, r.pre);
        auto& d_weight = grads.at(conv_name(l, "weight"));
        auto& d_bias = grads.at(conv_name(l, "bias"));
        d_weight.as_matrix() += d_pre * r.col.transpose();
        d_bias.as_vector() += d_pre.rowwise().sum();
        if (l == 0) break;
        const auto& weight = params.at(conv_name(l, "weight"));
        const Matrix d_col = weight.as_matrix().transpose() * d_pre;
        const Matrix d_in = col2im(d_col, weight.as_matrix().cols() / 9, r.height, r.width);
        const ConvRecord& prev = records[l - 1];
        d_act = prev.pooled ? avg_pool2_backward(d_in, prev.height, prev.width) : d_in;
      }
    }
    return;
  }

  Matrix d = d_h;
  for (size_t l = c.widths.size(); l-- > 0;) {
    const Matrix d_pre = relu_backward(d, tape.mlp_pre[l]);
    d = affine_backward(tape.mlp_inputs[l], d_pre, params.at(enc_fc_name(l, "weight")),
                        grads.at(enc_fc_name(l, "weight")), grads.at(enc_fc_name(l, "bias")));
  }
}

Matrix projector_forward(const ModelConfig& c, const ParamSet& params, const Matrix& h,
                         ProjectorTape* tape) {
  if (h.cols() != c.embed_dim())
    throw ShapeError("projector expects width " + std::to_string(c.embed_dim()) + ", got " +
                     std::to_string(h.cols()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix x = h;
  for (size_t l = 0; l < 3; ++l) {
    Matrix pre = affine_rows(x, params.at(proj_name(l, "weight")), params.at(proj_name(l, "bias")));
    Matrix out = l < 2 ? relu(pre) : pre;
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre.push_back(std::move(pre));
    }
    x = std::move(out);
  }
  return x;
}

Matrix projector_backward(const ModelConfig&, const ParamSet& params, const ProjectorTape& tape,
                          const Matrix& d_z, ParamSet& grads) {
  Matrix d = d_z;
  for (size_t l = 3; l-- > 0;) {
    const Matrix d_pre = l < 2 ? relu_backward(d, tape.pre[l]) : d;
    d = affine_backward(tape.inputs[l], d_pre, params.at(proj_name(l, "weight")),
                        grads.at(proj_name(l, "weight")), grads.at(proj_name(l, "bias")));
  }
  return d;
}

}  // namespace detail

Matrix encoder_forward(const ModelConfig& config, const ParamSet& params,
                       std::span<const Image> images) {
  return detail::encoder_forward(config, params, images, nullptr);
}

Matrix projector_forward(const ModelConfig& config, const ParamSet& params, const Matrix& h) {
  return detail::projector_forward(config, params, h, nullptr);
}

}  // namespace agsv
