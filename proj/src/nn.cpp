// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/nn.hpp"

#include <cmath>

#include "diffsim/aas.hpp"
#include "diffsim/errors.hpp"

namespace diffsim::nn {

MatrixXf Linear::apply(const MatrixXf& x) const {
  if (x.cols() != w.rows())
    throw DimensionError("linear: input dim " + std::to_string(x.cols()) +
                         " != weight rows " + std::to_string(w.rows()));
  MatrixXf out = x * w;
  if (b.size() > 0) out.rowwise() += b.transpose();
  return out;
}

MatrixXf LayerNorm::apply(const MatrixXf& x) const {
  MatrixXf out(x.rows(), x.cols());
  const auto n = static_cast<float>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const float mean = x.row(i).mean();
    const float var = (x.row(i).array() - mean).square().sum() / n;
    const float inv = 1.0f / std::sqrt(var + eps);
    out.row(i) =
        ((x.row(i).array() - mean) * inv) * gamma.transpose().array() +
        beta.transpose().array();
  }
  return out;
}

FeatureMap GroupNorm::apply(const FeatureMap& x) const {
  if (x.channels % groups != 0)
    throw DimensionError("group norm: " + std::to_string(x.channels) +
                         " channels not divisible by " +
                         std::to_string(groups) + " groups");
  const int per = x.channels / groups;
  FeatureMap out = x;
  for (int g = 0; g < groups; ++g) {
    auto block = out.data.middleRows(static_cast<Eigen::Index>(g) * per, per);
    const float mean = block.mean();
    const float var = (block.array() - mean).square().mean();
    const float inv = 1.0f / std::sqrt(var + eps);
    block = ((block.array() - mean) * inv).matrix();
  }
  for (int c = 0; c < x.channels; ++c)
    out.data.row(c) = (out.data.row(c).array() * gamma[c] + beta[c]).matrix();
  return out;
}

FeatureMap Conv2d::apply(const FeatureMap& x) const {
  const int k = kernel;
  const int in_ch = x.channels;
  if (w.cols() != static_cast<Eigen::Index>(in_ch) * k * k)
    throw DimensionError("conv: weight expects " +
                         std::to_string(w.cols() / (k * k)) +
                         " input channels, got " + std::to_string(in_ch));
  const int out_h = (x.height + 2 * pad - k) / stride + 1;
  const int out_w = (x.width + 2 * pad - k) / stride + 1;

  MatrixXf cols(static_cast<Eigen::Index>(in_ch) * k * k,
                static_cast<Eigen::Index>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * out_w + ox;
      Eigen::Index r = 0;
      for (int c = 0; c < in_ch; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          const int y = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int xx = ox * stride - pad + kx;
            cols(r++, col) =
                (y < 0 || y >= x.height || xx < 0 || xx >= x.width)
                    ? 0.0f
                    : x.data(c, static_cast<Eigen::Index>(y) * x.width + xx);
          }
        }
      }
    }
  }

  FeatureMap out;
  out.channels = static_cast<int>(w.rows());
  out.height = out_h;
  out.width = out_w;
  out.data = w * cols;
  if (b.size() > 0) out.data.colwise() += b;
  return out;
}

MatrixXf gelu(const MatrixXf& x) {
  // tanh approximation, matching the backbones' inference graphs
  MatrixXf out(x.rows(), x.cols());
  constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
  out = (0.5f * x.array() *
         (1.0f + (c * (x.array() + 0.044715f * x.array().cube())).tanh()))
            .matrix();
  return out;
}

MatrixXf silu(const MatrixXf& x) {
  return (x.array() / (1.0f + (-x.array()).exp())).matrix();
}

MatrixXf multihead_attention(const MatrixXf& x, const MatrixXf& context,
                             const Linear& to_q, const Linear& to_k,
                             const Linear& to_v, const Linear& to_out,
                             int heads, AttentionCapture* capture) {
  const MatrixXf q = to_q.apply(x);
  const MatrixXf k = to_k.apply(context);
  const MatrixXf v = to_v.apply(context);
  if (q.cols() % heads != 0 || k.cols() != q.cols() || v.cols() % heads != 0)
    throw DimensionError("attention: inner dim not divisible by heads");
  const Eigen::Index dh = q.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;

  MatrixXf concat(x.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    const MatrixXf qh = q.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
    const MatrixXf kh = k.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
    const MatrixXf vh = v.middleCols(static_cast<Eigen::Index>(h) * dv, dv);
    if (capture) {
      capture->q.push_back(qh);
      capture->k.push_back(kh);
      capture->v.push_back(vh);
    }
    concat.middleCols(static_cast<Eigen::Index>(h) * dv, dv) =
        scaled_dot_attention(qh, kh, vh);
  }
  return to_out.apply(concat);
}

MatrixXf interpolate_grid_bicubic(const MatrixXf& grid_tokens, int src_grid,
                                  int dst_grid) {
  if (grid_tokens.rows() != static_cast<Eigen::Index>(src_grid) * src_grid)
    throw DimensionError("pos-embed grid size mismatch");
  if (src_grid == dst_grid) return grid_tokens;

  auto cubic = [](double t) {
    t = std::abs(t);
    if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
  };

  const double scale = static_cast<double>(src_grid) / dst_grid;
  MatrixXf out(static_cast<Eigen::Index>(dst_grid) * dst_grid,
               grid_tokens.cols());
  for (int oy = 0; oy < dst_grid; ++oy) {
    const double fy = (oy + 0.5) * scale - 0.5;
    const int iy = static_cast<int>(std::floor(fy));
    for (int ox = 0; ox < dst_grid; ++ox) {
      const double fx = (ox + 0.5) * scale - 0.5;
      const int ix = static_cast<int>(std::floor(fx));
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(grid_tokens.cols());
      for (int ty = 0; ty < 4; ++ty) {
        const int yy = std::clamp(iy - 1 + ty, 0, src_grid - 1);
        const double wy = cubic(fy - (iy - 1 + ty));
        for (int tx = 0; tx < 4; ++tx) {
          const int xx = std::clamp(ix - 1 + tx, 0, src_grid - 1);
          const double wx = cubic(fx - (ix - 1 + tx));
          acc += wy * wx *
                 grid_tokens.row(static_cast<Eigen::Index>(yy) * src_grid + xx)
                     .cast<double>();
        }
      }
      out.row(static_cast<Eigen::Index>(oy) * dst_grid + ox) =
          acc.cast<float>();
    }
  }
  return out;
}

const TensorData& fetch(const TensorMap& tm, const std::string& name) {
  auto it = tm.find(name);
  if (it == tm.end())
    throw IntegrityError("weights file is missing tensor '" + name + "'",
                         name);
  return it->second;
}

Linear fetch_linear(const TensorMap& tm, const std::string& prefix, bool bias) {
  Linear l;
  l.w = matrix_from_tensor(fetch(tm, prefix + ".weight"));
  if (bias) l.b = fetch_vector(tm, prefix + ".bias");
  return l;
}

VectorXf fetch_vector(const TensorMap& tm, const std::string& name) {
  const TensorData& t = fetch(tm, name);
  if (t.shape.size() != 1)
    throw ValidationError("expected rank-1 tensor for '" + name + "'");
  VectorXf v(t.shape[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = t.data[static_cast<std::size_t>(i)];
  return v;
}

LayerNorm fetch_layer_norm(const TensorMap& tm, const std::string& prefix) {
  LayerNorm ln;
  ln.gamma = fetch_vector(tm, prefix + ".weight");
  ln.beta = fetch_vector(tm, prefix + ".bias");
  return ln;
}

GroupNorm fetch_group_norm(const TensorMap& tm, const std::string& prefix,
                           int groups) {
  GroupNorm gn;
  gn.groups = groups;
  gn.gamma = fetch_vector(tm, prefix + ".weight");
  gn.beta = fetch_vector(tm, prefix + ".bias");
  return gn;
}

Conv2d fetch_conv(const TensorMap& tm, const std::string& prefix, int kernel,
                  int stride, int pad) {
  Conv2d c;
  const TensorData& t = fetch(tm, prefix + ".weight");
  if (t.shape.size() != 2)
    throw ValidationError("conv weight '" + prefix +
                          "' must be pre-flattened to [out, in*k*k]");
  c.w = matrix_from_tensor(t);
  c.b = fetch_vector(tm, prefix + ".bias");
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  return c;
}

}  // namespace diffsim::nn
