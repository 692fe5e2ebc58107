// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference-only layers for the pretrained backbones. Token matrices are
// tokens x features; spatial maps are channels x (height * width). Linear
// weights are stored [in, out] so application is x * W + b (the weight
// converter transposes from the torch [out, in] layout).

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffsim/safetensors.hpp"
#include "diffsim/types.hpp"

namespace diffsim::nn {

using VectorXf = Eigen::VectorXf;

struct FeatureMap {
  MatrixXf data;  // channels x (h * w)
  int channels = 0;
  int height = 0;
  int width = 0;
};

struct Linear {
  MatrixXf w;  // [in, out]
  VectorXf b;  // empty when the layer has no bias

  MatrixXf apply(const MatrixXf& x) const;
};

struct LayerNorm {
  VectorXf gamma;
  VectorXf beta;
  float eps = 1e-5f;

  MatrixXf apply(const MatrixXf& x) const;  // normalizes each row
};

struct GroupNorm {
  int groups = 32;
  VectorXf gamma;
  VectorXf beta;
  float eps = 1e-6f;

  FeatureMap apply(const FeatureMap& x) const;
};

struct Conv2d {
  MatrixXf w;  // [out_ch, in_ch * k * k], torch kernel order
  VectorXf b;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  FeatureMap apply(const FeatureMap& x) const;
};

MatrixXf gelu(const MatrixXf& x);
MatrixXf silu(const MatrixXf& x);

// Raw per-head projections captured during a forward pass.
struct AttentionCapture {
  std::vector<MatrixXf> q, k, v;
};

// Multi-head attention; `context` may be the input itself (self-attention).
// When `capture` is non-null the per-head q/k/v are recorded.
MatrixXf multihead_attention(const MatrixXf& x, const MatrixXf& context,
                             const Linear& to_q, const Linear& to_k,
                             const Linear& to_v, const Linear& to_out,
                             int heads, AttentionCapture* capture = nullptr);

// Bicubic interpolation of a square token grid (rows = grid*grid positions
// row-major, cols = channels), used to resize position embeddings.
MatrixXf interpolate_grid_bicubic(const MatrixXf& grid_tokens, int src_grid,
                                  int dst_grid);

// Weight-map accessors; throw IntegrityError naming the tensor on absence.
const TensorData& fetch(const TensorMap& tm, const std::string& name);
Linear fetch_linear(const TensorMap& tm, const std::string& prefix,
                    bool bias = true);
LayerNorm fetch_layer_norm(const TensorMap& tm, const std::string& prefix);
GroupNorm fetch_group_norm(const TensorMap& tm, const std::string& prefix,
                           int groups);
Conv2d fetch_conv(const TensorMap& tm, const std::string& prefix, int kernel,
                  int stride, int pad);
VectorXf fetch_vector(const TensorMap& tm, const std::string& name);

}  // namespace diffsim::nn
