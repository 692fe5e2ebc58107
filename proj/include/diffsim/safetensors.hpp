// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal safetensors container: u64-LE header length, JSON header, raw
// little-endian tensor data. Only F32 is supported; shapes use row-major
// (C) element order. Writes are deterministic: tensors are laid out in
// name order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffsim/types.hpp"

namespace diffsim {

struct TensorData {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

using TensorMap = std::map<std::string, TensorData>;
using StringMap = std::map<std::string, std::string>;

void save_safetensors(const std::filesystem::path& path,
                      const TensorMap& tensors, const StringMap& metadata);

// Throws IntegrityError (with the path as key) on truncation or a
// malformed header; ValidationError on unsupported dtypes.
TensorMap load_safetensors(const std::filesystem::path& path,
                           StringMap* metadata = nullptr);

// Row-major bridge to Eigen matrices.
TensorData tensor_from_matrix(const MatrixXf& m);
MatrixXf matrix_from_tensor(const TensorData& t);

// Heads stacked as [heads, rows, cols].
TensorData tensor_from_heads(const std::vector<MatrixXf>& heads);
std::vector<MatrixXf> heads_from_tensor(const TensorData& t);

}  // namespace diffsim
