// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/safetensors.hpp"

#include <fstream>

#include "diffsim/errors.hpp"
#include "json.hpp"

namespace diffsim {

namespace {

using ordered_json = nlohmann::ordered_json;

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_safetensors(const std::filesystem::path& path,
                      const TensorMap& tensors, const StringMap& metadata) {
  ordered_json header;
  if (!metadata.empty()) {
    ordered_json meta;
    for (const auto& [k, v] : metadata) meta[k] = v;
    header["__metadata__"] = meta;
  }
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * 4;
    ordered_json entry;
    entry["dtype"] = "F32";
    entry["shape"] = t.shape;
    entry["data_offsets"] = {offset, offset + bytes};
    header[name] = entry;
    offset += bytes;
  }
  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write safetensors file: " + path.string());
  write_u64_le(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != t.numel())
      throw ValidationError("tensor '" + name + "' shape/data size mismatch");
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * 4));
  }
  os.flush();
  if (!os) throw IoError("short write to safetensors file: " + path.string());
}

TensorMap load_safetensors(const std::filesystem::path& path,
                           StringMap* metadata) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open safetensors file: " + path.string());
  const std::uint64_t header_len = read_u64_le(is);
  if (!is || header_len == 0 || header_len > (1ULL << 31))
    throw IntegrityError("bad safetensors header length", path.string());
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw IntegrityError("truncated safetensors header", path.string());

  ordered_json header;
  try {
    header = ordered_json::parse(header_str);
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("unparseable safetensors header: ") +
                             e.what(),
                         path.string());
  }

  const std::uint64_t data_begin = 8 + header_len;
  TensorMap out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      if (metadata)
        for (auto m = it.value().begin(); m != it.value().end(); ++m)
          (*metadata)[m.key()] = m.value().get<std::string>();
      continue;
    }
    const auto& entry = it.value();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "F32")
      throw ValidationError("unsupported safetensors dtype '" + dtype +
                            "' for tensor '" + it.key() + "'");
    TensorData t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0])
      throw IntegrityError("bad data_offsets for tensor '" + it.key() + "'",
                           path.string());
    const std::uint64_t bytes = offsets[1] - offsets[0];
    if (bytes != static_cast<std::uint64_t>(t.numel()) * 4)
      throw IntegrityError("shape/offsets mismatch for tensor '" + it.key() +
                               "'",
                           path.string());
    t.data.resize(static_cast<std::size_t>(t.numel()));
    is.seekg(static_cast<std::streamoff>(data_begin + offsets[0]));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(bytes));
    if (!is)
      throw IntegrityError("truncated data for tensor '" + it.key() + "'",
                           path.string());
    out.emplace(it.key(), std::move(t));
  }
  return out;
}

TensorData tensor_from_matrix(const MatrixXf& m) {
  TensorData t;
  t.shape = {m.rows(), m.cols()};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
  return t;
}

MatrixXf matrix_from_tensor(const TensorData& t) {
  if (t.shape.size() != 2)
    throw ValidationError("expected rank-2 tensor, got rank " +
                          std::to_string(t.shape.size()));
  MatrixXf m(t.shape[0], t.shape[1]);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.data[idx++];
  return m;
}

TensorData tensor_from_heads(const std::vector<MatrixXf>& heads) {
  TensorData t;
  const auto n = static_cast<std::int64_t>(heads.size());
  t.shape = {n, heads.empty() ? 0 : heads[0].rows(),
             heads.empty() ? 0 : heads[0].cols()};
  for (const auto& m : heads)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
  return t;
}

std::vector<MatrixXf> heads_from_tensor(const TensorData& t) {
  if (t.shape.size() != 3)
    throw ValidationError("expected rank-3 tensor, got rank " +
                          std::to_string(t.shape.size()));
  std::vector<MatrixXf> heads;
  heads.reserve(static_cast<std::size_t>(t.shape[0]));
  std::size_t idx = 0;
  for (std::int64_t h = 0; h < t.shape[0]; ++h) {
    MatrixXf m(t.shape[1], t.shape[2]);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.data[idx++];
    heads.push_back(std::move(m));
  }
  return heads;
}

}  // namespace diffsim
