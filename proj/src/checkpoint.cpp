// Copyright 2026 The dagrank Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "dagrank/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace dagrank::ad {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw FormatError("checkpoint " + path.string() + ": truncated file");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  return static_cast<T>(u);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint " + path.string() + ": cannot open for writing");
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw FormatError("checkpoint: parameter name too long: " + e.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.values.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.values.cols()));
    for (Eigen::Index i = 0; i < e.values.size(); ++i)
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.values.data()[i]));
  }
  if (!out) throw FormatError("checkpoint " + path.string() + ": write failed");
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint " + path.string() + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint " + path.string() + ": bad magic");
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in, path);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const auto len = get_le<std::uint16_t>(in, path);
    e.name.resize(len);
    if (!in.read(e.name.data(), len)) throw FormatError("checkpoint " + path.string() + ": truncated file");
    const auto rows = get_le<std::uint32_t>(in, path);
    const auto cols = get_le<std::uint32_t>(in, path);
    e.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < e.values.size(); ++i)
      e.values.data()[i] = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename Real>
void save_parameters(const std::filesystem::path& path, const ParameterSet<Real>& params) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    entries.push_back({params[i].name, params[i].value.template cast<double>()});
  write_checkpoint(path, entries);
}

template <typename Real>
void load_parameters(const std::filesystem::path& path, ParameterSet<Real>& params) {
  const auto entries = read_checkpoint(path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == p.name) found = &e;
    if (found == nullptr) throw FormatError("checkpoint " + path.string() + ": missing parameter " + p.name);
    if (found->values.rows() != p.value.rows() || found->values.cols() != p.value.cols())
      throw ShapeError("checkpoint " + path.string() + ": parameter " + p.name + " has shape " +
                       shape_string(found->values.rows(), found->values.cols()) + ", model expects " +
                       shape_string(p.value.rows(), p.value.cols()));
    p.value = found->values.template cast<Real>();
  }
}

template void save_parameters(const std::filesystem::path&, const ParameterSet<float>&);
template void save_parameters(const std::filesystem::path&, const ParameterSet<double>&);
template void load_parameters(const std::filesystem::path&, ParameterSet<float>&);
template void load_parameters(const std::filesystem::path&, ParameterSet<double>&);

}  // namespace dagrank::ad
