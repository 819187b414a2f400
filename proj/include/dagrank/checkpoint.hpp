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
//
// Binary parameter container.
//
//   "CGRT" | version u32 | count u32 |
//   count x ( name_len u16 | name bytes | rows u32 | cols u32 | rows*cols f64 )
//
// All integers and reals little-endian, reals row-major. Parameters are stored
// as 64-bit regardless of the precision they were trained in.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dagrank/autodiff.hpp"

namespace dagrank::ad {

inline constexpr char kCheckpointMagic[4] = {'C', 'G', 'R', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Matrix<double> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename Real>
void save_parameters(const std::filesystem::path& path, const ParameterSet<Real>& params);

/// Overwrites every parameter in `params` from the file. Entries are matched
/// by name; a missing entry is a FormatError and a shape disagreement a
/// ShapeError naming both shapes. Extra entries in the file are ignored so a
/// single file may hold several components.
template <typename Real>
void load_parameters(const std::filesystem::path& path, ParameterSet<Real>& params);

}  // namespace dagrank::ad
