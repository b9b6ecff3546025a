// Copyright 2026 The CEUSP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ceusp/tensor.hpp"

namespace ceusp {

// CTEN binary tensor file:
//   "CTEN" | u8 version (1) | u8 dtype (0 = f32, 1 = f64) | u8 rank |
//   u32 dims[rank] | row-major payload. All integers and floats little-endian.

enum class CtenDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

/// dtype matching the build's Real.
CtenDtype native_cten_dtype();

std::vector<std::uint8_t> encode_cten(const Tensor& t, CtenDtype dtype = native_cten_dtype());
/// DataError on bad magic, version, dtype, or truncated payload.
Tensor decode_cten(const std::vector<std::uint8_t>& bytes);

void write_cten(const std::filesystem::path& path, const Tensor& t, CtenDtype dtype = native_cten_dtype());
Tensor read_cten(const std::filesystem::path& path);

/// Central-difference gradient check over every component of every leaf.
///
/// `f` must rebuild the scalar from the current leaf values on each call.
/// Returns max |analytic - numeric| / max(1e-8, |analytic|). Raises
/// NumericError when either estimate is not finite.
Real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, Real h);

/// Single-input convenience form: f(x) for a leaf x.
Real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Real h);

}  // namespace ceusp
