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
#include <string>
#include <vector>

#include "ceusp/tensor.hpp"

namespace ceusp {

struct GradCheckResult {
  std::string name;
  Real max_rel_err = 0;
};

inline constexpr Real kGradCheckStep = Real{1e-5};

/// Central-difference checks on random inputs drawn from `seed`: every
/// primitive, a full attention block with its parameters, the full
/// four-branch attention with its parameters, and the summed training loss.
std::vector<GradCheckResult> gradient_suite(std::uint64_t seed, Real step = kGradCheckStep);

Real max_error(const std::vector<GradCheckResult>& results);

}  // namespace ceusp
