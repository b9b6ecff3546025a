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

#include "ceusp/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ceusp/errors.hpp"

namespace ceusp {
namespace {

constexpr char kMagic[4] = {'C', 'T', 'E', 'N'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

}  // namespace

CtenDtype native_cten_dtype() { return sizeof(Real) == 4 ? CtenDtype::kF32 : CtenDtype::kF64; }

std::vector<std::uint8_t> encode_cten(const Tensor& t, CtenDtype dtype) {
  if (t.rank() > 255) throw ShapeError("CTEN supports rank <= 255");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto extent : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  for (Real v : t.data()) {
    if (dtype == CtenDtype::kF32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
  }
  return out;
}

Tensor decode_cten(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 7 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw DataError("not a CTEN stream (bad magic)");
  }
  if (bytes[4] != kVersion) throw DataError("unsupported CTEN version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw DataError("unknown CTEN dtype " + std::to_string(bytes[5]));
  const auto dtype = static_cast<CtenDtype>(bytes[5]);
  const std::size_t rank = bytes[6];
  std::size_t pos = 7;
  if (bytes.size() < pos + 4 * rank) throw DataError("truncated CTEN header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 4) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + pos);
    if (shape[i] == 0) throw DataError("CTEN dimension of extent 0");
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype == CtenDtype::kF32 ? 4 : 8;
  if (bytes.size() != pos + n * width) throw DataError("CTEN payload size does not match its shape");
  std::vector<Real> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += width) {
    if (dtype == CtenDtype::kF32) {
      data[i] = static_cast<Real>(std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + pos)));
    } else {
      data[i] = static_cast<Real>(std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + pos)));
    }
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

void write_cten(const std::filesystem::path& path, const Tensor& t, CtenDtype dtype) {
  const auto bytes = encode_cten(t, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Tensor read_cten(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_cten(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, Real h) {
  if (!(h > 0)) throw ContractError("grad_check step must be positive");
  std::vector<Tensor> xs = leaves;
  for (auto& x : xs) {
    if (!x.is_leaf()) throw ContractError("grad_check needs leaf tensors");
    x.set_requires_grad(true);
    x.zero_grad();
  }
  f().backward();
  Real worst = 0;
  for (auto& x : xs) {
    const auto analytic = x.grad();
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      Real plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        plus = f().item();
        values[i] = saved - h;
        minus = f().item();
      }
      values[i] = saved;
      const Real numeric = (plus - minus) / (2 * h);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite gradient estimate");
      }
      const Real err = std::abs(analytic[i] - numeric) / std::max(Real{1e-8}, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
    x.zero_grad();
  }
  return worst;
}

Real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Real h) {
  return grad_check([&] { return f(x); }, {x}, h);
}

}  // namespace ceusp
