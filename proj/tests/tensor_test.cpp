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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ceusp/errors.hpp"
#include "ceusp/ops.hpp"
#include "ceusp/tensor.hpp"
#include "ceusp/tensor_io.hpp"

using namespace ceusp;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, Real lo = -2, Real hi = 2, bool requires_grad = false) {
  std::uniform_real_distribution<Real> dist(lo, hi);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Fixed positive projection so an objective depends on every output entry.
Tensor project(const Tensor& y) {
  std::mt19937_64 rng(99);
  return sum(mul(y, random_tensor(y.shape(), rng, 0.5, 1.5)));
}

// Brute-force permutation oracle over explicit (a, b, c) loops.
std::vector<Real> permute_oracle(const Tensor& t, const DimOrder& order) {
  const auto& s = t.shape();
  Shape out{s[order[0]], s[order[1]], s[order[2]]};
  std::vector<Real> out_data(t.numel());
  for (std::size_t a = 0; a < out[0]; ++a) {
    for (std::size_t b = 0; b < out[1]; ++b) {
      for (std::size_t c = 0; c < out[2]; ++c) {
        std::size_t src[3];
        src[order[0]] = a;
        src[order[1]] = b;
        src[order[2]] = c;
        out_data[(a * out[1] + b) * out[2] + c] = t[(src[0] * s[1] + src[1]) * s[2] + src[2]];
      }
    }
  }
  return out_data;
}

}  // namespace

TEST(DimOrder, NamedOrdersMatchAxisMaps) {
  EXPECT_EQ(DimOrder::CHW().axes(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(DimOrder::HWC().axes(), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(DimOrder::WCH().axes(), (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(DimOrder::CWH().axes(), (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(DimOrder::HWC().name(), "HWC");
  EXPECT_THROW(DimOrder({0, 0, 1}), ShapeError);
  EXPECT_THROW(DimOrder({0, 3, 1}), ShapeError);
}

TEST(Permute, HwcShapeBookkeeping) {
  std::mt19937_64 rng(1);
  auto t = random_tensor({2, 3, 4}, rng);
  auto p = permute(t, DimOrder::HWC());
  EXPECT_EQ(p.shape(), (Shape{3, 4, 2}));
  auto back = inverse_permute(p, DimOrder::HWC());
  EXPECT_EQ(back.shape(), (Shape{2, 3, 4}));
}

TEST(Permute, IdentityOrderLeavesTensorUnchanged) {
  std::mt19937_64 rng(2);
  auto t = random_tensor({3, 5, 2}, rng);
  EXPECT_EQ(permute(t, DimOrder::CHW()).to_vector(), t.to_vector());
  EXPECT_EQ(inverse_permute(t, DimOrder::CHW()).to_vector(), t.to_vector());
}

TEST(Permute, RankMismatchIsShapeError) {
  auto t = Tensor::zeros({2, 3});
  EXPECT_THROW(permute(t, DimOrder::HWC()), ShapeError);
  EXPECT_THROW(inverse_permute(t, DimOrder::HWC()), ShapeError);
}

TEST(Permute, MatchesIndexOracleAndRoundTrips) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> extent(1, 5);
  std::vector<std::vector<std::size_t>> all_orders{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int trial = 0; trial < 100; ++trial) {
    auto t = random_tensor({extent(rng), extent(rng), extent(rng)}, rng);
    DimOrder order(all_orders[static_cast<std::size_t>(trial) % all_orders.size()]);
    auto p = permute(t, order);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.shape()[i], t.shape()[order[i]]);
    EXPECT_EQ(p.to_vector(), permute_oracle(t, order));
    EXPECT_EQ(inverse_permute(p, order).to_vector(), t.to_vector());
  }
}

TEST(Permute, PreservesSum) {
  std::mt19937_64 rng(4);
  auto t = random_tensor({3, 4, 5}, rng);
  for (const auto& order : DimOrder::branch_orders()) {
    EXPECT_NEAR(sum(permute(t, order)).item(), sum(t).item(), 1e-12);
  }
}

TEST(Primitives, ForwardExamples) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);

  auto c = Tensor::full({3, 5, 7}, 2.5);
  EXPECT_EQ(global_avg_pool(c).to_vector(), std::vector<Real>(3, 2.5));

  std::mt19937_64 rng(5);
  auto x = random_tensor({4, 6, 5}, rng);
  std::vector<Real> eye(4 * 4, 0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  auto w = Tensor::from_data({4, 4, 1, 1}, eye);
  auto y = conv2d(x, w, Tensor::zeros({4}), {});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(Primitives, ConvMatchesDirectSum) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 7, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto y = conv2d(x, w, b, {.stride = 2, .padding = 1});
  ASSERT_EQ(y.shape(), (Shape{3, 4, 3}));
  for (std::size_t co = 0; co < 3; ++co) {
    for (std::size_t oy = 0; oy < 4; ++oy) {
      for (std::size_t ox = 0; ox < 3; ++ox) {
        Real s = b[co];
        for (std::size_t ci = 0; ci < 2; ++ci) {
          for (long ky = 0; ky < 3; ++ky) {
            for (long kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy) * 2 + ky - 1, ix = static_cast<long>(ox) * 2 + kx - 1;
              if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
              s += w[((co * 2 + ci) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                   x[(ci * 7 + static_cast<std::size_t>(iy)) * 6 + static_cast<std::size_t>(ix)];
            }
          }
        }
        EXPECT_NEAR(y[(co * 4 + oy) * 3 + ox], s, 1e-12);
      }
    }
  }
}

TEST(Primitives, GroupNormStandardizesEachGroup) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({4, 3, 5}, rng);
  const auto ones = Tensor::full({4}, 1), zeros = Tensor::zeros({4});
  for (std::size_t groups : {1, 2, 4}) {
    const auto y = group_norm(x, ones, zeros, groups).to_vector();
    const std::size_t span = y.size() / groups;
    for (std::size_t g = 0; g < groups; ++g) {
      double mu = 0, sq = 0;
      for (std::size_t i = 0; i < span; ++i) mu += y[g * span + i];
      mu /= static_cast<double>(span);
      for (std::size_t i = 0; i < span; ++i) sq += (y[g * span + i] - mu) * (y[g * span + i] - mu);
      EXPECT_NEAR(mu, 0, 1e-12);
      EXPECT_NEAR(sq / static_cast<double>(span), 1, 1e-3);
    }
  }
  EXPECT_EQ(group_norm(x, ones, zeros, 4).to_vector(), channel_norm(x, ones, zeros).to_vector());
  EXPECT_THROW(group_norm(x, ones, zeros, 3), ShapeError);
}

TEST(Primitives, SoftmaxAndLogSoftmaxAgree) {
  auto z = Tensor::from_data({4}, {0.1, -2.0, 3.0, 0.5});
  auto p = softmax(z);
  auto lp = log_softmax(z);
  Real total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(std::log(p[i]), lp[i], 1e-12);
    total += p[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Primitives, ErrorsAreTyped) {
  EXPECT_THROW(log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from_data({1}, {-1.0})), DomainError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(linear(Tensor::zeros({3}), Tensor::zeros({2, 4}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), {}), ShapeError);
  EXPECT_THROW(l2_normalize(Tensor::zeros({4})), DomainError);
  EXPECT_THROW(exp(Tensor::scalar(1e6)), NumericError);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::from_data({3}, {0.5, -1.0, 2.0}, true);
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<Real>{1, 1, 1}));
}

TEST(Backward, SquareGivesTwoX) {
  auto x = Tensor::from_data({3}, {0.5, -1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad(), (std::vector<Real>{1.0, -2.0, 4.0}));
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  auto x = Tensor::from_data({2}, {0.3, -0.7}, true);
  sum(add(x, x)).backward();
  EXPECT_EQ(x.grad(), (std::vector<Real>{2, 2}));
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<Real>{3, 3}));
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor::zeros({2}, true);
  EXPECT_THROW(relu(x).backward(), ContractError);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  auto x = Tensor::zeros({2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(sigmoid(x).requires_grad());
}

TEST(GradCheck, SigmoidSum) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({16}, rng);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x, 1e-3), 1e-6);
}

TEST(GradCheck, PermutedSumHasUnitGradient) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 3, 4}, rng, -2, 2, true);
  sum(permute(x, DimOrder::HWC())).backward();
  EXPECT_EQ(x.grad(), std::vector<Real>(24, 1.0));
}

TEST(GradCheck, RejectsNonPositiveStep) {
  auto x = Tensor::zeros({2});
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0), ContractError);
}

// Every primitive against central differences on inputs in [-2, 2].
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  constexpr Real kStep = 1e-5, kTol = 1e-5;
  auto x = random_tensor({3, 5, 4}, rng);
  auto y = random_tensor({3, 5, 4}, rng);
  auto ch = random_tensor({3, 1, 1}, rng);
  auto v = random_tensor({6}, rng);
  auto u = random_tensor({6}, rng);
  auto w = random_tensor({4, 6}, rng);
  auto b = random_tensor({4}, rng);
  auto kw = random_tensor({2, 3, 3, 3}, rng);
  auto kb = random_tensor({2}, rng);
  auto gamma = random_tensor({3}, rng);
  auto beta = random_tensor({3}, rng);
  auto pos = random_tensor({6}, rng, 0.2, 2.0);

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> leaves;
  };
  const std::vector<Case> cases{
      {"permute", [&] { return project(permute(x, DimOrder::WCH())); }, {x}},
      {"inverse_permute", [&] { return project(inverse_permute(x, DimOrder::HWC())); }, {x}},
      {"reshape", [&] { return project(reshape(x, {15, 4})); }, {x}},
      {"concat", [&] { return project(concat({x, y})); }, {x, y}},
      {"stack", [&] { return project(stack({v, u})); }, {v, u}},
      {"select", [&] { return mul(select(v, 2), select(u, 3)); }, {v, u}},
      {"add", [&] { return project(add(x, ch)); }, {x, ch}},
      {"sub", [&] { return project(sub(x, y)); }, {x, y}},
      {"mul", [&] { return project(mul(x, ch)); }, {x, ch}},
      {"scale", [&] { return project(scale(x, -1.7)); }, {x}},
      {"relu", [&] { return project(relu(x)); }, {x}},
      {"sigmoid", [&] { return project(sigmoid(x)); }, {x}},
      {"exp", [&] { return project(exp(x)); }, {x}},
      {"log", [&] { return project(log(pos)); }, {pos}},
      {"clamp_min", [&] { return project(clamp_min(x, 0.1)); }, {x}},
      {"mean", [&] { return mul(mean(x), mean(x)); }, {x}},
      {"dot", [&] { return dot(v, u); }, {v, u}},
      {"softmax", [&] { return project(softmax(v)); }, {v}},
      {"log_softmax", [&] { return project(log_softmax(v)); }, {v}},
      {"l2_normalize", [&] { return project(l2_normalize(v)); }, {v}},
      {"linear", [&] { return project(linear(v, w, b)); }, {v, w, b}},
      {"conv2d", [&] { return project(conv2d(x, kw, kb, {.stride = 2, .padding = 1})); }, {x, kw, kb}},
      {"global_avg_pool", [&] { return project(global_avg_pool(x)); }, {x}},
      {"channel_avg_pool", [&] { return project(channel_avg_pool(x)); }, {x}},
      {"channel_max_pool", [&] { return project(channel_max_pool(x)); }, {x}},
      {"channel_norm", [&] { return project(channel_norm(x, gamma, beta)); }, {x, gamma, beta}},
      {"group_norm", [&] { return project(group_norm(x, gamma, beta, 1)); }, {x, gamma, beta}},
  };
  for (const auto& c : cases) {
    EXPECT_LT(grad_check(c.f, c.leaves, kStep), kTol) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range(1, 21));

TEST(Cten, RoundTripAndHeaderLayout) {
  std::mt19937_64 rng(10);
  auto t = random_tensor({2, 3, 4}, rng);
  auto bytes = encode_cten(t, CtenDtype::kF64);
  ASSERT_EQ(bytes.size(), 7u + 3 * 4 + 24 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CTEN");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 3);
  EXPECT_EQ(bytes[7], 2);  // little-endian u32 dims
  EXPECT_EQ(bytes[8], 0);
  auto back = decode_cten(bytes);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.to_vector(), t.to_vector());

  auto path = std::filesystem::temp_directory_path() / "ceusp_cten_test.cten";
  write_cten(path, t, CtenDtype::kF32);
  auto narrowed = read_cten(path);
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(narrowed[i], static_cast<Real>(static_cast<float>(t[i])));
  std::filesystem::remove(path);
}

TEST(Cten, RejectsCorruptStreams) {
  auto bytes = encode_cten(Tensor::zeros({2, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_cten(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_cten(bad_version), DataError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_cten(truncated), DataError);
  EXPECT_THROW(read_cten("/nonexistent/file.cten"), DataError);
}
