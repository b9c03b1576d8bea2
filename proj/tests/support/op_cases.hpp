#pragma once

// One gradient-check case per differentiable operation, shared by the tensor
// unit tests and the acceptance runner.

#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mcsformer/random.hpp"
#include "mcsformer/tensor.hpp"

namespace mcsformer::testing {

struct OpCase {
  std::string name;
  std::function<ad::Tensor(const std::vector<ad::Tensor>&)> f;
  std::vector<ad::Tensor> inputs;
};

inline ad::Tensor rand_tensor(ad::Shape shape, std::uint64_t seed, bool grad = true,
                              double scale = 1.0) {
  SeededRng rng(seed);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), grad);
}

/// Projects any output to a scalar with fixed random weights so every output
/// entry contributes a distinct gradient.
inline ad::Tensor project(const ad::Tensor& y, std::uint64_t seed = 77) {
  const ad::Tensor w = rand_tensor(y.shape(), seed, false);
  return ad::sum(ad::mul(y, w));
}

inline std::vector<OpCase> op_gradcheck_cases() {
  using ad::Tensor;
  using In = const std::vector<Tensor>&;
  std::vector<OpCase> c;
  c.push_back({"add", [](In in) { return project(ad::add(in[0], in[1])); },
               {rand_tensor({3, 4}, 1), rand_tensor({3, 4}, 2)}});
  c.push_back({"sub", [](In in) { return project(ad::sub(in[0], in[1])); },
               {rand_tensor({3, 4}, 3), rand_tensor({3, 4}, 4)}});
  c.push_back({"mul", [](In in) { return project(ad::mul(in[0], in[1])); },
               {rand_tensor({3, 4}, 5), rand_tensor({3, 4}, 6)}});
  c.push_back({"scale", [](In in) { return project(ad::scale(in[0], -1.7)); },
               {rand_tensor({5}, 7)}});
  c.push_back({"relu", [](In in) { return project(ad::relu(in[0])); }, {rand_tensor({20}, 8)}});
  c.push_back({"gelu", [](In in) { return project(ad::gelu(in[0])); }, {rand_tensor({20}, 9)}});
  c.push_back({"sum", [](In in) { return ad::sum(ad::mul(in[0], in[0])); },
               {rand_tensor({6}, 10)}});
  c.push_back({"mean", [](In in) { return ad::mean(ad::mul(in[0], in[0])); },
               {rand_tensor({6}, 11)}});
  c.push_back({"mean_axis", [](In in) { return project(ad::mean_axis(in[0], 1)); },
               {rand_tensor({2, 3, 4}, 12)}});
  c.push_back({"add_bias", [](In in) { return project(ad::add_bias(in[0], in[1])); },
               {rand_tensor({2, 3, 4}, 13), rand_tensor({4}, 14)}});
  c.push_back({"add_bias (2-d bias)", [](In in) { return project(ad::add_bias(in[0], in[1])); },
               {rand_tensor({2, 3, 4}, 15), rand_tensor({3, 4}, 16)}});
  c.push_back({"matmul", [](In in) { return project(ad::matmul(in[0], in[1])); },
               {rand_tensor({3, 4}, 20), rand_tensor({4, 2}, 21)}});
  c.push_back({"bmm", [](In in) { return project(ad::bmm(in[0], in[1])); },
               {rand_tensor({2, 3, 4}, 22), rand_tensor({2, 4, 5}, 23)}});
  c.push_back({"linear", [](In in) { return project(ad::linear(in[0], in[1], in[2])); },
               {rand_tensor({2, 3, 4}, 24), rand_tensor({4, 5}, 25), rand_tensor({5}, 26)}});
  c.push_back({"linear (no bias)", [](In in) { return project(ad::linear(in[0], in[1])); },
               {rand_tensor({3, 4}, 27), rand_tensor({4, 2}, 28)}});
  c.push_back({"reshape", [](In in) { return project(ad::reshape(in[0], {6, 2})); },
               {rand_tensor({3, 4}, 29)}});
  c.push_back({"permute", [](In in) { return project(ad::permute(in[0], {2, 0, 1})); },
               {rand_tensor({2, 3, 4}, 30)}});
  c.push_back({"transpose", [](In in) { return project(ad::transpose(in[0])); },
               {rand_tensor({3, 5}, 31)}});
  c.push_back({"concat", [](In in) { return project(ad::concat({in[0], in[1]}, 1)); },
               {rand_tensor({2, 3, 2}, 32), rand_tensor({2, 1, 2}, 33)}});
  c.push_back({"gather_rows", [](In in) { return project(ad::gather_rows(in[0], {2, 0, 2, 1})); },
               {rand_tensor({3, 4}, 34)}});
  c.push_back({"softmax", [](In in) { return project(ad::softmax(in[0])); },
               {rand_tensor({3, 5}, 40)}});
  c.push_back({"softmax (axis 1)", [](In in) { return project(ad::softmax(in[0], 1)); },
               {rand_tensor({2, 4, 3}, 41)}});
  c.push_back({"layer_norm", [](In in) { return project(ad::layer_norm(in[0], in[1], in[2])); },
               {rand_tensor({4, 6}, 42), rand_tensor({6}, 43), rand_tensor({6}, 44)}});
  c.push_back({"dropout", [](In in) { return project(ad::dropout(in[0], 0.4, true, 9)); },
               {rand_tensor({30}, 45)}});
  c.push_back({"conv2d", [](In in) { return project(ad::conv2d(in[0], in[1], in[2], 1, 1)); },
               {rand_tensor({1, 1, 5, 5}, 50), rand_tensor({2, 1, 3, 3}, 51),
                rand_tensor({2}, 52)}});
  c.push_back({"conv2d (stride 2, no pad)",
               [](In in) { return project(ad::conv2d(in[0], in[1], in[2], 0, 2)); },
               {rand_tensor({2, 2, 7, 7}, 53), rand_tensor({3, 2, 3, 3}, 54),
                rand_tensor({3}, 55)}});
  // Distinct values keep the argmax away from ties.
  std::vector<double> v(2 * 3 * 4 * 4);
  std::iota(v.begin(), v.end(), 0.0);
  SeededRng rng(56);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  for (double& x : v) x *= 0.1;
  c.push_back({"maxpool2d", [](In in) { return project(ad::maxpool2d(in[0])); },
               {Tensor::from({2, 3, 4, 4}, v, true)}});
  return c;
}

}  // namespace mcsformer::testing
