#include "mcsformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "mcsformer/error.hpp"

namespace mcsformer::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + detail);
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p && p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_rule);
  }
  return Tensor(std::move(node));
}

bool wants(const NodePtr& p) { return p && p->requires_grad; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error(op, to_string(a.shape()) + " vs " + to_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// out[i,j] (+)= sum_k a[i,k] b[k,j] on raw row-major buffers.
void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// out[i,j] += sum_k a[i,k] b[j,k]  (a * b^T)
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      out[i * n + j] += acc;
    }
}

// out[k,j] += sum_i a[i,k] b[i,j]  (a^T * b)
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* row = out + p * n;
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (ad::numel(shape) != data.size())
    shape_error("from", to_string(shape) + " needs " + std::to_string(ad::numel(shape)) +
                            " values, got " + std::to_string(data.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) shape_error("item", "tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) shape_error("at", "index rank mismatch");
  std::size_t flat = 0, d = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[d]) shape_error("at", "index out of range");
    flat = flat * node_->shape[d++] + i;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

std::vector<Node*> topological_order(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; deep graphs must not overflow the stack.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw Error(ErrorCode::NonScalarLoss,
                "loss has shape " + (loss.defined() ? to_string(loss.shape()) : "[]"));
  const auto order = topological_order(loss);
  if (order.empty()) return;
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return make_result("add", a.shape(), std::move(v), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (wants(self.parents[k])) {
        auto g = self.parents[k]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return make_result("sub", a.shape(), std::move(v), {a.node(), b.node()}, [](Node& self) {
    if (wants(self.parents[0])) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return make_result("mul", a.shape(), std::move(v), {a.node(), b.node()}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (wants(self.parents[0])) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self.parents[1])) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * s;
  return make_result("scale", a.shape(), std::move(v), {a.node()}, [s](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return make_result("relu", x.shape(), std::move(v), {x.node()}, [](Node& self) {
    const auto& xv = self.parents[0]->value;
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double z = x.data()[i];
    v[i] = 0.5 * z * (1.0 + std::tanh(c * (z + a * z * z * z)));
  }
  return make_result("gelu", x.shape(), std::move(v), {x.node()}, [](Node& self) {
    const auto& xv = self.parents[0]->value;
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = xv[i];
      const double t = std::tanh(c * (z + a * z * z * z));
      const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * a * z * z);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * z * dt);
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin()))
    shape_error("add_bias", to_string(bs) + " is not a trailing shape of " + to_string(xs));
  const std::size_t period = b.numel();
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] + b.data()[i % period];
  return make_result("add_bias", xs, std::move(v), {x.node(), b.node()}, [period](Node& self) {
    if (wants(self.parents[0])) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(m * n, 0.0);
  gemm(a.data().data(), b.data().data(), v.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(v), {a.node(), b.node()},
                     [m, k, n](Node& self) {
                       const auto& A = self.parents[0];
                       const auto& B = self.parents[1];
                       if (wants(A))
                         gemm_nt(self.grad.data(), B->value.data(), A->grad_buffer().data(), m,
                                 n, k);
                       if (wants(B))
                         gemm_tn(A->value.data(), self.grad.data(), B->grad_buffer().data(), m,
                                 k, n);
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    shape_error("bmm", to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> v(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t)
    gemm(a.data().data() + t * m * k, b.data().data() + t * k * n, v.data() + t * m * n, m, k,
         n);
  return make_result("bmm", {batch, m, n}, std::move(v), {a.node(), b.node()},
                     [batch, m, k, n](Node& self) {
                       const auto& A = self.parents[0];
                       const auto& B = self.parents[1];
                       double* ga = wants(A) ? A->grad_buffer().data() : nullptr;
                       double* gb = wants(B) ? B->grad_buffer().data() : nullptr;
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = self.grad.data() + t * m * n;
                         if (ga) gemm_nt(g, B->value.data() + t * k * n, ga + t * m * k, m, n, k);
                         if (gb) gemm_tn(A->value.data() + t * m * k, g, gb + t * k * n, m, k, n);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0))
    shape_error("linear", to_string(x.shape()) + " x " + to_string(w.shape()));
  const std::size_t rows = x.numel() / w.dim(0);
  Tensor y = matmul(reshape(x, {rows, w.dim(0)}), w);
  if (b.defined()) y = add_bias(y, b);
  Shape out = x.shape();
  out.back() = w.dim(1);
  return reshape(y, std::move(out));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    shape_error("reshape", to_string(x.shape()) + " -> " + to_string(shape));
  return make_result("reshape", std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                     {x.node()}, [](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& in = x.shape();
  const std::size_t r = in.size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) shape_error("permute", "axis count mismatch");
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) shape_error("permute", "invalid axis list");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  // map[o] = input offset of output element o
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<double> v(n);
  for (std::size_t o = 0; o < n; ++o) v[o] = x.data()[map[o]];
  return make_result("permute", std::move(out), std::move(v), {x.node()},
                     [map = std::move(map)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) shape_error("transpose", "expects rank 2, got " + to_string(x.shape()));
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_error("concat", "axis out of range");
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        shape_error("concat", to_string(s) + " vs " + to_string(first));
    out[axis] += s[axis];
  }
  const AxisSplit whole = split_at(out, axis);
  std::vector<double> v(numel(out));
  std::vector<std::size_t> offsets;
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * whole.inner;
    for (std::size_t o = 0; o < whole.outer; ++o)
      std::copy_n(p.data().begin() + o * chunk, chunk,
                  v.begin() + o * whole.len * whole.inner + offset);
    offsets.push_back(offset);
    parents.push_back(p.node());
    offset += chunk;
  }
  return make_result("concat", out, std::move(v), std::move(parents),
                     [whole, offsets, axis](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         const auto& p = self.parents[k];
                         if (!wants(p)) continue;
                         const std::size_t chunk = p->shape[axis] * whole.inner;
                         auto g = p->grad_buffer();
                         for (std::size_t o = 0; o < whole.outer; ++o)
                           for (std::size_t i = 0; i < chunk; ++i)
                             g[o * chunk + i] +=
                                 self.grad[o * whole.len * whole.inner + offsets[k] + i];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return make_result("sum", {1}, {s}, {x.node()}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
  return make_result("mean", {1}, {s}, {x.node()}, [n](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0] / n;
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_error("mean_axis", "axis out of range");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out.empty()) out = {1};
  std::vector<double> v(s.outer * s.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        v[o * s.inner + i] += x.data()[(o * s.len + l) * s.inner + i] * inv;
  return make_result("mean_axis", std::move(out), std::move(v), {x.node()},
                     [s, inv](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i] * inv;
                     });
}

Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  if (x.rank() < 1) shape_error("gather_rows", "scalar input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<double> v(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) shape_error("gather_rows", "row index out of range");
    std::copy_n(x.data().begin() + index[r] * width, width, v.begin() + r * width);
  }
  const std::size_t out_rows = index.size();
  return make_result("gather_rows", {out_rows, width}, std::move(v), {x.node()},
                     [index = std::move(index), width](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < index.size(); ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           g[index[r] * width + c] += self.grad[r * width + c];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_error("softmax", "axis out of range");
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> v(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x.data()[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(x.data()[base + l * s.inner] - mx);
        v[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) v[base + l * s.inner] /= total;
    }
  return make_result("softmax", x.shape(), std::move(v), {x.node()}, [s](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l)
          dot += y[base + l * s.inner] * self.grad[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          g[at] += y[at] * (self.grad[at] - dot);
        }
      }
  });
}

Tensor softmax(const Tensor& x) { return softmax(x, x.rank() - 1); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    shape_error("layer_norm", "affine parameters must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel()), inv_std(rows), v(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      v[r * d + j] = gamma.data()[j] * xhat[r * d + j] + beta.data()[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(v), {x.node(), gamma.node(), beta.node()},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gam = self.parents[1]->value;
        if (wants(self.parents[1])) {
          auto gg = self.parents[1]->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % d] += self.grad[i] * xhat[i];
        }
        if (wants(self.parents[2])) {
          auto gb = self.parents[2]->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += self.grad[i];
        }
        if (wants(self.parents[0])) {
          auto gx = self.parents[0]->grad_buffer();
          const double n = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = self.grad[r * d + j] * gam[j];
              sum_g += gh;
              sum_gx += gh * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = self.grad[r * d + j] * gam[j];
              gx[r * d + j] += inv_std[r] * (gh - sum_g / n - xhat[r * d + j] * sum_gx / n);
            }
          }
        }
      });
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Tensor dropout(const Tensor& x, double p, bool training, std::uint64_t key) {
  if (!(p >= 0.0 && p < 1.0))
    throw Error(ErrorCode::InvalidProbability, "dropout p must lie in [0, 1), got " +
                                                   std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  const std::uint64_t stream = mix64(key);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(mix64(stream ^ mix64(i)) >> 11) * 0x1.0p-53;
    mask[i] = u < p ? 0.0 : keep_scale;
  }
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * mask[i];
  return make_result("dropout", x.shape(), std::move(v), {x.node()},
                     [mask = std::move(mask)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad,
              std::size_t stride) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    shape_error("conv2d", to_string(x.shape()) + " with kernel " + to_string(w.shape()));
  if (b.shape() != Shape{w.dim(0)}) shape_error("conv2d", "bias must be [filters]");
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (h + 2 * pad < kh || wd + 2 * pad < kw) shape_error("conv2d", "kernel larger than input");
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;

  // Visits every (output pixel, filter, channel, tap) with a valid input
  // position, calling fn(out_index, in_index, weight_index).
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t in = 0; in < n; ++in)
      for (std::size_t fi = 0; fi < f; ++fi)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const std::size_t widx = ((fi * c + ci) * kh + ki) * kw + kj;
              for (std::size_t oy = 0; oy < oh; ++oy) {
                const long long iy = static_cast<long long>(oy * stride + ki) - static_cast<long long>(pad);
                if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                const std::size_t obase = ((in * f + fi) * oh + oy) * ow;
                const std::size_t ibase = ((in * c + ci) * h + static_cast<std::size_t>(iy)) * wd;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long long ix = static_cast<long long>(ox * stride + kj) - static_cast<long long>(pad);
                  if (ix < 0 || ix >= static_cast<long long>(wd)) continue;
                  fn(obase + ox, ibase + static_cast<std::size_t>(ix), widx);
                }
              }
            }
  };

  std::vector<double> v(n * f * oh * ow);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t fi = 0; fi < f; ++fi)
      std::fill_n(v.begin() + ((in * f + fi) * oh * ow), oh * ow, b.data()[fi]);
  const double* xv = x.data().data();
  const double* wv = w.data().data();
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { v[o] += xv[i] * wv[k]; });

  return make_result("conv2d", {n, f, oh, ow}, std::move(v), {x.node(), w.node(), b.node()},
                     [for_each_tap, n, f, oh, ow](Node& self) {
                       const auto& X = self.parents[0];
                       const auto& W = self.parents[1];
                       const auto& B = self.parents[2];
                       const double* g = self.grad.data();
                       if (wants(X)) {
                         double* gx = X->grad_buffer().data();
                         const double* wv = W->value.data();
                         for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
                           gx[i] += g[o] * wv[k];
                         });
                       }
                       if (wants(W)) {
                         double* gw = W->grad_buffer().data();
                         const double* xv = X->value.data();
                         for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
                           gw[k] += g[o] * xv[i];
                         });
                       }
                       if (wants(B)) {
                         auto gb = B->grad_buffer();
                         for (std::size_t in = 0; in < n; ++in)
                           for (std::size_t fi = 0; fi < f; ++fi)
                             for (std::size_t p = 0; p < oh * ow; ++p)
                               gb[fi] += g[(in * f + fi) * oh * ow + p];
                       }
                     });
}

Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  if (x.rank() != 4) shape_error("maxpool2d", "expects [N,C,H,W], got " + to_string(x.shape()));
  if (k < 1 || stride != k)
    throw Error(ErrorCode::InvalidConfig, "maxpool2d supports non-overlapping windows only");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % k != 0 || w % k != 0)
    throw Error(ErrorCode::IndivisibleShape,
                "spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                    " not divisible by " + std::to_string(k));
  const std::size_t oh = h / k, ow = w / k;
  std::vector<double> v(n * c * oh * ow);
  std::vector<std::size_t> argmax(v.size());
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = plane * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t at = plane * h * w + (oy * k + dy) * w + ox * k + dx;
            if (x.data()[at] > x.data()[best]) best = at;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        v[o] = x.data()[best];
        argmax[o] = best;
      }
  return make_result("maxpool2d", {n, c, oh, ow}, std::move(v), {x.node()},
                     [argmax = std::move(argmax)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                     });
}

}  // namespace mcsformer::ad
