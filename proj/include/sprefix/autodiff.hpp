// Copyright 2026 The sprefix Authors
// SPDX-License-Identifier: Apache-2.0
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

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape records every operation in execution order. Each recorded node keeps
// its forward value and a backward rule that accumulates input adjoints from
// the output adjoint. backward() is const: it allocates its own adjoint
// buffers, so the same tape can be differentiated once per loss.
//
// There is no broadcasting. Shapes must line up exactly; the few row-wise
// operations (add_rowwise, mul_rowwise) spell the alignment out in their
// name.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sprefix/tensor.hpp"

namespace sprefix {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext {
  const Tensor& grad;    // adjoint of the node output
  const Tensor& output;  // forward value of the node
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;  // nullptr where no grad is needed

  const Tensor& in(std::size_t k) const { return *inputs[k]; }
  Tensor* dx(std::size_t k) const { return input_grads[k]; }
};

using BackwardRule = std::function<void(const BackwardContext&)>;
using Gradients = std::map<std::string, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Named trainable input. Names are unique per tape.
  Var leaf(std::string name, Tensor value) {
    if (leaf_index_.contains(name)) {
      throw std::invalid_argument("tape: duplicate leaf '" + name + "'");
    }
    value.requires_grad = true;
    leaf_index_.emplace(name, nodes_.size());
    leaf_order_.push_back(nodes_.size());
    nodes_.push_back(Node{"leaf", std::move(value), {}, nullptr, true,
                          std::move(name)});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) {
    value.requires_grad = false;
    nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, false, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var record(std::string_view op, Tensor value, std::span<const Var> inputs,
             BackwardRule rule) {
    Node node{std::string(op), std::move(value), {}, nullptr, false, {}};
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape_ != this) {
        throw std::invalid_argument(std::string(op) +
                                    ": operand belongs to another tape");
      }
      node.inputs.push_back(v.id_);
      node.needs_grad = node.needs_grad || nodes_[v.id_].needs_grad;
    }
    if (node.needs_grad) node.rule = std::move(rule);
    node.value.requires_grad = node.needs_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  Var record(std::string_view op, Tensor value, std::initializer_list<Var> in,
             BackwardRule rule) {
    return record(op, std::move(value), std::span<const Var>(in.begin(), in.size()),
                  std::move(rule));
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id_).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

  std::vector<std::string> leaf_names() const {
    std::vector<std::string> names;
    for (std::size_t id : leaf_order_) names.push_back(nodes_[id].name);
    return names;
  }

  // Gradient of a scalar loss with respect to every named leaf. Leaves the
  // loss does not reach get exact zeros of their own shape.
  Gradients backward(Var loss) const {
    if (loss.tape_ != this) {
      throw std::invalid_argument("backward: loss belongs to another tape");
    }
    const Tensor& loss_value = nodes_[loss.id_].value;
    if (loss_value.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       shape_str(loss_value.shape));
    }
    std::vector<Tensor> adj(nodes_.size());
    adj[loss.id_] = Tensor(loss_value.shape, 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (adj[i].empty() || !node.rule) continue;
      in_values.clear();
      in_grads.clear();
      for (std::size_t j : node.inputs) {
        in_values.push_back(&nodes_[j].value);
        if (nodes_[j].needs_grad) {
          if (adj[j].empty()) adj[j] = Tensor(nodes_[j].value.shape, 0.0);
          in_grads.push_back(&adj[j]);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      node.rule(BackwardContext{adj[i], node.value, in_values, in_grads});
      adj[i] = Tensor();
    }

    Gradients grads;
    for (std::size_t id : leaf_order_) {
      const Node& node = nodes_[id];
      grads.emplace(node.name, adj[id].empty() ? Tensor(node.value.shape, 0.0)
                                               : std::move(adj[id]));
    }
    return grads;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool needs_grad;
    std::string name;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaf_index_;
  std::vector<std::size_t> leaf_order_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace kernel {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += G[m x n] * B[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

struct AxisSplit {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis,
                            std::string_view op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  AxisSplit out{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

inline void require_same(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw shape_mismatch(op, a.shape(), b.shape());
}

inline void add_into(Tensor* dst, const Tensor& src, double scale = 1.0) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) dst->data[i] += scale * src.data[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Var add(Var a, Var b) {
  detail::require_same("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return a.tape().record("add", std::move(out), {a, b},
                         [](const BackwardContext& c) {
                           detail::add_into(c.dx(0), c.grad);
                           detail::add_into(c.dx(1), c.grad);
                         });
}

inline Var sub(Var a, Var b) {
  detail::require_same("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return a.tape().record("sub", std::move(out), {a, b},
                         [](const BackwardContext& c) {
                           detail::add_into(c.dx(0), c.grad);
                           detail::add_into(c.dx(1), c.grad, -1.0);
                         });
}

inline Var mul(Var a, Var b) {
  detail::require_same("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return a.tape().record(
      "mul", std::move(out), {a, b}, [](const BackwardContext& c) {
        const std::size_t n = c.grad.size();
        if (Tensor* da = c.dx(0)) {
          for (std::size_t i = 0; i < n; ++i)
            da->data[i] += c.grad.data[i] * c.in(1).data[i];
        }
        if (Tensor* db = c.dx(1)) {
          for (std::size_t i = 0; i < n; ++i)
            db->data[i] += c.grad.data[i] * c.in(0).data[i];
        }
      });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return a.tape().record("scale", std::move(out), {a},
                         [s](const BackwardContext& c) {
                           detail::add_into(c.dx(0), c.grad, s);
                         });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// x[..., n] + b[n], b repeated over every leading index.
inline Var add_rowwise(Var x, Var b) {
  const std::size_t n = x.shape().back();
  if (b.shape() != Shape{n}) throw shape_mismatch("add_rowwise", x.shape(), b.shape());
  Tensor out = x.value();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out.data[r * n + j] += b.value().data[j];
  return x.tape().record(
      "add_rowwise", std::move(out), {x, b}, [rows, n](const BackwardContext& c) {
        detail::add_into(c.dx(0), c.grad);
        if (Tensor* db = c.dx(1)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) db->data[j] += c.grad.data[r * n + j];
        }
      });
}

// x[..., n] * g[n], g repeated over every leading index.
inline Var mul_rowwise(Var x, Var g) {
  const std::size_t n = x.shape().back();
  if (g.shape() != Shape{n}) throw shape_mismatch("mul_rowwise", x.shape(), g.shape());
  Tensor out = x.value();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out.data[r * n + j] *= g.value().data[j];
  return x.tape().record(
      "mul_rowwise", std::move(out), {x, g}, [rows, n](const BackwardContext& c) {
        const Tensor& xv = c.in(0);
        const Tensor& gv = c.in(1);
        if (Tensor* dx = c.dx(0)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j)
              dx->data[r * n + j] += c.grad.data[r * n + j] * gv.data[j];
        }
        if (Tensor* dg = c.dx(1)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j)
              dg->data[j] += c.grad.data[r * n + j] * xv.data[r * n + j];
        }
      });
}

inline Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw shape_mismatch("matmul", sa, sb);
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out({m, n});
  kernel::gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(),
                  m, k, n);
  return a.tape().record(
      "matmul", std::move(out), {a, b}, [m, k, n](const BackwardContext& c) {
        if (Tensor* da = c.dx(0)) {
          kernel::gemm_nt(c.grad.data.data(), c.in(1).data.data(),
                          da->data.data(), m, n, k);
        }
        if (Tensor* db = c.dx(1)) {
          kernel::gemm_tn(c.in(0).data.data(), c.grad.data.data(),
                          db->data.data(), m, k, n);
        }
      });
}

inline Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(s));
  const std::size_t r = s[0], cols = s[1];
  Tensor out({cols, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.data[j * r + i] = a.value().data[i * cols + j];
  return a.tape().record(
      "transpose", std::move(out), {a}, [r, cols](const BackwardContext& c) {
        if (Tensor* da = c.dx(0)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              da->data[i * cols + j] += c.grad.data[j * r + i];
        }
      });
}

inline Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) {
    throw shape_mismatch("reshape", a.shape(), shape);
  }
  Tensor out(std::move(shape), a.value().data);
  return a.tape().record("reshape", std::move(out), {a},
                         [](const BackwardContext& c) {
                           detail::add_into(c.dx(0), c.grad);
                         });
}

inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(out_shape));
  }
  std::vector<std::size_t> widths;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == out_shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) ok = false;
    }
    if (!ok) throw shape_mismatch("concat", parts[0].shape(), s);
    widths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t block = widths[k] * split.inner;
    const double* src = parts[k].value().data.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src + o * block, block,
                  out.data.data() + o * split.n * split.inner + offset);
    }
    offset += block;
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts, [widths, split](const BackwardContext& c) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          const std::size_t block = widths[k] * split.inner;
          if (Tensor* d = c.dx(k)) {
            for (std::size_t o = 0; o < split.outer; ++o) {
              const double* g = c.grad.data.data() + o * split.n * split.inner + offset;
              double* dst = d->data.data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
            }
          }
          offset += block;
        }
      });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

struct Range {
  std::size_t begin;
  std::size_t end;
};

// One half-open range per axis.
inline Var slice(Var a, std::vector<Range> ranges) {
  const Shape& s = a.shape();
  if (ranges.size() != s.size()) {
    throw ShapeError("slice: " + std::to_string(ranges.size()) +
                     " ranges for shape " + shape_str(s));
  }
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (ranges[i].begin >= ranges[i].end || ranges[i].end > s[i]) {
      throw ShapeError("slice: range [" + std::to_string(ranges[i].begin) + ", " +
                       std::to_string(ranges[i].end) + ") invalid on axis " +
                       std::to_string(i) + " of shape " + shape_str(s));
    }
    out_shape.push_back(ranges[i].end - ranges[i].begin);
  }
  // Source offset of every output element, computed once.
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size() - 1; i-- > 0;) strides[i] = strides[i + 1] * s[i + 1];
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < s.size(); ++i) off += (ranges[i].begin + idx[i]) * strides[i];
    src[e] = off;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t e = 0; e < n; ++e) out.data[e] = a.value().data[src[e]];
  return a.tape().record("slice", std::move(out), {a},
                         [src = std::move(src)](const BackwardContext& c) {
                           if (Tensor* da = c.dx(0)) {
                             for (std::size_t e = 0; e < src.size(); ++e)
                               da->data[src[e]] += c.grad.data[e];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Indexing

inline void check_index(std::string_view op, long long idx, std::size_t bound) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= bound) {
    throw std::out_of_range(std::string(op) + ": index " + std::to_string(idx) +
                            " out of range [0, " + std::to_string(bound) + ")");
  }
}

// Rows of table[N x D] selected by indices -> [k x D].
inline Var embedding_gather(Var table, std::span<const int> indices) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding_gather: table must be rank 2, got " + shape_str(s));
  if (indices.empty()) throw ShapeError("embedding_gather: no indices");
  const std::size_t d = s[1];
  Tensor out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    check_index("embedding_gather", indices[r], s[0]);
    std::copy_n(table.value().row(static_cast<std::size_t>(indices[r])), d, out.row(r));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return table.tape().record(
      "embedding_gather", std::move(out), {table},
      [idx = std::move(idx), d](const BackwardContext& c) {
        if (Tensor* dt = c.dx(0)) {
          for (std::size_t r = 0; r < idx.size(); ++r) {
            double* dst = dt->row(static_cast<std::size_t>(idx[r]));
            const double* g = c.grad.row(r);
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
          }
        }
      });
}

// Flat-index gather: out[i] = x.data[indices[i]].
inline Var take(Var x, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("take: no indices");
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    check_index("take", static_cast<long long>(indices[i]), x.value().size());
    out.data[i] = x.value().data[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return x.tape().record("take", std::move(out), {x},
                         [idx = std::move(idx)](const BackwardContext& c) {
                           if (Tensor* dx = c.dx(0)) {
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               dx->data[idx[i]] += c.grad.data[i];
                           }
                         });
}

// Row-wise gather along the last axis: x[N x K], indices[N] -> [N].
inline Var gather(Var x, std::span<const int> indices) {
  const Shape& s = x.shape();
  if (s.size() != 2 || indices.size() != s[0]) {
    throw shape_mismatch("gather", s, Shape{indices.size()});
  }
  std::vector<std::size_t> flat(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    check_index("gather", indices[i], s[1]);
    flat[i] = i * s[1] + static_cast<std::size_t>(indices[i]);
  }
  return take(x, flat);
}

// Scatter-add rows of x[k x D] into a zero [rows x D] tensor.
inline Var scatter_rows(Var x, std::span<const int> indices, std::size_t rows) {
  const Shape& s = x.shape();
  if (s.size() != 2 || indices.size() != s[0]) {
    throw shape_mismatch("scatter_rows", s, Shape{indices.size()});
  }
  const std::size_t d = s[1];
  Tensor out({rows, d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    check_index("scatter_rows", indices[r], rows);
    double* dst = out.row(static_cast<std::size_t>(indices[r]));
    for (std::size_t j = 0; j < d; ++j) dst[j] += x.value().row(r)[j];
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return x.tape().record(
      "scatter_rows", std::move(out), {x},
      [idx = std::move(idx), d](const BackwardContext& c) {
        if (Tensor* dx = c.dx(0)) {
          for (std::size_t r = 0; r < idx.size(); ++r) {
            const double* g = c.grad.row(static_cast<std::size_t>(idx[r]));
            for (std::size_t j = 0; j < d; ++j) dx->row(r)[j] += g[j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return x.tape().record(
      "gelu", std::move(out), {x}, [](const BackwardContext& c) {
        if (Tensor* dx = c.dx(0)) {
          const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
          for (std::size_t i = 0; i < c.grad.size(); ++i) {
            const double v = c.in(0).data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx->data[i] += c.grad.data[i] * (cdf + v * pdf);
          }
        }
      });
}

inline Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data) v = std::tanh(v);
  return x.tape().record(
      "tanh", std::move(out), {x}, [](const BackwardContext& c) {
        if (Tensor* dx = c.dx(0)) {
          for (std::size_t i = 0; i < c.grad.size(); ++i) {
            const double y = c.output.data[i];
            dx->data[i] += c.grad.data[i] * (1.0 - y * y);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalizations along an axis. All use max-subtraction.

inline Var logsumexp(Var x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "logsumexp");
  const Tensor& xv = x.value();
  Tensor out(detail::drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const double* base = xv.data.data() + o * sp.n * sp.inner + j;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, base[i * sp.inner]);
      double s = 0.0;
      if (std::isfinite(m)) {
        for (std::size_t i = 0; i < sp.n; ++i) s += std::exp(base[i * sp.inner] - m);
        out.data[o * sp.inner + j] = m + std::log(s);
      } else {
        out.data[o * sp.inner + j] = m;
      }
    }
  }
  return x.tape().record(
      "logsumexp", std::move(out), {x}, [sp](const BackwardContext& c) {
        Tensor* dx = c.dx(0);
        if (!dx) return;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t j = 0; j < sp.inner; ++j) {
            const double lse = c.output.data[o * sp.inner + j];
            const double g = c.grad.data[o * sp.inner + j];
            if (!std::isfinite(lse)) continue;
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t e = (o * sp.n + i) * sp.inner + j;
              dx->data[e] += g * std::exp(c.in(0).data[e] - lse);
            }
          }
        }
      });
}

inline Var log_softmax(Var x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "log_softmax");
  Tensor out = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double* base = out.data.data() + o * sp.n * sp.inner + j;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, base[i * sp.inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) s += std::exp(base[i * sp.inner] - m);
      const double lse = m + std::log(s);
      for (std::size_t i = 0; i < sp.n; ++i) base[i * sp.inner] -= lse;
    }
  }
  return x.tape().record(
      "log_softmax", std::move(out), {x}, [sp](const BackwardContext& c) {
        Tensor* dx = c.dx(0);
        if (!dx) return;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t j = 0; j < sp.inner; ++j) {
            const std::size_t b = o * sp.n * sp.inner + j;
            double gsum = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) gsum += c.grad.data[b + i * sp.inner];
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t e = b + i * sp.inner;
              dx->data[e] += c.grad.data[e] - std::exp(c.output.data[e]) * gsum;
            }
          }
        }
      });
}

namespace detail {

inline void softmax_backward(const BackwardContext& c, const AxisSplit& sp) {
  Tensor* dx = c.dx(0);
  if (!dx) return;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const std::size_t b = o * sp.n * sp.inner + j;
      double dot = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        dot += c.grad.data[b + i * sp.inner] * c.output.data[b + i * sp.inner];
      }
      for (std::size_t i = 0; i < sp.n; ++i) {
        const std::size_t e = b + i * sp.inner;
        dx->data[e] += c.output.data[e] * (c.grad.data[e] - dot);
      }
    }
  }
}

}  // namespace detail

inline Var softmax(Var x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "softmax");
  Tensor out = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double* base = out.data.data() + o * sp.n * sp.inner + j;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, base[i * sp.inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        base[i * sp.inner] = std::exp(base[i * sp.inner] - m);
        s += base[i * sp.inner];
      }
      for (std::size_t i = 0; i < sp.n; ++i) base[i * sp.inner] /= s;
    }
  }
  return x.tape().record("softmax", std::move(out), {x},
                         [sp](const BackwardContext& c) { detail::softmax_backward(c, sp); });
}

// Softmax over the last axis of x[R x C] restricted to entries where
// allowed[r * C + c] != 0. Disallowed entries get probability exactly 0.
// Every row needs at least one allowed entry.
inline Var masked_softmax(Var x, std::span<const std::uint8_t> allowed) {
  const Shape& s = x.shape();
  if (s.size() != 2 || allowed.size() != s[0] * s[1]) {
    throw shape_mismatch("masked_softmax", s, Shape{allowed.size()});
  }
  const std::size_t rows = s[0], cols = s[1];
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().row(r);
    double* yr = out.row(r);
    const std::uint8_t* ar = allowed.data() + r * cols;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) if (ar[j]) m = std::max(m, xr[j]);
    if (!std::isfinite(m)) {
      throw std::invalid_argument("masked_softmax: row " + std::to_string(r) +
                                  " has no allowed entries");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = ar[j] ? std::exp(xr[j] - m) : 0.0;
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  const detail::AxisSplit sp{rows, cols, 1};
  return x.tape().record("masked_softmax", std::move(out), {x},
                         [sp](const BackwardContext& c) { detail::softmax_backward(c, sp); });
}

// (x - mean) / sqrt(var + eps) along an axis; no affine part.
inline Var layer_norm(Var x, std::size_t axis, double eps = 1e-5) {
  const auto sp = detail::split_axis(x.shape(), axis, "layer_norm");
  Tensor out = x.value();
  std::vector<double> inv_std(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double* base = out.data.data() + o * sp.n * sp.inner + j;
      double mean = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) mean += base[i * sp.inner];
      mean /= static_cast<double>(sp.n);
      double var = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const double d = base[i * sp.inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(sp.n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * sp.inner + j] = is;
      for (std::size_t i = 0; i < sp.n; ++i) base[i * sp.inner] = (base[i * sp.inner] - mean) * is;
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x},
      [sp, inv_std = std::move(inv_std)](const BackwardContext& c) {
        Tensor* dx = c.dx(0);
        if (!dx) return;
        const double n = static_cast<double>(sp.n);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t j = 0; j < sp.inner; ++j) {
            const std::size_t b = o * sp.n * sp.inner + j;
            double gmean = 0.0, gy = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t e = b + i * sp.inner;
              gmean += c.grad.data[e];
              gy += c.grad.data[e] * c.output.data[e];
            }
            gmean /= n;
            gy /= n;
            const double is = inv_std[o * sp.inner + j];
            for (std::size_t i = 0; i < sp.n; ++i) {
              const std::size_t e = b + i * sp.inner;
              dx->data[e] += is * (c.grad.data[e] - gmean - c.output.data[e] * gy);
            }
          }
        }
      });
}

inline Var reduce_sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.tape().record("reduce_sum", Tensor::scalar(s), {x},
                         [](const BackwardContext& c) {
                           if (Tensor* dx = c.dx(0)) {
                             const double g = c.grad.data[0];
                             for (double& v : dx->data) v += g;
                           }
                         });
}

}  // namespace sprefix
