/* Copyright 2026 The msdem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "msdem/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "msdem/error.hpp"

namespace msdem {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Graph& graph_of(Var a) {
  if (!a) throw StateError("operation on an unbound Var");
  return *a.graph();
}

void same_graph(Var a, Var b) {
  if (a.graph() != b.graph()) throw StateError("operands recorded on different graphs");
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + t.shape_string());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const Tensor& Var::value() const { return graph_of(*this).value(id_); }

bool Var::requires_grad() const { return graph_of(*this).requires_grad(id_); }

Var Graph::constant(Tensor value) {
  value.check_finite("constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  if (p.frozen || !grad_enabled_) return constant(p.value);
  p.value.check_finite(p.name);
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.graph() != this) throw StateError("operand recorded on a different graph");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && needs;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw StateError("backward on a Var from another graph");
  const std::size_t root = loss.id();
  if (nodes_[root].value.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         nodes_[root].value.shape_string());
  }
  if (!nodes_[root].requires_grad) return;
  grad_buffer(root).fill(1.0);
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (!p.grad) p.grad = Tensor(p.value.shape());
      accumulate(*p.grad, n.grad);
    }
  }
}

Var matmul(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  Tensor out = msdem::matmul(av, bv);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    auto dc = as_matrix(g.grad(self));
    if (g.requires_grad(ia)) {
      auto da = as_matrix(g.grad_buffer(ia));
      da.noalias() += dc * as_matrix(g.value(ib)).transpose();
    }
    if (g.requires_grad(ib)) {
      auto db = as_matrix(g.grad_buffer(ib));
      db.noalias() += as_matrix(g.value(ia)).transpose() * dc;
    }
  });
}

Var add(Var a, Var b) {
  same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  out.check_finite("add");
  const std::size_t ia = a.id(), ib = b.id();
  return graph_of(a).record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.requires_grad(ia)) accumulate(g.grad_buffer(ia), d);
    if (g.requires_grad(ib)) accumulate(g.grad_buffer(ib), d);
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  out.check_finite("sub");
  const std::size_t ia = a.id(), ib = b.id();
  return graph_of(a).record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.requires_grad(ia)) accumulate(g.grad_buffer(ia), d);
    if (g.requires_grad(ib)) {
      Tensor& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] -= d[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  out.check_finite("mul");
  const std::size_t ia = a.id(), ib = b.id();
  return graph_of(a).record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor& da = g.grad_buffer(ia);
      const Tensor& bv = g.value(ib);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bv[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& db = g.grad_buffer(ib);
      const Tensor& av = g.value(ia);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  out.check_finite("scale");
  const std::size_t ia = a.id();
  return graph_of(a).record(std::move(out), {a}, [ia, s](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    Tensor& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += s * d[i];
  });
}

Var add_bias(Var x, Var bias) {
  same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_bias");
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " does not match " +
                         xv.shape_string());
  }
  Tensor out = xv;
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  out.check_finite("add_bias");
  const std::size_t ix = x.id(), ib = bias.id();
  return graph_of(x).record(std::move(out), {x, bias},
                            [ix, ib, r, c](Graph& g, std::size_t self) {
                              const Tensor& d = g.grad(self);
                              if (g.requires_grad(ix)) accumulate(g.grad_buffer(ix), d);
                              if (g.requires_grad(ib)) {
                                Tensor& db = g.grad_buffer(ib);
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j) db[j] += d[i * c + j];
                              }
                            });
}

Var add_const(Var x, const Tensor& c) {
  require_same_shape(x.value(), c, "add_const");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  out.check_finite("add_const");
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    accumulate(g.grad_buffer(ix), g.grad(self));
  });
}

Var clamp_min(Var x, double lo) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, lo);
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x}, [ix, lo](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& xv = g.value(ix);
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > lo) dx[i] += d[i];
  });
}

Var log(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
    v = std::log(v);
  }
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& xv = g.value(ix);
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] / xv[i];
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  out.check_finite("exp");
  const std::size_t ix = x.id();
  Graph& g0 = graph_of(x);
  const std::size_t out_id = g0.size();
  return g0.record(std::move(out), {x}, [ix, out_id](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& y = g.value(out_id);
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * y[i];
  });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  out.check_finite("gelu");
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    const Tensor& d = g.grad(self);
    const Tensor& xv = g.value(ix);
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double z = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * z * z);
      dx[i] += d[i] * (cdf + z * pdf);
    }
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t axis = xv.rank() - 1;
  Tensor out = softmax(xv, axis);
  const std::size_t ix = x.id();
  Graph& g0 = graph_of(x);
  const std::size_t out_id = g0.size();
  return g0.record(std::move(out), {x}, [ix, out_id](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    const Tensor& y = g.value(out_id);
    const std::size_t n = y.shape().back();
    const std::size_t rows = y.size() / n;
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += d[r * n + k] * y[r * n + k];
      for (std::size_t k = 0; k < n; ++k) dx[r * n + k] += y[r * n + k] * (d[r * n + k] - dot);
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return graph_of(x).record(Tensor::scalar(s), {x}, [ix](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    for (auto& v : g.grad_buffer(ix).data()) v += d;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    Tensor& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
  });
}

Var slice_cols(Var x, std::size_t offset, std::size_t len) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t r = xv.rows(), c = xv.cols();
  if (len == 0 || offset + len > c) {
    throw DimensionError("slice_cols [" + std::to_string(offset) + ", " +
                         std::to_string(offset + len) + ") out of range for " + xv.shape_string());
  }
  Tensor out({r, len});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.data().data() + i * c + offset, len, out.data().data() + i * len);
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x},
                            [ix, r, c, offset, len](Graph& g, std::size_t self) {
                              const Tensor& d = g.grad(self);
                              Tensor& dx = g.grad_buffer(ix);
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < len; ++j)
                                  dx[i * c + offset + j] += d[i * len + j];
                            });
}

Var interleave_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows needs at least one part");
  Graph& g0 = graph_of(parts[0]);
  const Tensor& first = parts[0].value();
  require_matrix(first, "interleave_rows");
  const std::size_t b = first.rows(), d = first.cols(), p = parts.size();
  std::vector<std::size_t> ids;
  for (const Var& v : parts) {
    same_graph(parts[0], v);
    require_same_shape(first, v.value(), "interleave_rows");
    ids.push_back(v.id());
  }
  Tensor out({b * p, d});
  for (std::size_t j = 0; j < p; ++j) {
    const Tensor& src = parts[j].value();
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(src.data().data() + i * d, d, out.data().data() + (i * p + j) * d);
  }
  return g0.record(std::move(out), parts, [ids, b, d, p](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    for (std::size_t j = 0; j < p; ++j) {
      if (!g.requires_grad(ids[j])) continue;
      Tensor& dx = g.grad_buffer(ids[j]);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < d; ++k) dx[i * d + k] += dy[(i * p + j) * d + k];
    }
  });
}

Var scale_rows(Var x, Var s) {
  same_graph(x, s);
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  require_matrix(xv, "scale_rows");
  const std::size_t r = xv.rows(), c = xv.cols();
  if (sv.size() != r) {
    throw DimensionError("scale_rows: " + sv.shape_string() + " scales for " + xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= sv[i];
  out.check_finite("scale_rows");
  const std::size_t ix = x.id(), is = s.id();
  return graph_of(x).record(std::move(out), {x, s}, [ix, is, r, c](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    if (g.requires_grad(ix)) {
      const Tensor& sv = g.value(is);
      Tensor& dx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += d[i * c + j] * sv[i];
    }
    if (g.requires_grad(is)) {
      const Tensor& xv = g.value(ix);
      Tensor& ds = g.grad_buffer(is);
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += d[i * c + j] * xv[i * c + j];
        ds[i] += acc;
      }
    }
  });
}

static Var group_reduce(Var x, std::size_t group, double weight, const char* op) {
  const Tensor& xv = x.value();
  require_matrix(xv, op);
  const std::size_t r = xv.rows(), c = xv.cols();
  if (group == 0 || r % group != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(r) +
                         " rows not divisible into groups of " + std::to_string(group));
  }
  const std::size_t b = r / group;
  Tensor out({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < group; ++k)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += xv[(i * group + k) * c + j];
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= weight;
  }
  out.check_finite(op);
  const std::size_t ix = x.id();
  return graph_of(x).record(std::move(out), {x},
                            [ix, b, c, group, weight](Graph& g, std::size_t self) {
                              const Tensor& d = g.grad(self);
                              Tensor& dx = g.grad_buffer(ix);
                              for (std::size_t i = 0; i < b; ++i)
                                for (std::size_t k = 0; k < group; ++k)
                                  for (std::size_t j = 0; j < c; ++j)
                                    dx[(i * group + k) * c + j] += weight * d[i * c + j];
                            });
}

Var group_mean(Var x, std::size_t group) {
  return group_reduce(x, group, 1.0 / static_cast<double>(group == 0 ? 1 : group), "group_mean");
}

Var group_sum(Var x, std::size_t group) { return group_reduce(x, group, 1.0, "group_sum"); }

Var tile_rows(Var v, std::size_t m) {
  const Tensor& vv = v.value();
  const std::size_t n = vv.size();
  if (m == 0) throw DimensionError("tile_rows needs at least one row");
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(vv.data().data(), n, out.data().data() + i * n);
  const std::size_t iv = v.id();
  return graph_of(v).record(std::move(out), {v}, [iv, m, n](Graph& g, std::size_t self) {
    const Tensor& d = g.grad(self);
    Tensor& dv = g.grad_buffer(iv);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dv[j] += d[i * n + j];
  });
}

Var cross_entropy_mean(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy_mean");
  const std::size_t b = lv.rows(), k = lv.cols();
  if (targets.size() != b) {
    throw DimensionError("cross_entropy_mean: " + std::to_string(targets.size()) +
                         " targets for logits " + lv.shape_string());
  }
  if (k < 2) throw ValidationError("cross_entropy needs at least 2 classes");
  for (std::size_t t : targets)
    if (t >= k) throw ValidationError("target class " + std::to_string(t) + " >= " +
                                      std::to_string(k));
  Tensor logp = log_softmax_last(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) loss -= logp[i * k + targets[i]];
  loss /= static_cast<double>(b);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  const std::size_t il = logits.id();
  return graph_of(logits).record(
      Tensor::scalar(loss), {logits},
      [il, tg = std::move(tg), logp = std::move(logp), b, k](Graph& g, std::size_t self) {
        const double d = g.grad(self)[0] / static_cast<double>(b);
        Tensor& dl = g.grad_buffer(il);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(logp[i * k + j]);
            dl[i * k + j] += d * (p - (j == tg[i] ? 1.0 : 0.0));
          }
        }
      });
}

Var cross_entropy(Var logits, const Tensor& one_hot) {
  const Tensor& lv = logits.value();
  if (lv.size() != one_hot.size()) {
    throw DimensionError("cross_entropy: logits " + lv.shape_string() + " vs label " +
                         one_hot.shape_string());
  }
  const std::size_t c = one_hot_class(one_hot);
  Var row = reshape(logits, {1, lv.size()});
  const std::size_t target[] = {c};
  return cross_entropy_mean(row, target);
}

Var attention(Var q, Var k, Var v, std::size_t n_tokens, std::size_t heads, double scale,
              Tensor* weights) {
  same_graph(q, k);
  same_graph(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "attention");
  require_same_shape(qv, kv, "attention");
  require_same_shape(qv, vv, "attention");
  const std::size_t rows = qv.rows(), width = qv.cols();
  if (n_tokens == 0 || rows % n_tokens != 0) {
    throw DimensionError("attention: " + std::to_string(rows) + " rows is not a multiple of " +
                         std::to_string(n_tokens) + " tokens");
  }
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t batch = rows / n_tokens, dk = width / heads, n = n_tokens;

  // probs[((b * heads + h) * n + i) * n + j]
  auto probs = std::make_shared<Tensor>(Shape{batch * heads * n, n});
  Tensor out({rows, width});
  std::vector<double> score(n);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * n;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dk;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = qv.data().data() + (r0 + i) * width + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = kv.data().data() + (r0 + j) * width + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= scale;
          if (std::isnan(s)) throw NumericError("NaN in attention scores");
          score[j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          score[j] = std::exp(score[j] - mx);
          z += score[j];
        }
        double* p = probs->data().data() + ((b * heads + h) * n + i) * n;
        double* oi = out.data().data() + (r0 + i) * width + c0;
        for (std::size_t j = 0; j < n; ++j) {
          p[j] = score[j] / z;
          const double* vj = vv.data().data() + (r0 + j) * width + c0;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  out.check_finite("attention");
  if (weights != nullptr) *weights = *probs;

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return graph_of(q).record(
      std::move(out), {q, k, v},
      [iq, ik, iv, probs, batch, heads, n, dk, width, scale](Graph& g, std::size_t self) {
        const Tensor& dout = g.grad(self);
        const Tensor& qv = g.value(iq);
        const Tensor& kv = g.value(ik);
        const Tensor& vv = g.value(iv);
        const bool gq = g.requires_grad(iq), gk = g.requires_grad(ik), gv = g.requires_grad(iv);
        Tensor* dq = gq ? &g.grad_buffer(iq) : nullptr;
        Tensor* dk_ = gk ? &g.grad_buffer(ik) : nullptr;
        Tensor* dv = gv ? &g.grad_buffer(iv) : nullptr;
        std::vector<double> dp(n), ds(n);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t r0 = b * n;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dk;
            for (std::size_t i = 0; i < n; ++i) {
              const double* p = probs->data().data() + ((b * heads + h) * n + i) * n;
              const double* doi = dout.data().data() + (r0 + i) * width + c0;
              double dot = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const double* vj = vv.data().data() + (r0 + j) * width + c0;
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += doi[c] * vj[c];
                dp[j] = acc;
                dot += acc * p[j];
                if (gv) {
                  double* dvj = dv->data().data() + (r0 + j) * width + c0;
                  for (std::size_t c = 0; c < dk; ++c) dvj[c] += p[j] * doi[c];
                }
              }
              for (std::size_t j = 0; j < n; ++j) ds[j] = p[j] * (dp[j] - dot) * scale;
              const double* qi = qv.data().data() + (r0 + i) * width + c0;
              for (std::size_t j = 0; j < n; ++j) {
                const double* kj = kv.data().data() + (r0 + j) * width + c0;
                if (gq) {
                  double* dqi = dq->data().data() + (r0 + i) * width + c0;
                  for (std::size_t c = 0; c < dk; ++c) dqi[c] += ds[j] * kj[c];
                }
                if (gk) {
                  double* dkj = dk_->data().data() + (r0 + j) * width + c0;
                  for (std::size_t c = 0; c < dk; ++c) dkj[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace msdem
