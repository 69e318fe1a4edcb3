#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "parakit/tensor.hpp"

namespace parakit {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// c[n x m] (+)= a[n x k] . b[k x m]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int n, int k, int m, bool accumulate) {
  for (int i = 0; i < n; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * m;
    if (!accumulate) std::fill(crow, crow + m, T(0));
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + static_cast<std::size_t>(l) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n x m] (+)= a[n x k] . b[m x k]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int n, int k, int m, bool accumulate) {
  for (int i = 0; i < n; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

// c[n x m] (+)= a[k x n]^T . b[k x m]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int n, int k, int m, bool accumulate) {
  if (!accumulate)
    std::fill(c, c + static_cast<std::size_t>(n) * m, T(0));
  for (int l = 0; l < k; ++l) {
    const T* arow = a + static_cast<std::size_t>(l) * n;
    const T* brow = b + static_cast<std::size_t>(l) * m;
    for (int i = 0; i < n; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void check_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* who) {
  if (a.shape() != b.shape())
    fail_contract(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out(pa->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] + pb->data[i];
  return detail::make_op<T>(
      pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
      });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out(pa->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] - pb->data[i];
  return detail::make_op<T>(
      pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
      });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out(pa->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] * pb->data[i];
  return detail::make_op<T>(
      pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] += self.grad[i] * pa->data[i];
        }
      });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double c) {
  auto pa = a.node();
  const T cv = static_cast<T>(c);
  std::vector<T> out(pa->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] * cv;
  return detail::make_op<T>(pa->shape, std::move(out), {pa},
                            [pa, cv](detail::TensorNode<T>& self) {
                              if (!pa->wants_grad()) return;
                              pa->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa->grad[i] += self.grad[i] * cv;
                            });
}

// y[i][j] = x[i][j] + v[j]; v broadcast over rows
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& v) {
  const int n = x.rows(), m = x.cols();
  if (v.ndim() != 1 || v.shape()[0] != m)
    fail_contract("add_bias: bias " + detail::shape_str(v.shape()) + " does not match " +
                  detail::shape_str(x.shape()));
  auto px = x.node();
  auto pv = v.node();
  std::vector<T> out(px->data.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(i) * m + j] =
          px->data[static_cast<std::size_t>(i) * m + j] + pv->data[j];
  return detail::make_op<T>(
      px->shape, std::move(out), {px, pv}, [px, pv, n, m](detail::TensorNode<T>& self) {
        if (px->wants_grad()) {
          px->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        }
        if (pv->wants_grad()) {
          pv->ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
              pv->grad[j] += self.grad[static_cast<std::size_t>(i) * m + j];
        }
      });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const int n = a.rows(), k = a.cols();
  if (b.rows() != k)
    fail_contract("matmul: inner dimensions disagree, " + detail::shape_str(a.shape()) +
                  " vs " + detail::shape_str(b.shape()));
  const int m = b.cols();
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  detail::mm_nn(pa->data.data(), pb->data.data(), out.data(), n, k, m, false);
  return detail::make_op<T>(
      {n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          detail::mm_nt(self.grad.data(), pb->data.data(), pa->grad.data(), n, m, k, true);
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          detail::mm_tn(pa->data.data(), self.grad.data(), pb->grad.data(), k, n, m, true);
        }
      });
}

// a[n x k] . b[m x k]^T
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const int n = a.rows(), k = a.cols();
  if (b.cols() != k)
    fail_contract("matmul_nt: inner dimensions disagree, " + detail::shape_str(a.shape()) +
                  " vs " + detail::shape_str(b.shape()) + " transposed");
  const int m = b.rows();
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  detail::mm_nt(pa->data.data(), pb->data.data(), out.data(), n, k, m, false);
  return detail::make_op<T>(
      {n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          detail::mm_nn(self.grad.data(), pb->data.data(), pa->grad.data(), n, m, k, true);
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          detail::mm_tn(self.grad.data(), pa->data.data(), pb->grad.data(), m, n, k, true);
        }
      });
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  const int n = x.rows(), m = x.cols();
  auto px = x.node();
  std::vector<T> out(px->data.size());
  for (int i = 0; i < n; ++i) {
    const T* r = px->data.data() + static_cast<std::size_t>(i) * m;
    T* o = out.data() + static_cast<std::size_t>(i) * m;
    T mx = r[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < m; ++j) {
      o[j] = static_cast<T>(std::exp(static_cast<double>(r[j] - mx)));
      sum += static_cast<double>(o[j]);
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (int j = 0; j < m; ++j) o[j] *= inv;
  }
  return detail::make_op<T>(
      {n, m}, std::move(out), {px}, [px, n, m](detail::TensorNode<T>& self) {
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const T* y = self.data.data() + static_cast<std::size_t>(i) * m;
          const T* g = self.grad.data() + static_cast<std::size_t>(i) * m;
          T* gx = px->grad.data() + static_cast<std::size_t>(i) * m;
          double dot = 0.0;
          for (int j = 0; j < m; ++j) dot += static_cast<double>(g[j]) * y[j];
          const T dt = static_cast<T>(dot);
          for (int j = 0; j < m; ++j) gx[j] += y[j] * (g[j] - dt);
        }
      });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double eps = 1e-5) {
  const int n = x.rows(), h = x.cols();
  if (gain.ndim() != 1 || gain.shape()[0] != h || bias.ndim() != 1 || bias.shape()[0] != h)
    fail_contract("layer_norm: gain/bias must be [" + std::to_string(h) + "]");
  auto px = x.node();
  auto pg = gain.node();
  auto pb = bias.node();
  std::vector<T> out(px->data.size());
  std::vector<T> xhat(px->data.size());
  std::vector<T> inv_std(n);
  for (int i = 0; i < n; ++i) {
    const T* r = px->data.data() + static_cast<std::size_t>(i) * h;
    double mu = 0.0;
    for (int j = 0; j < h; ++j) mu += static_cast<double>(r[j]);
    mu /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      const double d = static_cast<double>(r[j]) - mu;
      var += d * d;
    }
    var /= h;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = static_cast<T>(inv);
    for (int j = 0; j < h; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * h + j;
      xhat[idx] = static_cast<T>((static_cast<double>(r[j]) - mu) * inv);
      out[idx] = pg->data[j] * xhat[idx] + pb->data[j];
    }
  }
  return detail::make_op<T>(
      {n, h}, std::move(out), {px, pg, pb},
      [px, pg, pb, n, h, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::TensorNode<T>& self) {
        for (int i = 0; i < n; ++i) {
          const T* g = self.grad.data() + static_cast<std::size_t>(i) * h;
          const T* xh = xhat.data() + static_cast<std::size_t>(i) * h;
          if (pg->wants_grad()) {
            pg->ensure_grad();
            for (int j = 0; j < h; ++j) pg->grad[j] += g[j] * xh[j];
          }
          if (pb->wants_grad()) {
            pb->ensure_grad();
            for (int j = 0; j < h; ++j) pb->grad[j] += g[j];
          }
          if (px->wants_grad()) {
            px->ensure_grad();
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < h; ++j) {
              const double dxh = static_cast<double>(g[j]) * pg->data[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xh[j];
            }
            const double m1 = sum_dxhat / h;
            const double m2 = sum_dxhat_xhat / h;
            T* gx = px->grad.data() + static_cast<std::size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
              const double dxh = static_cast<double>(g[j]) * pg->data[j];
              gx[j] += static_cast<T>((dxh - m1 - xh[j] * m2) * inv_std[i]);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  auto px = x.node();
  std::vector<T> out(px->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(px->data[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
  }
  return detail::make_op<T>(
      px->shape, std::move(out), {px}, [px](detail::TensorNode<T>& self) {
        if (!px->wants_grad()) return;
        px->ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double v = static_cast<double>(px->data[i]);
          const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          px->grad[i] += self.grad[i] * static_cast<T>(cdf + v * pdf);
        }
      });
}

// Gathers rows of table by id: result[i] = table[ids[i]].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, const std::vector<int>& ids) {
  const int v = table.rows(), h = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      fail_contract("embedding: id " + std::to_string(id) + " out of range [0," +
                    std::to_string(v) + ")");
  auto pt = table.node();
  const int n = static_cast<int>(ids.size());
  std::vector<T> out(static_cast<std::size_t>(n) * h);
  for (int i = 0; i < n; ++i)
    std::copy_n(pt->data.data() + static_cast<std::size_t>(ids[i]) * h, h,
                out.data() + static_cast<std::size_t>(i) * h);
  return detail::make_op<T>(
      {n, h}, std::move(out), {pt}, [pt, ids, n, h](detail::TensorNode<T>& self) {
        if (!pt->wants_grad()) return;
        pt->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const T* g = self.grad.data() + static_cast<std::size_t>(i) * h;
          T* dst = pt->grad.data() + static_cast<std::size_t>(ids[i]) * h;
          for (int j = 0; j < h; ++j) dst[j] += g[j];
        }
      });
}

template <typename T>
BasicTensor<T> row(const BasicTensor<T>& x, int i) {
  const int n = x.rows(), m = x.cols();
  if (i < 0 || i >= n)
    fail_contract("row: index " + std::to_string(i) + " out of range [0," + std::to_string(n) +
                  ")");
  auto px = x.node();
  std::vector<T> out(px->data.begin() + static_cast<std::size_t>(i) * m,
                     px->data.begin() + static_cast<std::size_t>(i + 1) * m);
  return detail::make_op<T>({1, m}, std::move(out), {px},
                            [px, i, m](detail::TensorNode<T>& self) {
                              if (!px->wants_grad()) return;
                              px->ensure_grad();
                              T* dst = px->grad.data() + static_cast<std::size_t>(i) * m;
                              for (int j = 0; j < m; ++j) dst[j] += self.grad[j];
                            });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, int start, int count) {
  const int n = x.rows(), m = x.cols();
  if (start < 0 || count < 0 || start + count > m)
    fail_contract("slice_cols: range [" + std::to_string(start) + "," +
                  std::to_string(start + count) + ") outside width " + std::to_string(m));
  auto px = x.node();
  std::vector<T> out(static_cast<std::size_t>(n) * count);
  for (int i = 0; i < n; ++i)
    std::copy_n(px->data.data() + static_cast<std::size_t>(i) * m + start, count,
                out.data() + static_cast<std::size_t>(i) * count);
  return detail::make_op<T>(
      {n, count}, std::move(out), {px}, [px, n, m, start, count](detail::TensorNode<T>& self) {
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const T* g = self.grad.data() + static_cast<std::size_t>(i) * count;
          T* dst = px->grad.data() + static_cast<std::size_t>(i) * m + start;
          for (int j = 0; j < count; ++j) dst[j] += g[j];
        }
      });
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) fail_contract("concat_cols: no inputs");
  const int n = parts[0].rows();
  int total = 0;
  std::vector<detail::NodePtr<T>> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p.rows() != n) fail_contract("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
    nodes.push_back(p.node());
  }
  std::vector<T> out(static_cast<std::size_t>(n) * total);
  int off = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const int w = widths[k];
    for (int i = 0; i < n; ++i)
      std::copy_n(nodes[k]->data.data() + static_cast<std::size_t>(i) * w, w,
                  out.data() + static_cast<std::size_t>(i) * total + off);
    off += w;
  }
  return detail::make_op<T>(
      {n, total}, std::move(out), nodes,
      [nodes, widths, n, total](detail::TensorNode<T>& self) {
        int off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const int w = widths[k];
          if (nodes[k]->wants_grad()) {
            nodes[k]->ensure_grad();
            for (int i = 0; i < n; ++i) {
              const T* g = self.grad.data() + static_cast<std::size_t>(i) * total + off;
              T* dst = nodes[k]->grad.data() + static_cast<std::size_t>(i) * w;
              for (int j = 0; j < w; ++j) dst[j] += g[j];
            }
          }
          off += w;
        }
      });
}

template <typename T>
BasicTensor<T> concat_rows(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const int h = a.cols();
  if (b.cols() != h)
    fail_contract("concat_rows: widths differ, " + detail::shape_str(a.shape()) + " vs " +
                  detail::shape_str(b.shape()));
  const int n = a.rows(), m = b.rows();
  auto pa = a.node();
  auto pb = b.node();
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n + m) * h);
  out.insert(out.end(), pa->data.begin(), pa->data.end());
  out.insert(out.end(), pb->data.begin(), pb->data.end());
  return detail::make_op<T>(
      {n + m, h}, std::move(out), {pa, pb}, [pa, pb, n, m, h](detail::TensorNode<T>& self) {
        if (pa->wants_grad()) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < static_cast<std::size_t>(n) * h; ++i)
            pa->grad[i] += self.grad[i];
        }
        if (pb->wants_grad()) {
          pb->ensure_grad();
          const std::size_t base = static_cast<std::size_t>(n) * h;
          for (std::size_t i = 0; i < static_cast<std::size_t>(m) * h; ++i)
            pb->grad[i] += self.grad[base + i];
        }
      });
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  auto px = x.node();
  double s = 0.0;
  for (T v : px->data) s += static_cast<double>(v);
  return detail::make_op<T>({1}, {static_cast<T>(s)}, {px},
                            [px](detail::TensorNode<T>& self) {
                              if (!px->wants_grad()) return;
                              px->ensure_grad();
                              const T g = self.grad[0];
                              for (auto& v : px->grad) v += g;
                            });
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  auto px = x.node();
  if (px->data.empty()) fail_contract("mean_all: empty tensor");
  double s = 0.0;
  for (T v : px->data) s += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(px->data.size());
  return detail::make_op<T>({1}, {static_cast<T>(s * inv)}, {px},
                            [px, inv](detail::TensorNode<T>& self) {
                              if (!px->wants_grad()) return;
                              px->ensure_grad();
                              const T g = static_cast<T>(self.grad[0] * inv);
                              for (auto& v : px->grad) v += g;
                            });
}

inline constexpr int kIgnoreId = -1;

inline int count_non_ignored(const std::vector<int>& targets, int ignore_id = kIgnoreId) {
  int c = 0;
  for (int t : targets)
    if (t != ignore_id) ++c;
  return c;
}

// Mean token-level cross-entropy from raw logits; rows whose target equals
// ignore_id contribute nothing. All rows ignored yields a constant zero.
template <typename T>
BasicTensor<T> cross_entropy_logits(const BasicTensor<T>& logits, const std::vector<int>& targets,
                                    int ignore_id = kIgnoreId) {
  const int n = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != n)
    fail_contract("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " +
                  std::to_string(n) + " rows");
  for (int t : targets)
    if (t != ignore_id && (t < 0 || t >= v))
      fail_contract("cross_entropy_logits: target " + std::to_string(t) + " outside [0," +
                    std::to_string(v) + ")");
  auto pl = logits.node();
  int count = 0;
  for (int t : targets)
    if (t != ignore_id) ++count;
  if (count == 0) return BasicTensor<T>::from_data({1}, {T(0)});

  std::vector<T> probs(pl->data.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* r = pl->data.data() + static_cast<std::size_t>(i) * v;
    T* p = probs.data() + static_cast<std::size_t>(i) * v;
    T mx = r[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(r[j] - mx));
      p[j] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < v; ++j) p[j] = static_cast<T>(p[j] * inv);
    if (targets[i] != ignore_id)
      loss += std::log(sum) + static_cast<double>(mx) - static_cast<double>(r[targets[i]]);
  }
  loss /= count;
  const double invc = 1.0 / count;
  return detail::make_op<T>(
      {1}, {static_cast<T>(loss)}, {pl},
      [pl, targets, ignore_id, n, v, invc,
       probs = std::move(probs)](detail::TensorNode<T>& self) {
        if (!pl->wants_grad()) return;
        pl->ensure_grad();
        const double g = static_cast<double>(self.grad[0]) * invc;
        for (int i = 0; i < n; ++i) {
          if (targets[i] == ignore_id) continue;
          const T* p = probs.data() + static_cast<std::size_t>(i) * v;
          T* gx = pl->grad.data() + static_cast<std::size_t>(i) * v;
          for (int j = 0; j < v; ++j) gx[j] += static_cast<T>(g * p[j]);
          gx[targets[i]] -= static_cast<T>(g);
        }
      });
}

// Numerically stable binary cross-entropy on a single logit.
template <typename T>
BasicTensor<T> binary_cross_entropy_logit(const BasicTensor<T>& logit, double label) {
  if (logit.size() != 1)
    fail_contract("binary_cross_entropy_logit: logit must be scalar, got " +
                  detail::shape_str(logit.shape()));
  if (label != 0.0 && label != 1.0)
    fail_contract("binary_cross_entropy_logit: label must be 0 or 1");
  auto px = logit.node();
  const double x = static_cast<double>(px->data[0]);
  const double loss = std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::fabs(x)));
  return detail::make_op<T>(
      {1}, {static_cast<T>(loss)}, {px}, [px, label](detail::TensorNode<T>& self) {
        if (!px->wants_grad()) return;
        px->ensure_grad();
        const double x = static_cast<double>(px->data[0]);
        const double sig = 1.0 / (1.0 + std::exp(-x));
        px->grad[0] += static_cast<T>(static_cast<double>(self.grad[0]) * (sig - label));
      });
}

// Inverted-dropout; identity when not training or p == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, SeededRng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) fail_contract("dropout: p must lie in [0,1)");
  if (!training || p == 0.0) return x;
  auto px = x.node();
  std::vector<T> mask(px->data.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& mv : mask) mv = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(px->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px->data[i] * mask[i];
  return detail::make_op<T>(px->shape, std::move(out), {px},
                            [px, mask = std::move(mask)](detail::TensorNode<T>& self) {
                              if (!px->wants_grad()) return;
                              px->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                px->grad[i] += self.grad[i] * mask[i];
                            });
}

// x . W + b as one call; the building block for every projection.
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace parakit
