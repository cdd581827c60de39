#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/core/tape.hpp"
#include "newscap/core/tensor.hpp"

// Differentiable primitives over Var. Every op computes its value eagerly and
// records a closure that pushes the output gradient to its parents. Matrices
// are 2-D row-major tensors; "row vectors" are [1 x n].

namespace newscap::ops {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> as_matrix(const Tensor<Scalar>& t) {
  return Eigen::Map<const RowMatrix<Scalar>>(t.data().data(),
                                              static_cast<Eigen::Index>(t.rows()),
                                              static_cast<Eigen::Index>(t.cols()));
}

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> as_matrix(Tensor<Scalar>& t) {
  return Eigen::Map<RowMatrix<Scalar>>(t.data().data(),
                                       static_cast<Eigen::Index>(t.rows()),
                                       static_cast<Eigen::Index>(t.cols()));
}

namespace detail {

inline void check(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename Scalar>
std::string dims(const Var<Scalar>& v) {
  return shape_string(v.shape());
}

}  // namespace detail

enum class Activation { sigmoid, tanh, relu };

// ---------------------------------------------------------------- linear

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::check(av.cols() == bv.rows(), "matmul",
                "inner extents differ: " + detail::dims(a) + " x " + detail::dims(b));
  Tensor<Scalar> out({av.rows(), bv.cols()});
  if (!out.empty() && av.cols() > 0) as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape->record(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto gm = as_matrix(g);
                          if (t.requires_grad(a.id))
                            as_matrix(t.grad(a.id)).noalias() +=
                                gm * as_matrix(t.value(b.id)).transpose();
                          if (t.requires_grad(b.id))
                            as_matrix(t.grad(b.id)).noalias() +=
                                as_matrix(t.value(a.id)).transpose() * gm;
                        });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  const auto& av = a.value();
  Tensor<Scalar> out({av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  return a.tape->record(std::move(out), {a},
                        [a](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          as_matrix(t.grad(a.id)) += as_matrix(g).transpose();
                        });
}

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.shape() == b.shape(), "add", detail::dims(a) + " vs " + detail::dims(b));
  Tensor<Scalar> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape->record(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          for (auto id : {a.id, b.id}) {
                            if (!t.requires_grad(id)) continue;
                            auto d = t.grad(id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          }
                        });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.shape() == b.shape(), "sub", detail::dims(a) + " vs " + detail::dims(b));
  Tensor<Scalar> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          if (t.requires_grad(a.id)) {
                            auto d = t.grad(a.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          }
                          if (t.requires_grad(b.id)) {
                            auto d = t.grad(b.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
                          }
                        });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.shape() == b.shape(), "mul", detail::dims(a) + " vs " + detail::dims(b));
  Tensor<Scalar> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto av = t.value(a.id).data();
                          const auto bv = t.value(b.id).data();
                          if (t.requires_grad(a.id)) {
                            auto d = t.grad(a.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
                          }
                          if (t.requires_grad(b.id)) {
                            auto d = t.grad(b.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
                          }
                        });
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.shape() == b.shape(), "div", detail::dims(a) + " vs " + detail::dims(b));
  Tensor<Scalar> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] /= bv[i];
  return a.tape->record(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto av = t.value(a.id).data();
                          const auto bv = t.value(b.id).data();
                          if (t.requires_grad(a.id)) {
                            auto d = t.grad(a.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / bv[i];
                          }
                          if (t.requires_grad(b.id)) {
                            auto d = t.grad(b.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i)
                              d[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                          }
                        });
}

/// scale * x + shift
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> x, Scalar scale, Scalar shift = Scalar{0}) {
  Tensor<Scalar> out = x.value();
  for (auto& v : out.data()) v = scale * v + shift;
  return x.tape->record(std::move(out), {x},
                        [x, scale](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          auto d = t.grad(x.id).data();
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * g[i];
                        });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar s) {
  return affine(x, s);
}

/// x[m x n] + r[1 x n], broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> x, Var<Scalar> r) {
  const auto& xv = x.value();
  const auto& rv = r.value();
  detail::check(rv.size() == xv.cols(), "add_row", detail::dims(x) + " vs " + detail::dims(r));
  Tensor<Scalar> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  return x.tape->record(std::move(out), {x, r},
                        [x, r, n](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          if (t.requires_grad(x.id)) {
                            auto d = t.grad(x.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          }
                          if (t.requires_grad(r.id)) {
                            auto d = t.grad(r.id).data();
                            for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
                          }
                        });
}

/// x[m x n] * r[1 x n] elementwise, broadcast over rows.
template <typename Scalar>
Var<Scalar> mul_row(Var<Scalar> x, Var<Scalar> r) {
  const auto& xv = x.value();
  const auto& rv = r.value();
  detail::check(rv.size() == xv.cols(), "mul_row", detail::dims(x) + " vs " + detail::dims(r));
  Tensor<Scalar> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rv[i % n];
  return x.tape->record(std::move(out), {x, r},
                        [x, r, n](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto& xv = t.value(x.id);
                          const auto& rv = t.value(r.id);
                          if (t.requires_grad(x.id)) {
                            auto d = t.grad(x.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * rv[i % n];
                          }
                          if (t.requires_grad(r.id)) {
                            auto d = t.grad(r.id).data();
                            for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i] * xv[i];
                          }
                        });
}

/// x[m x n] * c[m x 1], broadcast over columns.
template <typename Scalar>
Var<Scalar> mul_col(Var<Scalar> x, Var<Scalar> c) {
  const auto& xv = x.value();
  const auto& cv = c.value();
  detail::check(cv.size() == xv.rows(), "mul_col", detail::dims(x) + " vs " + detail::dims(c));
  Tensor<Scalar> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= cv[i / n];
  return x.tape->record(std::move(out), {x, c},
                        [x, c, n](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto& xv = t.value(x.id);
                          const auto& cv = t.value(c.id);
                          if (t.requires_grad(x.id)) {
                            auto d = t.grad(x.id).data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * cv[i / n];
                          }
                          if (t.requires_grad(c.id)) {
                            auto d = t.grad(c.id).data();
                            for (std::size_t i = 0; i < g.size(); ++i) d[i / n] += g[i] * xv[i];
                          }
                        });
}

template <typename Scalar>
Var<Scalar> activation(Activation kind, Var<Scalar> x) {
  Tensor<Scalar> out = x.value();
  for (auto& v : out.data()) {
    switch (kind) {
      case Activation::sigmoid: v = Scalar{1} / (Scalar{1} + std::exp(-v)); break;
      case Activation::tanh: v = std::tanh(v); break;
      case Activation::relu: v = v > Scalar{0} ? v : Scalar{0}; break;
    }
  }
  return x.tape->record(std::move(out), {x},
                        [x, kind](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>& y) {
                          auto d = t.grad(x.id).data();
                          for (std::size_t i = 0; i < d.size(); ++i) {
                            switch (kind) {
                              case Activation::sigmoid: d[i] += g[i] * y[i] * (1 - y[i]); break;
                              case Activation::tanh: d[i] += g[i] * (1 - y[i] * y[i]); break;
                              case Activation::relu: d[i] += y[i] > 0 ? g[i] : Scalar{0}; break;
                            }
                          }
                        });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) { return activation(Activation::sigmoid, x); }
template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> x) { return activation(Activation::tanh, x); }
template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) { return activation(Activation::relu, x); }

// ---------------------------------------------------------------- normalization

/// Boolean key mask, row-major [rows x cols]; 1 = attendable.
using Mask = std::vector<std::uint8_t>;

/// Softmax along the last axis (per row). Masked entries get probability 0;
/// a row with nothing attendable is an error.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x, const Mask* mask = nullptr) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (mask && mask->size() != m * n) throw ShapeError("softmax_rows: mask shape mismatch");
  Tensor<Scalar> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      mx = std::max(mx, xv(i, j));
      any = true;
    }
    if (!any) throw std::domain_error("softmax_rows: row " + std::to_string(i) + " fully masked");
    Scalar total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      out(i, j) = std::exp(xv(i, j) - mx);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= total;
  }
  return x.tape->record(std::move(out), {x},
                        [x, m, n](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>& y) {
                          auto& d = t.grad(x.id);
                          for (std::size_t i = 0; i < m; ++i) {
                            Scalar dot = 0;
                            for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < n; ++j) d(i, j) += y(i, j) * (g(i, j) - dot);
                          }
                        });
}

/// Per-row standardization followed by gain/bias, both [1 x H].
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5)) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), h = xv.cols();
  if (h == 0) throw ShapeError("layer_norm: zero-width rows");
  detail::check(gain.value().size() == h && bias.value().size() == h, "layer_norm",
                "gain/bias width must equal " + std::to_string(h));
  Tensor<Scalar> xhat(xv.shape());
  std::vector<Scalar> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    Scalar mu = 0;
    for (std::size_t j = 0; j < h; ++j) mu += xv(i, j);
    mu /= static_cast<Scalar>(h);
    Scalar var = 0;
    for (std::size_t j = 0; j < h; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<Scalar>(h);
    inv_std[i] = Scalar{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < h; ++j) xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<Scalar> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) out(i, j) = gv[j] * xhat(i, j) + bv[j];
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), m, h](
          Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
        const auto& gv = t.value(gain.id);
        if (t.requires_grad(gain.id)) {
          auto& d = t.grad(gain.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < h; ++j) d[j] += g(i, j) * xhat(i, j);
        }
        if (t.requires_grad(bias.id)) {
          auto& d = t.grad(bias.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < h; ++j) d[j] += g(i, j);
        }
        if (t.requires_grad(x.id)) {
          auto& d = t.grad(x.id);
          const Scalar inv_h = Scalar{1} / static_cast<Scalar>(h);
          for (std::size_t i = 0; i < m; ++i) {
            Scalar mean_dx = 0, mean_dx_xhat = 0;
            for (std::size_t j = 0; j < h; ++j) {
              const Scalar dxhat = g(i, j) * gv[j];
              mean_dx += dxhat;
              mean_dx_xhat += dxhat * xhat(i, j);
            }
            mean_dx *= inv_h;
            mean_dx_xhat *= inv_h;
            for (std::size_t j = 0; j < h; ++j) {
              const Scalar dxhat = g(i, j) * gv[j];
              d(i, j) += inv_std[i] * (dxhat - mean_dx - xhat(i, j) * mean_dx_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------- gather / reshape

template <typename Scalar>
Var<Scalar> embedding_lookup(Var<Scalar> table, std::span<const int> ids) {
  const auto& tv = table.value();
  const std::size_t h = tv.cols();
  Tensor<Scalar> out({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.row_span(ids[i]).begin(), h, out.row_span(i).begin());
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table},
                            [table, idv = std::move(idv), h](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                              auto& d = t.grad(table.id);
                              for (std::size_t i = 0; i < idv.size(); ++i)
                                for (std::size_t j = 0; j < h; ++j) d(idv[i], j) += g(i, j);
                            });
}

template <typename Scalar>
Var<Scalar> avg_pool_rows(Var<Scalar> x) {
  const auto& xv = x.value();
  const std::size_t l = xv.rows(), h = xv.cols();
  if (l == 0) throw ShapeError("avg_pool_rows: empty input");
  Tensor<Scalar> out({1, h});
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < h; ++j) out[j] += xv(i, j);
  for (auto& v : out.data()) v /= static_cast<Scalar>(l);
  return x.tape->record(std::move(out), {x},
                        [x, l, h](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          auto& d = t.grad(x.id);
                          const Scalar w = Scalar{1} / static_cast<Scalar>(l);
                          for (std::size_t i = 0; i < l; ++i)
                            for (std::size_t j = 0; j < h; ++j) d(i, j) += g[j] * w;
                        });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  detail::check(begin <= end && end <= xv.rows(), "slice_rows", "range outside " + detail::dims(x));
  const std::size_t h = xv.cols();
  Tensor<Scalar> out({end - begin, h});
  std::copy(xv.data().begin() + begin * h, xv.data().begin() + end * h, out.data().begin());
  return x.tape->record(std::move(out), {x},
                        [x, begin, h](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          auto d = t.grad(x.id).data();
                          for (std::size_t i = 0; i < g.size(); ++i) d[begin * h + i] += g[i];
                        });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  detail::check(begin <= end && end <= xv.cols(), "slice_cols", "range outside " + detail::dims(x));
  const std::size_t m = xv.rows(), w = end - begin;
  Tensor<Scalar> out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, begin + j);
  return x.tape->record(std::move(out), {x},
                        [x, begin, m, w](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          auto& d = t.grad(x.id);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j) d(i, begin + j) += g(i, j);
                        });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == m, "concat_cols", "row counts differ");
    total += p.cols();
  }
  Tensor<Scalar> out({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return parts.front().tape->record(std::move(out), parts,
                                    [parts, m](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                                      std::size_t off = 0;
                                      for (const auto& p : parts) {
                                        const std::size_t w = t.value(p.id).cols();
                                        if (t.requires_grad(p.id)) {
                                          auto& d = t.grad(p.id);
                                          for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t j = 0; j < w; ++j) d(i, j) += g(i, off + j);
                                        }
                                        off += w;
                                      }
                                    });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t h = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == h, "concat_rows", "column counts differ");
    total += p.rows();
  }
  Tensor<Scalar> out({total, h});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + off * h);
    off += p.rows();
  }
  return parts.front().tape->record(std::move(out), parts,
                                    [parts, h](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                                      std::size_t off = 0;
                                      for (const auto& p : parts) {
                                        const std::size_t n = t.value(p.id).size();
                                        if (t.requires_grad(p.id)) {
                                          auto d = t.grad(p.id).data();
                                          for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
                                        }
                                        off += n;
                                      }
                                    });
}

// ---------------------------------------------------------------- stochastic

/// Inverted dropout: kept entries are scaled by 1/(1-rate); identity when not
/// training or when rate is 0.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar s = static_cast<Scalar>(1.0 / (1.0 - rate));
  Tensor<Scalar> mask(x.shape());
  for (auto& v : mask.data()) v = keep(rng) ? s : Scalar{0};
  return mul(x, x.tape->constant(std::move(mask)));
}

// ---------------------------------------------------------------- reductions / loss

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out({1, 1}, x.value().sum());
  return x.tape->record(std::move(out), {x},
                        [x](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          for (auto& d : t.grad(x.id).data()) d += g[0];
                        });
}

/// out[i, ids[j]] += a[i, j]: moves attention mass over source positions onto
/// vocabulary ids.
template <typename Scalar>
Var<Scalar> scatter_cols(Var<Scalar> a, std::span<const int> ids, std::size_t width) {
  const auto& av = a.value();
  detail::check(av.cols() == ids.size(), "scatter_cols", "one id per column required");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= width) {
      throw std::out_of_range("scatter_cols: id " + std::to_string(id) + " outside width " +
                              std::to_string(width));
    }
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<Scalar> out({m, width});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, ids[j]) += av(i, j);
  std::vector<int> idv(ids.begin(), ids.end());
  return a.tape->record(std::move(out), {a},
                        [a, idv = std::move(idv), m](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          auto& d = t.grad(a.id);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < idv.size(); ++j) d(i, j) += g(i, idv[j]);
                        });
}

/// out[i] = log(max(p[i, target[i]], floor)), shape [m x 1].
template <typename Scalar>
Var<Scalar> log_pick(Var<Scalar> p, std::span<const int> targets, Scalar floor) {
  const auto& pv = p.value();
  detail::check(pv.rows() == targets.size(), "log_pick", "one target per row required");
  Tensor<Scalar> out({targets.size(), 1});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= pv.cols())
      throw std::out_of_range("log_pick: target id out of range");
    out[i] = std::log(std::max(pv(i, targets[i]), floor));
  }
  std::vector<int> tv(targets.begin(), targets.end());
  return p.tape->record(std::move(out), {p},
                        [p, tv = std::move(tv), floor](Tape<Scalar>& t, const Tensor<Scalar>& g, const Tensor<Scalar>&) {
                          const auto& pv = t.value(p.id);
                          auto& d = t.grad(p.id);
                          for (std::size_t i = 0; i < tv.size(); ++i) {
                            const Scalar v = pv(i, tv[i]);
                            if (v > floor) d(i, tv[i]) += g[i] / v;
                          }
                        });
}

// ---------------------------------------------------------------- helpers

/// x W + b with W [in x out] and b [1 x out].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  return add_row(matmul(x, w), b);
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w) {
  return matmul(x, w);
}

template <typename Scalar>
Var<Scalar> zeros(Tape<Scalar>& tape, std::size_t rows, std::size_t cols) {
  return tape.constant(Tensor<Scalar>({rows, cols}));
}

}  // namespace newscap::ops
