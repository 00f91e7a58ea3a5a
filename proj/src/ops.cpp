#include "metaprompter/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "metaprompter/errors.hpp"

namespace mpr::ops {
namespace {

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

void require_nonempty(const char* op, const Tensor& a) {
  if (a.empty()) throw DimensionError(std::string(op) + ": empty input");
}

void accumulate(Tensor& dst, const Tensor& src, double factor = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape("add", A, B);
  Tensor out = A;
  accumulate(out, B);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) accumulate(t.grad(a), g);
    if (t.requires_grad(b)) accumulate(t.grad(b), g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape("sub", A, B);
  Tensor out = A;
  accumulate(out, B, -1.0);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) accumulate(t.grad(a), g);
    if (t.requires_grad(b)) accumulate(t.grad(b), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    accumulate(t.grad(a), g, s);
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank("matmul", A, 2);
  require_rank("matmul", B, 2);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul: inner dimensions " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  }
  Tensor out({m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const double* pg = g.data().data();
    if (t.requires_grad(a)) {
      // dA = dC * B^T
      const double* pb = t.value(b).data().data();
      double* pga = t.grad(a).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = pb + p * n;
          const double* grow = pg + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      // dB = A^T * dC
      const double* pa = t.value(a).data().data();
      double* pgb = t.grad(b).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          double* brow = pgb + p * n;
          const double* grow = pg + i * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank("matmul_nt", A, 2);
  require_rank("matmul_nt", B, 2);
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()) + "^T");
  }
  Tensor out({m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
      pc[i * n + j] = acc;
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const double* pg = g.data().data();
    if (t.requires_grad(a)) {
      // dA = dC * B
      const double* pb = t.value(b).data().data();
      double* pga = t.grad(a).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = pg[i * n + j];
          for (std::size_t p = 0; p < k; ++p) pga[i * k + p] += gv * pb[j * k + p];
        }
      }
    }
    if (t.requires_grad(b)) {
      // dB = dC^T * A
      const double* pa = t.value(a).data().data();
      double* pgb = t.grad(b).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = pg[i * n + j];
          for (std::size_t p = 0; p < k; ++p) pgb[j * k + p] += gv * pa[i * k + p];
        }
      }
    }
  });
}

Var matvec(Var a, Var x) {
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  require_rank("matvec", A, 2);
  require_rank("matvec", X, 1);
  const std::size_t n = X.size();
  Var xm = reshape(x, {1, n});
  Var out = matmul_nt(a, xm);
  return reshape(out, {A.rows()});
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank("transpose", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& B = bias.value();
  require_rank("add_row", A, 2);
  require_rank("add_row", B, 1);
  const std::size_t m = A.rows(), n = A.cols();
  if (B.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(B.shape()) + " for " +
                         shape_string(A.shape()));
  }
  Tensor out = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  return t.record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) accumulate(t.grad(a), g);
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() != 1 && v.rank() != 2) throw DimensionError("concat_rows: rank must be 1 or 2");
    if (v.cols() != n) {
      throw DimensionError("concat_rows: width " + std::to_string(v.cols()) + " vs " +
                           std::to_string(n));
    }
    total += v.rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const Var& p : parts) {
    offsets.push_back(data.size());
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(Tensor({total, n}, std::move(data)), parts,
                  [inputs, offsets](Tape& t, const Tensor& g) {
                    for (std::size_t i = 0; i < inputs.size(); ++i) {
                      if (!t.requires_grad(inputs[i])) continue;
                      Tensor& gi = t.grad(inputs[i]);
                      for (std::size_t e = 0; e < gi.size(); ++e) gi[e] += g[offsets[i] + e];
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    const Tensor& v = p.value();
    require_rank("concat_cols", v, 2);
    if (v.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out({m, total});
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, col + j) = v.at(i, j);
    col += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs, widths, m](Tape& t, const Tensor& g) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (t.requires_grad(inputs[k])) {
        Tensor& gk = t.grad(inputs[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk.at(i, j) += g.at(i, col + j);
      }
      col += widths[k];
    }
  });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  Tape& t = parts.front().tape();
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() > 1) throw DimensionError("stack: inputs must be scalars or vectors");
    offsets.push_back(data.size());
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(Tensor::vector(std::move(data)), parts,
                  [inputs, offsets](Tape& t, const Tensor& g) {
                    for (std::size_t i = 0; i < inputs.size(); ++i) {
                      if (!t.requires_grad(inputs[i])) continue;
                      Tensor& gi = t.grad(inputs[i]);
                      for (std::size_t e = 0; e < gi.size(); ++e) gi[e] += g[offsets[i] + e];
                    }
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = a.value();
  require_rank("slice_rows", A, 2);
  const std::size_t n = A.cols();
  if (begin + count > A.rows()) throw DimensionError("slice_rows: range out of bounds");
  std::vector<double> data(A.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           A.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return a.tape().record(Tensor({count, n}, std::move(data)), {a},
                         [a, begin, n](Tape& t, const Tensor& g) {
                           Tensor& ga = t.grad(a);
                           for (std::size_t e = 0; e < g.size(); ++e) ga[begin * n + e] += g[e];
                         });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = a.value();
  require_rank("slice_cols", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  if (begin + count > n) throw DimensionError("slice_cols: range out of bounds");
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = A.at(i, begin + j);
  return a.tape().record(std::move(out), {a}, [a, begin, count, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga.at(i, begin + j) += g.at(i, j);
  });
}

Var row(Var a, std::size_t r) {
  const Tensor& A = a.value();
  require_rank("row", A, 2);
  if (r >= A.rows()) throw DimensionError("row: index out of range");
  const std::size_t n = A.cols();
  return a.tape().record(A.row(r), {a}, [a, r, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[j];
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& A = a.value();
  if (shape_size(shape) != A.size()) {
    throw DimensionError("reshape: " + shape_string(A.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> data(A.data().begin(), A.data().end());
  return a.tape().record(Tensor(std::move(shape), std::move(data)), {a},
                         [a](Tape& t, const Tensor& g) { accumulate(t.grad(a), g); });
}

Var mean_rows(Var a) {
  const Tensor& A = a.value();
  require_rank("mean_rows", A, 2);
  const std::size_t m = A.rows(), n = A.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  const double count = static_cast<double>(m);
  for (double& v : out.data()) v /= count;
  return a.tape().record(std::move(out), {a}, [a, m, n, count](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] / count;
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    const double gv = g[0];
    for (double& v : ga.data()) v += gv;
  });
}

Var mean(Var a) {
  require_nonempty("mean", a.value());
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var dot(Var u, Var v) {
  Tape& t = tape_of(u, v);
  const Tensor& U = u.value();
  const Tensor& V = v.value();
  require_same_shape("dot", U, V);
  double s = 0.0;
  for (std::size_t i = 0; i < U.size(); ++i) s += U[i] * V[i];
  return t.record(Tensor::scalar(s), {u, v}, [u, v](Tape& t, const Tensor& g) {
    const double gv = g[0];
    if (t.requires_grad(u)) accumulate(t.grad(u), t.value(v), gv);
    if (t.requires_grad(v)) accumulate(t.grad(v), t.value(u), gv);
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& T = table.value();
  require_rank("gather_rows", T, 2);
  const std::size_t n = T.cols();
  std::vector<double> data;
  data.reserve(ids.size() * n);
  for (std::size_t id : ids) {
    if (id >= T.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table of " +
                           std::to_string(T.rows()) + " rows");
    }
    const auto r = T.data().subspan(id * n, n);
    data.insert(data.end(), r.begin(), r.end());
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape().record(Tensor({idv.size(), n}, std::move(data)), {table},
                             [table, idv, n](Tape& t, const Tensor& g) {
                               Tensor& gt = t.grad(table);
                               for (std::size_t i = 0; i < idv.size(); ++i)
                                 for (std::size_t j = 0; j < n; ++j)
                                   gt[idv[i] * n + j] += g[i * n + j];
                             });
}

Var select(Var x, std::span<const std::size_t> ids) {
  const Tensor& X = x.value();
  require_rank("select", X, 1);
  std::vector<double> data;
  data.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= X.size()) throw DimensionError("select: index out of range");
    data.push_back(X[id]);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return x.tape().record(Tensor::vector(std::move(data)), {x},
                         [x, idv](Tape& t, const Tensor& g) {
                           Tensor& gx = t.grad(x);
                           for (std::size_t i = 0; i < idv.size(); ++i) gx[idv[i]] += g[i];
                         });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x, gamma);
  tape_of(x, beta);
  const Tensor& X = x.value();
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  require_rank("layer_norm", X, 2);
  const std::size_t m = X.rows(), n = X.cols();
  if (G.size() != n || B.size() != n) throw DimensionError("layer_norm: gain/bias width");
  // xhat and 1/sigma per row are kept for the backward rule.
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = X[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (X[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * G[j] + B[j];
    }
  }
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](
                      Tape& t, const Tensor& g) {
                    const Tensor& G = t.value(gamma);
                    if (t.requires_grad(gamma)) {
                      Tensor& gg = t.grad(gamma);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                    if (t.requires_grad(beta)) {
                      Tensor& gb = t.grad(beta);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                    }
                    if (t.requires_grad(x)) {
                      Tensor& gx = t.grad(x);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < m; ++i) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = g[i * n + j] * G[j];
                          s1 += dh;
                          s2 += dh * xhat[i * n + j];
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = g[i * n + j] * G[j];
                          gx[i * n + j] +=
                              inv_std[i] * (dh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                        }
                      }
                    }
                  });
}

Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Tensor& X = x.value();
  Tensor out = X;
  for (double& v : out.data()) {
    const double u = c * (v + 0.044715 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  Tensor y = out;
  return x.tape().record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var log(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
    v = std::log(v);
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) gx[i] += g[i] / X[i];
  });
}

namespace {

void softmax_inplace(double* v, std::size_t n, double scale) {
  double mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp((v[i] - mx) / scale);
    z += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= z;
}

// dx_i = (y_i / scale) (g_i - sum_j g_j y_j)
void softmax_backward(const double* y, const double* g, double* gx, std::size_t n, double scale) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += g[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - s) / scale;
}

}  // namespace

Var softmax(Var x, double scale) {
  const Tensor& X = x.value();
  require_rank("softmax", X, 1);
  require_nonempty("softmax", X);
  if (!(scale > 0.0)) throw ContractError("softmax: scale must be positive");
  Tensor out = X;
  softmax_inplace(out.data().data(), out.size(), scale);
  Tensor y = out;
  return x.tape().record(std::move(out), {x},
                         [x, y = std::move(y), scale](Tape& t, const Tensor& g) {
                           softmax_backward(y.data().data(), g.data().data(),
                                            t.grad(x).data().data(), y.size(), scale);
                         });
}

Var softmax_rows(Var x, double scale) {
  const Tensor& X = x.value();
  require_rank("softmax_rows", X, 2);
  require_nonempty("softmax_rows", X);
  if (!(scale > 0.0)) throw ContractError("softmax_rows: scale must be positive");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i) softmax_inplace(out.data().data() + i * n, n, scale);
  Tensor y = out;
  return x.tape().record(std::move(out), {x},
                         [x, y = std::move(y), scale, m, n](Tape& t, const Tensor& g) {
                           double* gx = t.grad(x).data().data();
                           for (std::size_t i = 0; i < m; ++i) {
                             softmax_backward(y.data().data() + i * n, g.data().data() + i * n,
                                              gx + i * n, n, scale);
                           }
                         });
}

Var log_softmax(Var x) {
  const Tensor& X = x.value();
  require_rank("log_softmax", X, 1);
  require_nonempty("log_softmax", X);
  double mx = X[0];
  for (double v : X.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : X.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor out = X;
  for (double& v : out.data()) v -= lse;
  Tensor y = out;
  return x.tape().record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    double gs = 0.0;
    for (double v : g.data()) gs += v;
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] - std::exp(y[i]) * gs;
  });
}

Var nll(Var logp, std::size_t target) {
  const Tensor& L = logp.value();
  require_rank("nll", L, 1);
  if (target >= L.size()) throw DimensionError("nll: target out of range");
  return logp.tape().record(Tensor::scalar(-L[target]), {logp},
                            [logp, target](Tape& t, const Tensor& g) {
                              t.grad(logp)[target] -= g[0];
                            });
}

Var normalize_sum(Var x) {
  const Tensor& X = x.value();
  require_rank("normalize_sum", X, 1);
  require_nonempty("normalize_sum", X);
  double z = 0.0;
  for (double v : X.data()) z += v;
  if (!(z > 0.0)) throw NumericError("normalize_sum: non-positive total");
  Tensor out = X;
  for (double& v : out.data()) v /= z;
  Tensor y = out;
  return x.tape().record(std::move(out), {x}, [x, y = std::move(y), z](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += (g[i] - s) / z;
  });
}

namespace {

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

}  // namespace

Var cosine(Var u, Var v) {
  Tape& t = tape_of(u, v);
  const Tensor& U = u.value();
  const Tensor& V = v.value();
  require_rank("cosine", U, 1);
  require_same_shape("cosine", U, V);
  const double nu = norm_of(U.data());
  const double nv = norm_of(V.data());
  if (nu <= kCosineEps || nv <= kCosineEps) {
    throw DegenerateVectorError("cosine: vector norm below 1e-12");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < U.size(); ++i) d += U[i] * V[i];
  const double c = d / (nu * nv);
  return t.record(Tensor::scalar(c), {u, v}, [u, v, nu, nv, c](Tape& t, const Tensor& g) {
    const Tensor& U = t.value(u);
    const Tensor& V = t.value(v);
    const double gv = g[0];
    // dc/du = v/(|u||v|) - c u/|u|^2
    if (t.requires_grad(u)) {
      Tensor& gu = t.grad(u);
      for (std::size_t i = 0; i < U.size(); ++i)
        gu[i] += gv * (V[i] / (nu * nv) - c * U[i] / (nu * nu));
    }
    if (t.requires_grad(v)) {
      Tensor& gvv = t.grad(v);
      for (std::size_t i = 0; i < V.size(); ++i)
        gvv[i] += gv * (U[i] / (nu * nv) - c * V[i] / (nv * nv));
    }
  });
}

Var cosine_rows(Var a, Var h) {
  Tape& t = tape_of(a, h);
  const Tensor& A = a.value();
  const Tensor& H = h.value();
  require_rank("cosine_rows", A, 2);
  require_rank("cosine_rows", H, 1);
  const std::size_t m = A.rows(), n = A.cols();
  if (H.size() != n) throw DimensionError("cosine_rows: width mismatch");
  const double nh = norm_of(H.data());
  if (nh <= kCosineEps) throw DegenerateVectorError("cosine_rows: query norm below 1e-12");
  std::vector<double> norms(m);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = norm_of(A.data().subspan(i * n, n));
    if (norms[i] <= kCosineEps) {
      throw DegenerateVectorError("cosine_rows: row " + std::to_string(i) + " norm below 1e-12");
    }
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += A[i * n + j] * H[j];
    out[i] = d / (norms[i] * nh);
  }
  Tensor c = out;
  return t.record(std::move(out), {a, h},
                  [a, h, norms = std::move(norms), nh, c = std::move(c), m, n](Tape& t,
                                                                               const Tensor& g) {
                    const Tensor& A = t.value(a);
                    const Tensor& H = t.value(h);
                    const bool ga_on = t.requires_grad(a);
                    const bool gh_on = t.requires_grad(h);
                    for (std::size_t i = 0; i < m; ++i) {
                      const double gi = g[i];
                      const double na = norms[i];
                      if (ga_on) {
                        Tensor& ga = t.grad(a);
                        for (std::size_t j = 0; j < n; ++j)
                          ga[i * n + j] += gi * (H[j] / (na * nh) - c[i] * A[i * n + j] / (na * na));
                      }
                      if (gh_on) {
                        Tensor& gh = t.grad(h);
                        for (std::size_t j = 0; j < n; ++j)
                          gh[j] += gi * (A[i * n + j] / (na * nh) - c[i] * H[j] / (nh * nh));
                      }
                    }
                  });
}

}  // namespace mpr::ops
