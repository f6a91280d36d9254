#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tinytrain/error.hpp"
#include "tinytrain/parallel.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

enum class Mode { Train, Eval };

// A named trainable tensor. Gradients accumulate across backward passes until
// the optimizer (or the caller) zeroes them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_in, Tensor value_in)
      : name(std::move(name_in)),
        value(std::move(value_in)),
        grad(Tensor::zeros(value.shape)) {}
};

namespace detail {

// col has layout [Ci*kh*kw][Ho*Wo]; x is one image [Ci][H][W].
inline void im2col(const double* x, std::size_t ci, std::size_t h, std::size_t w,
                   std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                   std::size_t ho, std::size_t wo, double* col) {
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = col + ((c * kh + i) * kw + j) * (ho * wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                              static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::memset(row + oy * wo, 0, wo * sizeof(double));
            continue;
          }
          const double* xrow = x + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                static_cast<std::ptrdiff_t>(pad);
            row[oy * wo + ox] =
                (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : xrow[sx];
          }
        }
      }
    }
  }
}

// Scatter-add of a col buffer back into one image gradient.
inline void col2im_add(const double* col, std::size_t ci, std::size_t h, std::size_t w,
                       std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                       std::size_t ho, std::size_t wo, double* dx) {
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const double* row = col + ((c * kh + i) * kw + j) * (ho * wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                              static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* xrow = dx + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                static_cast<std::ptrdiff_t>(pad);
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) {
              xrow[sx] += row[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

// C[M,N] = A[M,K] * B[K,N] (+bias per row when bias != nullptr).
inline void matmul(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n, const double* bias) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    double init = bias ? bias[i] : 0.0;
    for (std::size_t j = 0; j < n; ++j) crow[j] = init;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Define-by-run tape. One Graph records one forward computation; backward()
// replays it in reverse creation order, which is a topological order by
// construction, so traversal (and therefore floating-point accumulation
// order) is fixed.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int constant(Tensor v) { return push("const", {-1, -1, -1}, std::move(v), nullptr); }

  // Leaf bound to an external Parameter; backward() adds the node gradient
  // into p.grad.
  int param(Parameter& p) {
    int id = push("param", {-1, -1, -1}, p.value, nullptr);
    nodes_[id].bound = &p;
    return id;
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }

  // --- ops -----------------------------------------------------------------

  int conv2d(int x, int w, int b, std::size_t stride, std::size_t pad) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& wv = nodes_[w].value;
    const Tensor& bv = nodes_[b].value;
    if (xv.ndim() != 4 || wv.ndim() != 4 || bv.ndim() != 1) {
      throw ValidationError("conv2d: expected input [B,Ci,H,W], weight [Co,Ci,kh,kw], "
                            "bias [Co]; got " + xv.shape_str() + ", " + wv.shape_str() +
                            ", " + bv.shape_str());
    }
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    std::size_t batch = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    std::size_t co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != ci) {
      throw ValidationError("conv2d: input channels " + std::to_string(ci) +
                            " do not match kernel channels " + std::to_string(wv.dim(1)) +
                            " (input " + xv.shape_str() + ", weight " + wv.shape_str() + ")");
    }
    if (bv.dim(0) != co) {
      throw ValidationError("conv2d: bias size " + std::to_string(bv.dim(0)) +
                            " does not match output channels " + std::to_string(co));
    }
    if (h + 2 * pad < kh || wd + 2 * pad < kw) {
      throw ValidationError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                            " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                            std::to_string(wd + 2 * pad));
    }
    std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
    std::size_t k = ci * kh * kw, n = ho * wo;

    Tensor out = Tensor::zeros({batch, co, ho, wo});
    parallel_chunks(batch, [&](std::size_t, std::size_t begin, std::size_t end) {
      std::vector<double> col(k * n);
      for (std::size_t bi = begin; bi < end; ++bi) {
        detail::im2col(xv.data.data() + bi * ci * h * wd, ci, h, wd, kh, kw, stride, pad,
                       ho, wo, col.data());
        detail::matmul(wv.data.data(), col.data(), out.data.data() + bi * co * n, co, k, n,
                       bv.data.data());
      }
    });

    int id = push("conv2d", {x, w, b}, std::move(out),
                  [stride, pad, batch, ci, h, wd, co, kh, kw, ho, wo, k, n](Graph& g, int self) {
                    const Tensor& xv = g.nodes_[g.nodes_[self].inputs[0]].value;
                    const Tensor& wv = g.nodes_[g.nodes_[self].inputs[1]].value;
                    const Tensor& dy = g.nodes_[self].grad;
                    Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
                    Tensor& dw = g.nodes_[g.nodes_[self].inputs[1]].grad;
                    Tensor& db = g.nodes_[g.nodes_[self].inputs[2]].grad;

                    std::vector<std::vector<double>> dwc(kParallelChunks);
                    std::vector<std::vector<double>> dbc(kParallelChunks);
                    parallel_chunks(batch, [&](std::size_t c, std::size_t begin, std::size_t end) {
                      dwc[c].assign(co * k, 0.0);
                      dbc[c].assign(co, 0.0);
                      std::vector<double> col(k * n), dcol(k * n);
                      for (std::size_t bi = begin; bi < end; ++bi) {
                        const double* dyb = dy.data.data() + bi * co * n;
                        detail::im2col(xv.data.data() + bi * ci * h * wd, ci, h, wd, kh, kw,
                                       stride, pad, ho, wo, col.data());
                        // dW[co,k] += dy_b[co,:] . col[k,:]
                        for (std::size_t oc = 0; oc < co; ++oc) {
                          const double* dyrow = dyb + oc * n;
                          double s = 0.0;
                          for (std::size_t j = 0; j < n; ++j) s += dyrow[j];
                          dbc[c][oc] += s;
                          for (std::size_t p = 0; p < k; ++p) {
                            const double* crow = col.data() + p * n;
                            double acc = 0.0;
                            for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * crow[j];
                            dwc[c][oc * k + p] += acc;
                          }
                        }
                        // dcol[k,:] = W^T[k,co] . dy_b[co,:]
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        for (std::size_t oc = 0; oc < co; ++oc) {
                          const double* dyrow = dyb + oc * n;
                          const double* wrow = wv.data.data() + oc * k;
                          for (std::size_t p = 0; p < k; ++p) {
                            double wvp = wrow[p];
                            double* drow = dcol.data() + p * n;
                            for (std::size_t j = 0; j < n; ++j) drow[j] += wvp * dyrow[j];
                          }
                        }
                        detail::col2im_add(dcol.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                                           dx.data.data() + bi * ci * h * wd);
                      }
                    });
                    // Partials reduced in fixed chunk order.
                    for (std::size_t c = 0; c < kParallelChunks; ++c) {
                      if (dwc[c].empty()) continue;
                      for (std::size_t i = 0; i < co * k; ++i) dw.data[i] += dwc[c][i];
                      for (std::size_t i = 0; i < co; ++i) db.data[i] += dbc[c][i];
                    }
                  });
    return id;
  }

  int batchnorm2d(int x, int gamma, int beta, Tensor& running_mean, Tensor& running_var,
                  double eps, Mode mode, double momentum) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& gv = nodes_[gamma].value;
    const Tensor& bv = nodes_[beta].value;
    if (xv.ndim() != 4) {
      throw ValidationError("batchnorm2d: expected input [B,C,H,W], got " + xv.shape_str());
    }
    std::size_t batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (gv.shape != std::vector<std::size_t>{ch} || bv.shape != std::vector<std::size_t>{ch} ||
        running_mean.shape != std::vector<std::size_t>{ch} ||
        running_var.shape != std::vector<std::size_t>{ch}) {
      throw ValidationError("batchnorm2d: gamma/beta/running stats must have shape [" +
                            std::to_string(ch) + "], got " + gv.shape_str() + ", " +
                            bv.shape_str() + ", " + running_mean.shape_str() + ", " +
                            running_var.shape_str());
    }
    if (!(eps >= 0.0)) throw ValidationError("batchnorm2d: eps must be non-negative");

    std::size_t plane = h * w;
    std::size_t m = batch * plane;
    Tensor out = Tensor::zeros(xv.shape);
    Tensor xhat = Tensor::zeros(xv.shape);
    std::vector<double> inv(ch), mean(ch);

    if (mode == Mode::Train) {
      std::vector<double> var(ch);
      parallel_chunks(ch, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
          double s = 0.0;
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* p = xv.data.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
          }
          double mu = s / static_cast<double>(m);
          double sq = 0.0;
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* p = xv.data.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              double d = p[i] - mu;
              sq += d * d;
            }
          }
          double v = sq / static_cast<double>(m);  // biased
          mean[c] = mu;
          var[c] = v;
          inv[c] = 1.0 / std::sqrt(v + eps);
          double g = gv.data[c], b = bv.data[c], iv = inv[c];
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* p = xv.data.data() + (bi * ch + c) * plane;
            double* xh = xhat.data.data() + (bi * ch + c) * plane;
            double* o = out.data.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              xh[i] = (p[i] - mu) * iv;
              o[i] = g * xh[i] + b;
            }
          }
        }
      });
      for (std::size_t c = 0; c < ch; ++c) {
        running_mean.data[c] = (1.0 - momentum) * running_mean.data[c] + momentum * mean[c];
        running_var.data[c] = (1.0 - momentum) * running_var.data[c] + momentum * var[c];
      }
    } else {
      for (std::size_t c = 0; c < ch; ++c) {
        mean[c] = running_mean.data[c];
        inv[c] = 1.0 / std::sqrt(running_var.data[c] + eps);
      }
      parallel_chunks(ch, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
          double g = gv.data[c], b = bv.data[c], iv = inv[c], mu = mean[c];
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* p = xv.data.data() + (bi * ch + c) * plane;
            double* xh = xhat.data.data() + (bi * ch + c) * plane;
            double* o = out.data.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              xh[i] = (p[i] - mu) * iv;
              o[i] = g * xh[i] + b;
            }
          }
        }
      });
    }

    bool train = mode == Mode::Train;
    int id = push(
        "batchnorm2d", {x, gamma, beta}, std::move(out),
        [xhat = std::move(xhat), inv = std::move(inv), batch, ch, plane, m,
         train](Graph& g, int self) {
          const Tensor& dy = g.nodes_[self].grad;
          const Tensor& gv = g.nodes_[g.nodes_[self].inputs[1]].value;
          Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
          Tensor& dgamma = g.nodes_[g.nodes_[self].inputs[1]].grad;
          Tensor& dbeta = g.nodes_[g.nodes_[self].inputs[2]].grad;
          parallel_chunks(ch, [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t c = begin; c < end; ++c) {
              double sum_dy = 0.0, sum_dy_xh = 0.0;
              for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* d = dy.data.data() + (bi * ch + c) * plane;
                const double* xh = xhat.data.data() + (bi * ch + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  sum_dy += d[i];
                  sum_dy_xh += d[i] * xh[i];
                }
              }
              dbeta.data[c] += sum_dy;
              dgamma.data[c] += sum_dy_xh;
              double gval = gv.data[c], iv = inv[c];
              if (train) {
                double md = static_cast<double>(m);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                  const double* d = dy.data.data() + (bi * ch + c) * plane;
                  const double* xh = xhat.data.data() + (bi * ch + c) * plane;
                  double* dxp = dx.data.data() + (bi * ch + c) * plane;
                  for (std::size_t i = 0; i < plane; ++i) {
                    dxp[i] += gval * iv / md * (md * d[i] - sum_dy - xh[i] * sum_dy_xh);
                  }
                }
              } else {
                for (std::size_t bi = 0; bi < batch; ++bi) {
                  const double* d = dy.data.data() + (bi * ch + c) * plane;
                  double* dxp = dx.data.data() + (bi * ch + c) * plane;
                  for (std::size_t i = 0; i < plane; ++i) dxp[i] += gval * iv * d[i];
                }
              }
            }
          });
        });
    return id;
  }

  int relu(int x) {
    const Tensor& xv = nodes_[x].value;
    Tensor out = Tensor::zeros(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > 0.0 ? xv.data[i] : 0.0;
    return push("relu", {x, -1, -1}, std::move(out), [](Graph& g, int self) {
      const Tensor& xv = g.nodes_[g.nodes_[self].inputs[0]].value;
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
      for (std::size_t i = 0; i < xv.numel(); ++i) {
        if (xv.data[i] > 0.0) dx.data[i] += dy.data[i];
      }
    });
  }

  // The residual shortcut: backward routes the incoming gradient unchanged to
  // both inputs.
  int add(int a, int b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (!av.same_shape(bv)) {
      throw ValidationError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return push("add", {a, b, -1}, std::move(out), [](Graph& g, int self) {
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& da = g.nodes_[g.nodes_[self].inputs[0]].grad;
      Tensor& db = g.nodes_[g.nodes_[self].inputs[1]].grad;
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        da.data[i] += dy.data[i];
        db.data[i] += dy.data[i];
      }
    });
  }

  int mul(int a, int b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (!av.same_shape(bv)) {
      throw ValidationError("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return push("mul", {a, b, -1}, std::move(out), [](Graph& g, int self) {
      const Tensor& av = g.nodes_[g.nodes_[self].inputs[0]].value;
      const Tensor& bv = g.nodes_[g.nodes_[self].inputs[1]].value;
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& da = g.nodes_[g.nodes_[self].inputs[0]].grad;
      Tensor& db = g.nodes_[g.nodes_[self].inputs[1]].grad;
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        da.data[i] += dy.data[i] * bv.data[i];
        db.data[i] += dy.data[i] * av.data[i];
      }
    });
  }

  int global_avg_pool(int x) {
    const Tensor& xv = nodes_[x].value;
    if (xv.ndim() != 4) {
      throw ValidationError("global_avg_pool: expected [B,C,H,W], got " + xv.shape_str());
    }
    std::size_t batch = xv.dim(0), ch = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    Tensor out = Tensor::zeros({batch, ch});
    for (std::size_t bi = 0; bi < batch; ++bi) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = xv.data.data() + (bi * ch + c) * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        out.data[bi * ch + c] = s / static_cast<double>(plane);
      }
    }
    return push("global_avg_pool", {x, -1, -1}, std::move(out), [plane](Graph& g, int self) {
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
      std::size_t nc = dy.numel();
      for (std::size_t i = 0; i < nc; ++i) {
        double v = dy.data[i] / static_cast<double>(plane);
        double* p = dx.data.data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] += v;
      }
    });
  }

  int linear(int x, int w, int b) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& wv = nodes_[w].value;
    const Tensor& bv = nodes_[b].value;
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1) {
      throw ValidationError("linear: expected input [B,F], weight [O,F], bias [O]; got " +
                            xv.shape_str() + ", " + wv.shape_str() + ", " + bv.shape_str());
    }
    std::size_t batch = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
    if (wv.dim(1) != f || bv.dim(0) != o) {
      throw ValidationError("linear: features " + std::to_string(f) + " vs weight " +
                            wv.shape_str() + ", bias " + bv.shape_str());
    }
    Tensor out = Tensor::zeros({batch, o});
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* xr = xv.data.data() + bi * f;
      double* orow = out.data.data() + bi * o;
      for (std::size_t i = 0; i < o; ++i) {
        const double* wr = wv.data.data() + i * f;
        double s = bv.data[i];
        for (std::size_t j = 0; j < f; ++j) s += xr[j] * wr[j];
        orow[i] = s;
      }
    }
    return push("linear", {x, w, b}, std::move(out), [batch, f, o](Graph& g, int self) {
      const Tensor& xv = g.nodes_[g.nodes_[self].inputs[0]].value;
      const Tensor& wv = g.nodes_[g.nodes_[self].inputs[1]].value;
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
      Tensor& dw = g.nodes_[g.nodes_[self].inputs[1]].grad;
      Tensor& db = g.nodes_[g.nodes_[self].inputs[2]].grad;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* dyr = dy.data.data() + bi * o;
        const double* xr = xv.data.data() + bi * f;
        double* dxr = dx.data.data() + bi * f;
        for (std::size_t i = 0; i < o; ++i) {
          double d = dyr[i];
          db.data[i] += d;
          const double* wr = wv.data.data() + i * f;
          double* dwr = dw.data.data() + i * f;
          for (std::size_t j = 0; j < f; ++j) {
            dxr[j] += d * wr[j];
            dwr[j] += d * xr[j];
          }
        }
      }
    });
  }

  int sigmoid(int x) {
    const Tensor& xv = nodes_[x].value;
    Tensor out = Tensor::zeros(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      double v = xv.data[i];
      if (v >= 0.0) {
        out.data[i] = 1.0 / (1.0 + std::exp(-v));
      } else {
        double e = std::exp(v);
        out.data[i] = e / (1.0 + e);
      }
    }
    return push("sigmoid", {x, -1, -1}, std::move(out), [](Graph& g, int self) {
      const Tensor& y = g.nodes_[self].value;
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
      for (std::size_t i = 0; i < y.numel(); ++i) {
        dx.data[i] += dy.data[i] * y.data[i] * (1.0 - y.data[i]);
      }
    });
  }

  int sum(int x) {
    const Tensor& xv = nodes_[x].value;
    double s = 0.0;
    for (double v : xv.data) s += v;
    return push("sum", {x, -1, -1}, Tensor::scalar(s), [](Graph& g, int self) {
      const double d = g.nodes_[self].grad.data[0];
      Tensor& dx = g.nodes_[g.nodes_[self].inputs[0]].grad;
      for (double& v : dx.data) v += d;
    });
  }

  // Mean Bernoulli negative log likelihood over all entries. Probabilities
  // are clamped to [1e-12, 1-1e-12] before the logs; targets must be exactly
  // 0 or 1.
  int bce_loss(int probs, const Tensor& targets) {
    const Tensor& pv = nodes_[probs].value;
    if (!pv.same_shape(targets)) {
      throw ValidationError("bce_loss: probs " + pv.shape_str() + " vs targets " +
                            Tensor::shape_string(targets.shape));
    }
    for (double t : targets.data) {
      if (t != 0.0 && t != 1.0) {
        throw ValidationError("bce_loss: target " + std::to_string(t) + " is not in {0,1}");
      }
    }
    constexpr double kEps = 1e-12;
    std::size_t n = pv.numel();
    Tensor clamped = Tensor::zeros(pv.shape);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = pv.data[i];
      p = p < kEps ? kEps : (p > 1.0 - kEps ? 1.0 - kEps : p);
      clamped.data[i] = p;
      double y = targets.data[i];
      acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return push("bce_loss", {probs, -1, -1}, Tensor::scalar(acc / static_cast<double>(n)),
                [clamped = std::move(clamped), targets, n](Graph& g, int self) {
                  const double d = g.nodes_[self].grad.data[0] / static_cast<double>(n);
                  Tensor& dp = g.nodes_[g.nodes_[self].inputs[0]].grad;
                  for (std::size_t i = 0; i < n; ++i) {
                    double p = clamped.data[i];
                    dp.data[i] += d * (p - targets.data[i]) / (p * (1.0 - p));
                  }
                });
  }

  // --- backward --------------------------------------------------------------

  // Seeds d(loss)/d(loss) = 1, walks the tape in reverse creation order, then
  // adds leaf gradients into their bound Parameters. Node gradient
  // accumulators are zero-initialized on every call, so repeated calls
  // accumulate only in the Parameters.
  void backward(int loss) {
    if (nodes_[loss].value.numel() != 1) {
      throw ValidationError("backward: loss must be scalar, got shape " +
                            nodes_[loss].value.shape_str());
    }
    for (int i = 0; i <= loss; ++i) nodes_[i].grad = Tensor::zeros(nodes_[i].value.shape);
    nodes_[loss].grad.data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
      if (nodes_[i].backward_fn) nodes_[i].backward_fn(*this, i);
    }
    for (int i = 0; i <= loss; ++i) {
      if (nodes_[i].bound) {
        Parameter& p = *nodes_[i].bound;
        for (std::size_t j = 0; j < p.grad.numel(); ++j) p.grad.data[j] += nodes_[i].grad.data[j];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    std::array<int, 3> inputs;
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, int)> backward_fn;
    Parameter* bound = nullptr;
  };

  int push(const char* op, std::array<int, 3> inputs, Tensor value,
           std::function<void(Graph&, int)> backward_fn) {
    nodes_.push_back(Node{op, inputs, std::move(value), Tensor{}, std::move(backward_fn), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

// Central-difference gradient estimate of a scalar function, same shape as x.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                               double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_grad: eps must be positive");
  Tensor g = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double keep = x.data[i];
    x.data[i] = keep + eps;
    double hi = f(x);
    x.data[i] = keep - eps;
    double lo = f(x);
    x.data[i] = keep;
    g.data[i] = (hi - lo) / (2.0 * eps);
  }
  return g;
}

}  // namespace tinytrain
