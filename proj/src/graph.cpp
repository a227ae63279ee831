/* Copyright 2026 The CSIP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "csip/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "csip/error.hpp"

namespace csip::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void RequireRank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    Fail(ErrorKind::kShape, std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " +
                                ShapeString(t.shape()));
  }
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    Fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " +
                                ShapeString(a.shape()) + " vs " +
                                ShapeString(b.shape()));
  }
}

// Lays out input patches as a {C*k*k, N*Ho*Wo} matrix.
void Im2Col(const Tensor& x, int k, int stride, int pad, int ho, int wo,
            float* col) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t cols = n * p;
  const float* xd = x.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + ((static_cast<std::int64_t>(ci) * k + ki) * k + kj) * cols;
        for (int ni = 0; ni < n; ++ni) {
          const float* plane = xd + (static_cast<std::int64_t>(ni) * c + ci) * h * w;
          float* out = row + ni * p;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            float* orow = out + static_cast<std::int64_t>(oh) * wo;
            if (ih < 0 || ih >= h) {
              std::fill(orow, orow + wo, 0.0f);
              continue;
            }
            const float* irow = plane + static_cast<std::int64_t>(ih) * w;
            if (stride == 1) {
              const int shift = kj - pad;
              const int lo = std::max(0, -shift);
              const int hi = std::min(wo, w - shift);
              for (int ow = 0; ow < lo; ++ow) orow[ow] = 0.0f;
              for (int ow = lo; ow < hi; ++ow) orow[ow] = irow[ow + shift];
              for (int ow = std::max(hi, lo); ow < wo; ++ow) orow[ow] = 0.0f;
            } else {
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * stride - pad + kj;
                orow[ow] = (iw >= 0 && iw < w) ? irow[iw] : 0.0f;
              }
            }
          }
        }
      }
    }
  }
}

void Col2Im(const float* col, int n, int c, int h, int w, int k, int stride,
            int pad, int ho, int wo, float* dx) {
  const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t cols = n * p;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + ((static_cast<std::int64_t>(ci) * k + ki) * k + kj) * cols;
        for (int ni = 0; ni < n; ++ni) {
          float* plane = dx + (static_cast<std::int64_t>(ni) * c + ci) * h * w;
          const float* in = row + ni * p;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            float* drow = plane + static_cast<std::int64_t>(ih) * w;
            const float* irow = in + static_cast<std::int64_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < w) drow[iw] += irow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var Graph::Constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{size() - 1};
}

Var Graph::Parameter(const Tensor* value) {
  Node node;
  node.borrowed = value;
  node.needs_grad = record_;
  nodes_.push_back(std::move(node));
  return Var{size() - 1};
}

Var Graph::Borrow(const Tensor* value) {
  Node node;
  node.borrowed = value;
  nodes_.push_back(std::move(node));
  return Var{size() - 1};
}

Var Graph::Push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (record_) {
    for (Var in : inputs) node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{size() - 1};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.borrowed ? *n.borrowed : n.owned;
}

Tensor& Graph::mutable_grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor(value(v).shape(), 0.0f);
  return n.grad;
}

void Graph::AccumulateGrad(Var v, const Tensor& g) {
  if (!needs_grad(v)) return;
  Node& n = nodes_[v.id];
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  float* d = n.grad.data();
  const float* s = g.data();
  for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
}

void Graph::Backward(Var root, const Tensor& seed) {
  if (!record_) Fail(ErrorKind::kContract, "backward on a non-recording graph");
  RequireSameShape(value(root), seed, "Backward");
  AccumulateGrad(root, seed);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may append to other nodes' gradients but never to its own.
    n.backward(*this, n.grad);
  }
}

void Graph::Backward(Var root) {
  Backward(root, Tensor(value(root).shape(), 1.0f));
}

Var Conv2d(Graph& g, Var xv, Var wv, int stride, int pad) {
  const Tensor& x = g.value(xv);
  const Tensor& w = g.value(wv);
  RequireRank(x, 4, "Conv2d input");
  RequireRank(w, 4, "Conv2d weight");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    Fail(ErrorKind::kShape, "Conv2d: weight " + ShapeString(w.shape()) +
                                " incompatible with input " +
                                ShapeString(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) {
    Fail(ErrorKind::kShape, "Conv2d: input " + ShapeString(x.shape()) +
                                " too small for kernel " + std::to_string(k));
  }
  const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t ckk = static_cast<std::int64_t>(c) * k * k;
  auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(ckk * n * p));
  Im2Col(x, k, stride, pad, ho, wo, col->data());

  MatRM y(o, n * p);
  y.noalias() = CMapRM(w.data(), o, ckk) * CMapRM(col->data(), ckk, n * p);
  Tensor out({n, o, ho, wo});
  for (int ni = 0; ni < n; ++ni) {
    for (int oi = 0; oi < o; ++oi) {
      std::copy_n(y.data() + oi * n * p + ni * p, p,
                  out.data() + (static_cast<std::int64_t>(ni) * o + oi) * p);
    }
  }
  if (!g.recording()) col.reset();

  const Var inputs[] = {xv, wv};
  return g.Push(std::move(out), inputs,
                [=](Graph& gr, const Tensor& dout) {
                  MatRM dy(o, n * p);
                  for (int ni = 0; ni < n; ++ni) {
                    for (int oi = 0; oi < o; ++oi) {
                      std::copy_n(dout.data() + (static_cast<std::int64_t>(ni) * o + oi) * p, p,
                                  dy.data() + oi * n * p + ni * p);
                    }
                  }
                  if (gr.needs_grad(wv)) {
                    Tensor& dw = gr.mutable_grad(wv);
                    MapRM(dw.data(), o, ckk).noalias() +=
                        dy * CMapRM(col->data(), ckk, n * p).transpose();
                  }
                  if (gr.needs_grad(xv)) {
                    const Tensor& wt = gr.value(wv);
                    MatRM dcol(ckk, n * p);
                    dcol.noalias() = CMapRM(wt.data(), o, ckk).transpose() * dy;
                    Tensor& dx = gr.mutable_grad(xv);
                    Col2Im(dcol.data(), n, c, h, wd, k, stride, pad, ho, wo, dx.data());
                  }
                });
}

Var AddChannelBias(Graph& g, Var xv, Var bv) {
  const Tensor& x = g.value(xv);
  const Tensor& b = g.value(bv);
  RequireRank(x, 4, "AddChannelBias");
  if (b.numel() != x.dim(1)) {
    Fail(ErrorKind::kShape, "AddChannelBias: bias " + ShapeString(b.shape()) +
                                " vs channels " + std::to_string(x.dim(1)));
  }
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = x;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      float* d = out.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
      const float bias = b[ci];
      for (std::int64_t i = 0; i < hw; ++i) d[i] += bias;
    }
  }
  const Var inputs[] = {xv, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    gr.AccumulateGrad(xv, dout);
    if (gr.needs_grad(bv)) {
      Tensor& db = gr.mutable_grad(bv);
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const float* d = dout.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
          double s = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) s += d[i];
          db[ci] += static_cast<float>(s);
        }
      }
    }
  });
}

Var BatchNorm2d(Graph& g, Var xv, Var gv, Var bv, const BatchNormState& state,
                bool training) {
  const Tensor& x = g.value(xv);
  RequireRank(x, 4, "BatchNorm2d");
  const Tensor& gamma = g.value(gv);
  const Tensor& beta = g.value(bv);
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const std::int64_t m = n * hw;
  std::vector<float> mean(c), inv_std(c);
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* d = x.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += d[i];
      }
      const double mu = s / static_cast<double>(m);
      for (int ni = 0; ni < n; ++ni) {
        const float* d = x.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double e = d[i] - mu;
          s2 += e * e;
        }
      }
      const double var = s2 / static_cast<double>(m);
      mean[ci] = static_cast<float>(mu);
      inv_std[ci] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = m > 1 ? s2 / static_cast<double>(m - 1) : var;
      float& rm = (*state.running_mean)[ci];
      float& rv = (*state.running_var)[ci];
      rm = static_cast<float>((1.0 - state.momentum) * rm + state.momentum * mu);
      rv = static_cast<float>((1.0 - state.momentum) * rv + state.momentum * unbiased);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = (*state.running_mean)[ci];
      inv_std[ci] = 1.0f / std::sqrt((*state.running_var)[ci] + state.eps);
    }
  }
  Tensor out(x.shape());
  auto xhat = std::make_shared<Tensor>(x.shape());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const std::int64_t off = (static_cast<std::int64_t>(ni) * c + ci) * hw;
      const float* d = x.data() + off;
      float* xh = xhat->data() + off;
      float* o = out.data() + off;
      const float mu = mean[ci], is = inv_std[ci], ga = gamma[ci], be = beta[ci];
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (d[i] - mu) * is;
        o[i] = ga * xh[i] + be;
      }
    }
  }
  if (!g.recording()) xhat.reset();
  const Var inputs[] = {xv, gv, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    const Tensor& gam = gr.value(gv);
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (int ni = 0; ni < n; ++ni) {
      for (int ci = 0; ci < c; ++ci) {
        const std::int64_t off = (static_cast<std::int64_t>(ni) * c + ci) * hw;
        const float* dy = dout.data() + off;
        const float* xh = xhat->data() + off;
        double a = 0.0, b = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) {
          a += dy[i];
          b += static_cast<double>(dy[i]) * xh[i];
        }
        sum_dy[ci] += a;
        sum_dy_xhat[ci] += b;
      }
    }
    if (gr.needs_grad(gv)) {
      Tensor& dg = gr.mutable_grad(gv);
      for (int ci = 0; ci < c; ++ci) dg[ci] += static_cast<float>(sum_dy_xhat[ci]);
    }
    if (gr.needs_grad(bv)) {
      Tensor& db = gr.mutable_grad(bv);
      for (int ci = 0; ci < c; ++ci) db[ci] += static_cast<float>(sum_dy[ci]);
    }
    if (!gr.needs_grad(xv)) return;
    Tensor& dx = gr.mutable_grad(xv);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int ni = 0; ni < n; ++ni) {
      for (int ci = 0; ci < c; ++ci) {
        const std::int64_t off = (static_cast<std::int64_t>(ni) * c + ci) * hw;
        const float* dy = dout.data() + off;
        const float* xh = xhat->data() + off;
        float* d = dx.data() + off;
        const float scale = gam[ci] * inv_std[ci];
        if (training) {
          const float mdy = static_cast<float>(sum_dy[ci] * inv_m);
          const float mdyx = static_cast<float>(sum_dy_xhat[ci] * inv_m);
          for (std::int64_t i = 0; i < hw; ++i) {
            d[i] += scale * (dy[i] - mdy - xh[i] * mdyx);
          }
        } else {
          for (std::int64_t i = 0; i < hw; ++i) d[i] += scale * dy[i];
        }
      }
    }
  });
}

Var Relu(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  const Var inputs[] = {xv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    const Tensor& xin = gr.value(xv);
    Tensor& dx = gr.mutable_grad(xv);
    for (std::int64_t i = 0; i < dout.numel(); ++i) {
      if (xin[i] > 0.0f) dx[i] += dout[i];
    }
  });
}

Var Add(Graph& g, Var av, Var bv) {
  const Tensor& a = g.value(av);
  const Tensor& b = g.value(bv);
  RequireSameShape(a, b, "Add");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  const Var inputs[] = {av, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    gr.AccumulateGrad(av, dout);
    gr.AccumulateGrad(bv, dout);
  });
}

Var Sub(Graph& g, Var av, Var bv) {
  const Tensor& a = g.value(av);
  const Tensor& b = g.value(bv);
  RequireSameShape(a, b, "Sub");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  const Var inputs[] = {av, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    gr.AccumulateGrad(av, dout);
    if (gr.needs_grad(bv)) {
      Tensor& db = gr.mutable_grad(bv);
      for (std::int64_t i = 0; i < dout.numel(); ++i) db[i] -= dout[i];
    }
  });
}

Var AbsDiff(Graph& g, Var av, Var bv) {
  const Tensor& a = g.value(av);
  const Tensor& b = g.value(bv);
  RequireSameShape(a, b, "AbsDiff");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(a[i] - b[i]);
  const Var inputs[] = {av, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    const Tensor& ai = gr.value(av);
    const Tensor& bi = gr.value(bv);
    const bool ga = gr.needs_grad(av), gb = gr.needs_grad(bv);
    Tensor* da = ga ? &gr.mutable_grad(av) : nullptr;
    Tensor* db = gb ? &gr.mutable_grad(bv) : nullptr;
    for (std::int64_t i = 0; i < dout.numel(); ++i) {
      const float d = ai[i] - bi[i];
      const float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
      if (da) (*da)[i] += s * dout[i];
      if (db) (*db)[i] -= s * dout[i];
    }
  });
}

Var MaxPool2d(Graph& g, Var xv, int kernel, int stride, int pad) {
  const Tensor& x = g.value(xv);
  RequireRank(x, 4, "MaxPool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  std::int64_t idx = 0;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow, ++idx) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_at = -1;
          for (int ki = 0; ki < kernel; ++ki) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              const int iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= w) continue;
              const std::int64_t at = base + static_cast<std::int64_t>(ih) * w + iw;
              if (x[at] > best) {
                best = x[at];
                best_at = at;
              }
            }
          }
          out[idx] = best;
          (*argmax)[static_cast<std::size_t>(idx)] = best_at;
        }
      }
    }
  }
  const Var inputs[] = {xv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.mutable_grad(xv);
    for (std::int64_t i = 0; i < dout.numel(); ++i) {
      dx[(*argmax)[static_cast<std::size_t>(i)]] += dout[i];
    }
  });
}

Var GlobalAvgPool(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  RequireRank(x, 4, "GlobalAvgPool");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    const float* d = x.data() + i * hw;
    double s = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) s += d[j];
    out[i] = static_cast<float>(s / static_cast<double>(hw));
  }
  const Var inputs[] = {xv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.mutable_grad(xv);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int i = 0; i < n * c; ++i) {
      float* d = dx.data() + i * hw;
      const float v = dout[i] * inv;
      for (std::int64_t j = 0; j < hw; ++j) d[j] += v;
    }
  });
}

Var Linear(Graph& g, Var xv, Var wv, Var bv) {
  const Tensor& x = g.value(xv);
  const Tensor& w = g.value(wv);
  const Tensor& b = g.value(bv);
  RequireRank(x, 2, "Linear input");
  RequireRank(w, 2, "Linear weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in || b.numel() != out_dim) {
    Fail(ErrorKind::kShape, "Linear: weight " + ShapeString(w.shape()) +
                                " bias " + ShapeString(b.shape()) +
                                " incompatible with input " + ShapeString(x.shape()));
  }
  Tensor out({n, out_dim});
  MapRM y(out.data(), n, out_dim);
  y.noalias() = CMapRM(x.data(), n, in) * CMapRM(w.data(), out_dim, in).transpose();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < out_dim; ++j) y(i, j) += b[j];
  }
  const Var inputs[] = {xv, wv, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    CMapRM dy(dout.data(), n, out_dim);
    if (gr.needs_grad(wv)) {
      Tensor& dw = gr.mutable_grad(wv);
      MapRM(dw.data(), out_dim, in).noalias() +=
          dy.transpose() * CMapRM(gr.value(xv).data(), n, in);
    }
    if (gr.needs_grad(bv)) {
      Tensor& db = gr.mutable_grad(bv);
      for (int j = 0; j < out_dim; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += dy(i, j);
        db[j] += static_cast<float>(s);
      }
    }
    if (gr.needs_grad(xv)) {
      Tensor& dx = gr.mutable_grad(xv);
      MapRM(dx.data(), n, in).noalias() +=
          dy * CMapRM(gr.value(wv).data(), out_dim, in);
    }
  });
}

Var L2NormalizeRows(Graph& g, Var xv) {
  const Tensor& x = g.value(xv);
  RequireRank(x, 2, "L2NormalizeRows");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  auto norms = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * x[i * d + j];
    const double norm = std::max(std::sqrt(s), 1e-12);
    (*norms)[i] = norm;
    for (int j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(x[i * d + j] / norm);
  }
  const Var inputs[] = {xv};
  auto y = std::make_shared<Tensor>(out);
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.mutable_grad(xv);
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>((*y)[i * d + j]) * dout[i * d + j];
      const double inv = 1.0 / (*norms)[i];
      for (int j = 0; j < d; ++j) {
        dx[i * d + j] += static_cast<float>((dout[i * d + j] - (*y)[i * d + j] * dot) * inv);
      }
    }
  });
}

Var UpsampleNearest(Graph& g, Var xv, int factor) {
  const Tensor& x = g.value(xv);
  RequireRank(x, 4, "UpsampleNearest");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h * factor, wo = w * factor;
  Tensor out({n, c, ho, wo});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::int64_t>(p) * h * w;
    float* dst = out.data() + static_cast<std::int64_t>(p) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const float* srow = src + static_cast<std::int64_t>(oh / factor) * w;
      float* drow = dst + static_cast<std::int64_t>(oh) * wo;
      for (int ow = 0; ow < wo; ++ow) drow[ow] = srow[ow / factor];
    }
  }
  const Var inputs[] = {xv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    Tensor& dx = gr.mutable_grad(xv);
    for (int p = 0; p < n * c; ++p) {
      float* dst = dx.data() + static_cast<std::int64_t>(p) * h * w;
      const float* src = dout.data() + static_cast<std::int64_t>(p) * ho * wo;
      for (int oh = 0; oh < ho; ++oh) {
        float* drow = dst + static_cast<std::int64_t>(oh / factor) * w;
        const float* srow = src + static_cast<std::int64_t>(oh) * wo;
        for (int ow = 0; ow < wo; ++ow) drow[ow / factor] += srow[ow];
      }
    }
  });
}

Var ConcatChannels(Graph& g, Var av, Var bv) {
  const Tensor& a = g.value(av);
  const Tensor& b = g.value(bv);
  RequireRank(a, 4, "ConcatChannels");
  RequireRank(b, 4, "ConcatChannels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    Fail(ErrorKind::kShape, "ConcatChannels: " + ShapeString(a.shape()) +
                                " vs " + ShapeString(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(a.dim(2)) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int ni = 0; ni < n; ++ni) {
    std::copy_n(a.data() + ni * ca * hw, ca * hw, out.data() + ni * (ca + cb) * hw);
    std::copy_n(b.data() + ni * cb * hw, cb * hw, out.data() + (ni * (ca + cb) + ca) * hw);
  }
  const Var inputs[] = {av, bv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    if (gr.needs_grad(av)) {
      Tensor& da = gr.mutable_grad(av);
      for (int ni = 0; ni < n; ++ni) {
        const float* s = dout.data() + ni * (ca + cb) * hw;
        float* d = da.data() + ni * ca * hw;
        for (std::int64_t i = 0; i < ca * hw; ++i) d[i] += s[i];
      }
    }
    if (gr.needs_grad(bv)) {
      Tensor& db = gr.mutable_grad(bv);
      for (int ni = 0; ni < n; ++ni) {
        const float* s = dout.data() + (ni * (ca + cb) + ca) * hw;
        float* d = db.data() + ni * cb * hw;
        for (std::int64_t i = 0; i < cb * hw; ++i) d[i] += s[i];
      }
    }
  });
}

Var SoftmaxCrossEntropy(Graph& g, Var lv, std::span<const int> labels) {
  const Tensor& logits = g.value(lv);
  RequireRank(logits, 4, "SoftmaxCrossEntropy");
  const int n = logits.dim(0), k = logits.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(logits.dim(2)) * logits.dim(3);
  const std::int64_t m = n * hw;
  if (static_cast<std::int64_t>(labels.size()) != m) {
    Fail(ErrorKind::kShape, "SoftmaxCrossEntropy: " + std::to_string(labels.size()) +
                                " labels for logits " + ShapeString(logits.shape()));
  }
  auto probs = std::make_shared<Tensor>(logits.shape());
  auto lbl = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double total = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    const float* base = logits.data() + static_cast<std::int64_t>(ni) * k * hw;
    float* pbase = probs->data() + static_cast<std::int64_t>(ni) * k * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      const int label = (*lbl)[ni * hw + i];
      if (label < 0 || label >= k) {
        Fail(ErrorKind::kData, "label " + std::to_string(label) +
                                   " outside [0, " + std::to_string(k - 1) + "]");
      }
      float mx = base[i];
      for (int c = 1; c < k; ++c) mx = std::max(mx, base[c * hw + i]);
      double s = 0.0;
      for (int c = 0; c < k; ++c) s += std::exp(static_cast<double>(base[c * hw + i] - mx));
      const double log_s = std::log(s);
      for (int c = 0; c < k; ++c) {
        pbase[c * hw + i] = static_cast<float>(std::exp(base[c * hw + i] - mx - log_s));
      }
      total += log_s - (base[label * hw + i] - mx);
    }
  }
  Tensor out({1}, static_cast<float>(total / static_cast<double>(m)));
  const Var inputs[] = {lv};
  return g.Push(std::move(out), inputs, [=](Graph& gr, const Tensor& dout) {
    Tensor& dl = gr.mutable_grad(lv);
    const float scale = dout[0] / static_cast<float>(m);
    for (int ni = 0; ni < n; ++ni) {
      for (int c = 0; c < k; ++c) {
        const std::int64_t off = (static_cast<std::int64_t>(ni) * k + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const float onehot = (*lbl)[ni * hw + i] == c ? 1.0f : 0.0f;
          dl[off + i] += scale * ((*probs)[off + i] - onehot);
        }
      }
    }
  });
}

}  // namespace csip::nn
