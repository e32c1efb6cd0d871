#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "evbox/boxgeom.hpp"
#include "evbox/graph.hpp"

namespace evbox {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename S>
inline S stable_sigmoid(S x) {
  if (x >= S(0)) {
    return S(1) / (S(1) + std::exp(-x));
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// log(1 + e^x) without overflow.
template <typename S>
inline S softplus(S x) {
  if (x > S(30)) return x;
  if (x < S(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename S>
inline S smooth_l1_value(S x) {
  const S a = std::abs(x);
  return a < S(1) ? S(0.5) * x * x : a - S(0.5);
}

template <typename S>
inline S smooth_l1_slope(S x) {
  if (x > S(1)) return S(1);
  if (x < S(-1)) return S(-1);
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of a CHW input with OCkk weights (square kernel),
// implemented as im2col + GEMM. Output spatial dims follow
// floor((H + 2*pad - k)/stride) + 1.
// ---------------------------------------------------------------------------
template <typename S>
int conv2d(Graph<S>& g, int x, int w, int b, int stride, int pad) {
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& wv = g.value(w);
  const Tensor<S>& bv = g.value(b);
  detail::check(xv.rank() == 3, "conv2d: input must be CHW, got " + shape_str(xv.shape()));
  detail::check(wv.rank() == 4 && wv.dim(2) == wv.dim(3),
                "conv2d: weight must be OCkk with square kernel, got " + shape_str(wv.shape()));
  detail::check(bv.rank() == 1 && bv.dim(0) == wv.dim(0),
                "conv2d: bias shape " + shape_str(bv.shape()) + " does not match weight " +
                    shape_str(wv.shape()));
  if (xv.dim(0) != wv.dim(1)) {
    throw ShapeError("conv2d: input channels " + shape_str(xv.shape()) +
                     " do not match weight " + shape_str(wv.shape()));
  }
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int O = wv.dim(0), K = wv.dim(2);
  if (H + 2 * pad < K || W + 2 * pad < K) {
    throw ShapeError("conv2d: kernel " + shape_str(wv.shape()) +
                     " does not fit padded input " + shape_str(xv.shape()));
  }
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - K) / stride + 1;
  const long ckk = static_cast<long>(C) * K * K;
  const long ncols = static_cast<long>(OH) * OW;

  auto cols = std::make_shared<RowMat<S>>(ckk, ncols);
  const S* xd = xv.data();
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const long r = (static_cast<long>(c) * K + ky) * K + kx;
        S* row = cols->data() + r * ncols;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[static_cast<long>(oy) * OW + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? xd[(static_cast<long>(c) * H + iy) * W + ix]
                    : S(0);
          }
        }
      }
    }
  }

  Tensor<S> out({O, OH, OW});
  {
    ConstMatMap<S> wm(wv.data(), O, ckk);
    MatMap<S> ym(out.data(), O, ncols);
    ym.noalias() = wm * (*cols);
    for (int o = 0; o < O; ++o) ym.row(o).array() += bv[o];
  }

  auto fn = [x, w, b, cols, C, H, W, O, K, OH, OW, stride, pad, ckk, ncols](
                Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    ConstMatMap<S> dy(og.data(), O, ncols);
    const Tensor<S>& wv2 = gr.value(w);

    Tensor<S>& dwt = Graph<S>::sweep_slot(sweep, w, wv2.shape());
    MatMap<S> dw(dwt.data(), O, ckk);
    dw.noalias() += dy * cols->transpose();

    Tensor<S>& dbt = Graph<S>::sweep_slot(sweep, b, {O});
    for (int o = 0; o < O; ++o) dbt[o] += dy.row(o).sum();

    RowMat<S> dcols(ckk, ncols);
    {
      ConstMatMap<S> wm(wv2.data(), O, ckk);
      dcols.noalias() = wm.transpose() * dy;
    }
    Tensor<S>& dxt = Graph<S>::sweep_slot(sweep, x, {C, H, W});
    S* dx = dxt.data();
    for (int c = 0; c < C; ++c) {
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          const long r = (static_cast<long>(c) * K + ky) * K + kx;
          const S* row = dcols.data() + r * ncols;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              dx[(static_cast<long>(c) * H + iy) * W + ix] +=
                  row[static_cast<long>(oy) * OW + ox];
            }
          }
        }
      }
    }
  };
  return g.add_node(OpKind::kConv2d, {x, w, b}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 non-overlapping max. Ties route the gradient to the first
// tied cell in row-major window order.
// ---------------------------------------------------------------------------
template <typename S>
int maxpool2(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  detail::check(xv.rank() == 3, "maxpool2: input must be CHW, got " + shape_str(xv.shape()));
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(xv.shape()));
  }
  const int OH = H / 2, OW = W / 2;
  Tensor<S> out({C, OH, OW});
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  const S* xd = xv.data();
  long oi = 0;
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox, ++oi) {
        S best{};
        long best_idx = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const long idx = (static_cast<long>(c) * H + oy * 2 + dy) * W + ox * 2 + dx;
            if (best_idx < 0 || xd[idx] > best) {
              best = xd[idx];
              best_idx = idx;
            }
          }
        }
        out[oi] = best;
        (*argmax)[oi] = best_idx;
      }
    }
  }
  auto fn = [x, argmax, C, H, W](Graph<S>& gr, const Tensor<S>& og,
                                 std::vector<Tensor<S>>& sweep) {
    (void)gr;
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, {C, H, W});
    for (long i = 0; i < og.size(); ++i) dx[(*argmax)[i]] += og[i];
  };
  return g.add_node(OpKind::kMaxPool2, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// relu: elementwise max(0, x). Backward gate is 1 strictly above zero.
// ---------------------------------------------------------------------------
template <typename S>
int relu(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  Tensor<S> out(xv.shape());
  for (long i = 0; i < xv.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
  auto fn = [x](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (long i = 0; i < og.size(); ++i) {
      if (xv2[i] > S(0)) dx[i] += og[i];
    }
  };
  return g.add_node(OpKind::kRelu, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// linear: y = W x + b. A rank-1 input of length N gives a rank-1 output of
// length M; a rank-2 input B x N is mapped row-wise to B x M.
// ---------------------------------------------------------------------------
template <typename S>
int linear(Graph<S>& g, int x, int w, int b) {
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& wv = g.value(w);
  const Tensor<S>& bv = g.value(b);
  detail::check(wv.rank() == 2, "linear: weight must be rank 2, got " + shape_str(wv.shape()));
  detail::check(xv.rank() == 1 || xv.rank() == 2,
                "linear: input must be rank 1 or 2, got " + shape_str(xv.shape()));
  const int M = wv.dim(0), N = wv.dim(1);
  const bool batched = xv.rank() == 2;
  const int B = batched ? xv.dim(0) : 1;
  const int xn = batched ? xv.dim(1) : xv.dim(0);
  if (xn != N) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " does not match weight " +
                     shape_str(wv.shape()));
  }
  detail::check(bv.rank() == 1 && bv.dim(0) == M,
                "linear: bias " + shape_str(bv.shape()) + " does not match weight " +
                    shape_str(wv.shape()));

  Tensor<S> out(batched ? std::vector<int>{B, M} : std::vector<int>{M});
  {
    ConstMatMap<S> xm(xv.data(), B, N);
    ConstMatMap<S> wm(wv.data(), M, N);
    MatMap<S> ym(out.data(), B, M);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < M; ++j) ym(i, j) += bv[j];
    }
  }
  auto fn = [x, w, b, B, M, N](Graph<S>& gr, const Tensor<S>& og,
                               std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    const Tensor<S>& wv2 = gr.value(w);
    ConstMatMap<S> dy(og.data(), B, M);
    ConstMatMap<S> xm(xv2.data(), B, N);
    ConstMatMap<S> wm(wv2.data(), M, N);

    Tensor<S>& dxt = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    MatMap<S> dx(dxt.data(), B, N);
    dx.noalias() += dy * wm;

    Tensor<S>& dwt = Graph<S>::sweep_slot(sweep, w, wv2.shape());
    MatMap<S> dw(dwt.data(), M, N);
    dw.noalias() += dy.transpose() * xm;

    Tensor<S>& dbt = Graph<S>::sweep_slot(sweep, b, {M});
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < M; ++j) dbt[j] += dy(i, j);
    }
  };
  return g.add_node(OpKind::kLinear, {x, w, b}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// batchnorm over a CHW tensor: per-channel normalization across spatial
// positions. Train mode uses batch statistics and folds them into the running
// buffers (running = momentum * running + (1-momentum) * batch); infer mode
// reads the running buffers.
// ---------------------------------------------------------------------------
enum class BnMode { kTrain, kInfer };

template <typename S>
int batchnorm(Graph<S>& g, int x, int gamma, int beta, Tensor<S>* run_mean,
              Tensor<S>* run_var, BnMode mode, double epsilon, double momentum) {
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& gv = g.value(gamma);
  const Tensor<S>& bv = g.value(beta);
  detail::check(xv.rank() == 3, "batchnorm: input must be CHW, got " + shape_str(xv.shape()));
  const int C = xv.dim(0);
  const long N = static_cast<long>(xv.dim(1)) * xv.dim(2);
  detail::check(gv.rank() == 1 && gv.dim(0) == C && bv.rank() == 1 && bv.dim(0) == C,
                "batchnorm: gamma/beta must have length " + std::to_string(C));
  if (run_mean == nullptr || run_var == nullptr) {
    throw ContractError("batchnorm: running statistics buffers are required");
  }

  auto mean = std::make_shared<std::vector<S>>(C);
  auto ivar = std::make_shared<std::vector<S>>(C);
  const S* xd = xv.data();
  if (mode == BnMode::kTrain) {
    for (int c = 0; c < C; ++c) {
      const S* ch = xd + static_cast<long>(c) * N;
      S m = 0;
      for (long i = 0; i < N; ++i) m += ch[i];
      m /= static_cast<S>(N);
      S v = 0;
      for (long i = 0; i < N; ++i) {
        const S d = ch[i] - m;
        v += d * d;
      }
      v /= static_cast<S>(N);
      (*mean)[c] = m;
      (*ivar)[c] = S(1) / std::sqrt(v + static_cast<S>(epsilon));
      (*run_mean)[c] = static_cast<S>(momentum) * (*run_mean)[c] +
                       (S(1) - static_cast<S>(momentum)) * m;
      (*run_var)[c] = static_cast<S>(momentum) * (*run_var)[c] +
                      (S(1) - static_cast<S>(momentum)) * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = (*run_mean)[c];
      (*ivar)[c] = S(1) / std::sqrt((*run_var)[c] + static_cast<S>(epsilon));
    }
  }

  Tensor<S> out(xv.shape());
  for (int c = 0; c < C; ++c) {
    const S* ch = xd + static_cast<long>(c) * N;
    S* oc = out.data() + static_cast<long>(c) * N;
    const S m = (*mean)[c], iv = (*ivar)[c], ga = gv[c], be = bv[c];
    for (long i = 0; i < N; ++i) oc[i] = ga * (ch[i] - m) * iv + be;
  }

  const bool train = mode == BnMode::kTrain;
  auto fn = [x, gamma, beta, mean, ivar, C, N, train](Graph<S>& gr, const Tensor<S>& og,
                                                      std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    const Tensor<S>& gv2 = gr.value(gamma);
    Tensor<S>& dxt = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    Tensor<S>& dgt = Graph<S>::sweep_slot(sweep, gamma, {C});
    Tensor<S>& dbt = Graph<S>::sweep_slot(sweep, beta, {C});
    const S* xd2 = xv2.data();
    for (int c = 0; c < C; ++c) {
      const S* ch = xd2 + static_cast<long>(c) * N;
      const S* dy = og.data() + static_cast<long>(c) * N;
      S* dx = dxt.data() + static_cast<long>(c) * N;
      const S m = (*mean)[c], iv = (*ivar)[c], ga = gv2[c];
      S sum_dy = 0, sum_dy_xhat = 0;
      for (long i = 0; i < N; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (ch[i] - m) * iv;
      }
      dbt[c] += sum_dy;
      dgt[c] += sum_dy_xhat;
      if (train) {
        // Batch statistics depend on x: full backward through mean/var.
        const S scale = ga * iv / static_cast<S>(N);
        for (long i = 0; i < N; ++i) {
          const S xhat = (ch[i] - m) * iv;
          dx[i] += scale * (static_cast<S>(N) * dy[i] - sum_dy - xhat * sum_dy_xhat);
        }
      } else {
        const S scale = ga * iv;
        for (long i = 0; i < N; ++i) dx[i] += scale * dy[i];
      }
    }
  };
  return g.add_node(OpKind::kBatchNorm, {x, gamma, beta}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// resample_bilinear: bilinear interpolation with the align-corners-false
// convention; source coordinate (i + 0.5) * in/out - 0.5, clamped. Resampling
// to the same size is a bit-exact identity.
// ---------------------------------------------------------------------------
template <typename S>
int resample_bilinear(Graph<S>& g, int x, int out_h, int out_w) {
  const Tensor<S>& xv = g.value(x);
  detail::check(xv.rank() == 3,
                "resample_bilinear: input must be CHW, got " + shape_str(xv.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeError("resample_bilinear: output dims must be >= 1");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);

  struct Tap {
    int lo;
    int hi;
    S frac;
  };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      double src = (i + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      taps[static_cast<size_t>(i)] = {lo, std::min(lo + 1, in - 1),
                                      static_cast<S>(src - lo)};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(make_taps(H, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(make_taps(W, out_w));

  Tensor<S> out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[static_cast<size_t>(ox)];
        const S v00 = xv.at(c, a.lo, b.lo), v01 = xv.at(c, a.lo, b.hi);
        const S v10 = xv.at(c, a.hi, b.lo), v11 = xv.at(c, a.hi, b.hi);
        const S top = v00 + (v01 - v00) * b.frac;
        const S bot = v10 + (v11 - v10) * b.frac;
        out.at(c, oy, ox) = top + (bot - top) * a.frac;
      }
    }
  }
  auto fn = [x, ty, tx, C, H, W, out_h, out_w](Graph<S>& gr, const Tensor<S>& og,
                                               std::vector<Tensor<S>>& sweep) {
    (void)gr;
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, {C, H, W});
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[static_cast<size_t>(ox)];
          const S gv = og.at(c, oy, ox);
          dx.at(c, a.lo, b.lo) += gv * (S(1) - a.frac) * (S(1) - b.frac);
          dx.at(c, a.lo, b.hi) += gv * (S(1) - a.frac) * b.frac;
          dx.at(c, a.hi, b.lo) += gv * a.frac * (S(1) - b.frac);
          dx.at(c, a.hi, b.hi) += gv * a.frac * b.frac;
        }
      }
    }
  };
  return g.add_node(OpKind::kResampleBilinear, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// concat_channels: channel-axis concatenation of CHW tensors with equal
// spatial dims, in argument order.
// ---------------------------------------------------------------------------
template <typename S>
int concat_channels(Graph<S>& g, const std::vector<int>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: needs at least one input");
  const Tensor<S>& first = g.value(xs[0]);
  detail::check(first.rank() == 3,
                "concat_channels: inputs must be CHW, got " + shape_str(first.shape()));
  const int H = first.dim(1), W = first.dim(2);
  int total_c = 0;
  for (int id : xs) {
    const Tensor<S>& t = g.value(id);
    if (t.rank() != 3 || t.dim(1) != H || t.dim(2) != W) {
      throw ShapeError("concat_channels: spatial mismatch between " +
                       shape_str(first.shape()) + " and " + shape_str(t.shape()));
    }
    total_c += t.dim(0);
  }
  Tensor<S> out({total_c, H, W});
  long off = 0;
  for (int id : xs) {
    const Tensor<S>& t = g.value(id);
    std::copy(t.data(), t.data() + t.size(), out.data() + off);
    off += t.size();
  }
  auto inputs = xs;
  auto fn = [inputs](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    long off2 = 0;
    for (int id : inputs) {
      const Tensor<S>& t = gr.value(id);
      Tensor<S>& dx = Graph<S>::sweep_slot(sweep, id, t.shape());
      for (long i = 0; i < t.size(); ++i) dx[i] += og[off2 + i];
      off2 += t.size();
    }
  };
  return g.add_node(OpKind::kConcatChannels, xs, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// ROI max-pooling. The box (image pixels) is mapped onto the feature grid by
// dividing by `stride`, rounding outward (floor start / ceil end) and clamping
// to the feature bounds, then split into out_h x out_w bins of equal
// fractional span; each bin emits the max over the cells it covers. A bin
// left empty by clamping emits 0 and routes no gradient.
// ---------------------------------------------------------------------------
namespace detail {

template <typename S>
void roi_pool_one(const Tensor<S>& feat, const Box& box, double stride, int out_h, int out_w,
                  S* out, long* argmax) {
  if (!(box.w > 0) || !(box.h > 0)) {
    throw BoxError("roi_maxpool: degenerate box (w=" + std::to_string(box.w) +
                   ", h=" + std::to_string(box.h) + ")");
  }
  const int C = feat.dim(0), H = feat.dim(1), W = feat.dim(2);
  int x0 = static_cast<int>(std::floor(box.x_min() / stride));
  int x1 = static_cast<int>(std::ceil(box.x_max() / stride));
  int y0 = static_cast<int>(std::floor(box.y_min() / stride));
  int y1 = static_cast<int>(std::ceil(box.y_max() / stride));
  x0 = std::clamp(x0, 0, W - 1);
  x1 = std::clamp(x1, x0 + 1, W);
  y0 = std::clamp(y0, 0, H - 1);
  y1 = std::clamp(y1, y0 + 1, H);
  const double rw = x1 - x0;
  const double rh = y1 - y0;

  const S* fd = feat.data();
  long oi = 0;
  for (int c = 0; c < C; ++c) {
    const S* ch = fd + static_cast<long>(c) * H * W;
    for (int by = 0; by < out_h; ++by) {
      int rs = y0 + static_cast<int>(std::floor(by * rh / out_h));
      int re = y0 + static_cast<int>(std::ceil((by + 1) * rh / out_h));
      rs = std::clamp(rs, y0, y1);
      re = std::clamp(re, y0, y1);
      for (int bx = 0; bx < out_w; ++bx, ++oi) {
        int cs = x0 + static_cast<int>(std::floor(bx * rw / out_w));
        int ce = x0 + static_cast<int>(std::ceil((bx + 1) * rw / out_w));
        cs = std::clamp(cs, x0, x1);
        ce = std::clamp(ce, x0, x1);
        S best{};
        long best_idx = -1;
        for (int yy = rs; yy < re; ++yy) {
          for (int xx = cs; xx < ce; ++xx) {
            const long idx = static_cast<long>(yy) * W + xx;
            if (best_idx < 0 || ch[idx] > best) {
              best = ch[idx];
              best_idx = static_cast<long>(c) * H * W + idx;
            }
          }
        }
        out[oi] = best_idx < 0 ? S(0) : best;
        argmax[oi] = best_idx;
      }
    }
  }
}

}  // namespace detail

template <typename S>
int roi_maxpool_batch(Graph<S>& g, int feature, const std::vector<Box>& boxes, double stride,
                      int out_h = 14, int out_w = 14) {
  const Tensor<S>& fv = g.value(feature);
  detail::check(fv.rank() == 3,
                "roi_maxpool: feature must be CHW, got " + shape_str(fv.shape()));
  if (boxes.empty()) throw ContractError("roi_maxpool_batch: empty box list");
  const int N = static_cast<int>(boxes.size());
  const int C = fv.dim(0);
  Tensor<S> out({N, C, out_h, out_w});
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  const long per = static_cast<long>(C) * out_h * out_w;
  for (int n = 0; n < N; ++n) {
    detail::roi_pool_one(fv, boxes[static_cast<size_t>(n)], stride, out_h, out_w,
                         out.data() + n * per, argmax->data() + n * per);
  }
  auto fn = [feature, argmax](Graph<S>& gr, const Tensor<S>& og,
                              std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& fv2 = gr.value(feature);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, feature, fv2.shape());
    for (long i = 0; i < og.size(); ++i) {
      const long idx = (*argmax)[i];
      if (idx >= 0) dx[idx] += og[i];
    }
  };
  return g.add_node(OpKind::kRoiMaxPool, {feature}, std::move(out), std::move(fn));
}

template <typename S>
int roi_maxpool(Graph<S>& g, int feature, const Box& box, double stride, int out_h = 14,
                int out_w = 14) {
  const Tensor<S>& fv = g.value(feature);
  detail::check(fv.rank() == 3,
                "roi_maxpool: feature must be CHW, got " + shape_str(fv.shape()));
  const int C = fv.dim(0);
  Tensor<S> out({C, out_h, out_w});
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  detail::roi_pool_one(fv, box, stride, out_h, out_w, out.data(), argmax->data());
  auto fn = [feature, argmax](Graph<S>& gr, const Tensor<S>& og,
                              std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& fv2 = gr.value(feature);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, feature, fv2.shape());
    for (long i = 0; i < og.size(); ++i) {
      const long idx = (*argmax)[i];
      if (idx >= 0) dx[idx] += og[i];
    }
  };
  return g.add_node(OpKind::kRoiMaxPool, {feature}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// logistic: elementwise 1/(1+e^-x), computed without overflow for large |x|.
// ---------------------------------------------------------------------------
template <typename S>
int logistic(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  auto y = std::make_shared<std::vector<S>>(static_cast<size_t>(xv.size()));
  Tensor<S> out(xv.shape());
  for (long i = 0; i < xv.size(); ++i) {
    const S v = detail::stable_sigmoid(xv[i]);
    (*y)[static_cast<size_t>(i)] = v;
    out[i] = v;
  }
  auto fn = [x, y](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (long i = 0; i < og.size(); ++i) {
      const S v = (*y)[static_cast<size_t>(i)];
      dx[i] += og[i] * v * (S(1) - v);
    }
  };
  return g.add_node(OpKind::kLogistic, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// reshape: same elements, new shape.
// ---------------------------------------------------------------------------
template <typename S>
int reshape(Graph<S>& g, int x, std::vector<int> shape) {
  Tensor<S> out = g.value(x).reshaped(shape);
  auto fn = [x](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv.shape());
    for (long i = 0; i < og.size(); ++i) dx[i] += og[i];
  };
  return g.add_node(OpKind::kReshape, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// gather_rows: selects rows (leading-axis slices) by index, in order; indices
// may repeat. Backward scatter-adds into the selected rows.
// ---------------------------------------------------------------------------
template <typename S>
int gather_rows(Graph<S>& g, int x, std::vector<int> idx) {
  const Tensor<S>& xv = g.value(x);
  const int rows = xv.dim(0);
  const long row_size = xv.size() / rows;
  if (idx.empty()) throw ContractError("gather_rows: empty index list");
  for (int i : idx) {
    if (i < 0 || i >= rows) throw ContractError("gather_rows: index out of range");
  }
  std::vector<int> out_shape = xv.shape();
  out_shape[0] = static_cast<int>(idx.size());
  Tensor<S> out(out_shape);
  for (size_t k = 0; k < idx.size(); ++k) {
    std::copy(xv.data() + idx[k] * row_size, xv.data() + (idx[k] + 1) * row_size,
              out.data() + static_cast<long>(k) * row_size);
  }
  auto shared_idx = std::make_shared<std::vector<int>>(std::move(idx));
  auto fn = [x, shared_idx, row_size](Graph<S>& gr, const Tensor<S>& og,
                                      std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (size_t k = 0; k < shared_idx->size(); ++k) {
      const long dst = static_cast<long>((*shared_idx)[k]) * row_size;
      const long src = static_cast<long>(k) * row_size;
      for (long i = 0; i < row_size; ++i) dx[dst + i] += og[src + i];
    }
  };
  return g.add_node(OpKind::kGatherRows, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// concat_cols: [N x A], [N x B] -> [N x (A+B)].
// ---------------------------------------------------------------------------
template <typename S>
int concat_cols(Graph<S>& g, int a, int b) {
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  detail::check(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0),
                "concat_cols: row mismatch between " + shape_str(av.shape()) + " and " +
                    shape_str(bv.shape()));
  const int N = av.dim(0), A = av.dim(1), B = bv.dim(1);
  Tensor<S> out({N, A + B});
  for (int i = 0; i < N; ++i) {
    std::copy(av.data() + static_cast<long>(i) * A, av.data() + static_cast<long>(i + 1) * A,
              out.data() + static_cast<long>(i) * (A + B));
    std::copy(bv.data() + static_cast<long>(i) * B, bv.data() + static_cast<long>(i + 1) * B,
              out.data() + static_cast<long>(i) * (A + B) + A);
  }
  auto fn = [a, b, N, A, B](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    (void)gr;
    Tensor<S>& da = Graph<S>::sweep_slot(sweep, a, {N, A});
    Tensor<S>& db = Graph<S>::sweep_slot(sweep, b, {N, B});
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < A; ++j) da[static_cast<long>(i) * A + j] += og[static_cast<long>(i) * (A + B) + j];
      for (int j = 0; j < B; ++j) db[static_cast<long>(i) * B + j] += og[static_cast<long>(i) * (A + B) + A + j];
    }
  };
  return g.add_node(OpKind::kConcatCols, {a, b}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// slice_cols: [N x D] -> [N x (c1-c0)].
// ---------------------------------------------------------------------------
template <typename S>
int slice_cols(Graph<S>& g, int x, int c0, int c1) {
  const Tensor<S>& xv = g.value(x);
  detail::check(xv.rank() == 2, "slice_cols: input must be rank 2, got " + shape_str(xv.shape()));
  const int N = xv.dim(0), D = xv.dim(1);
  if (c0 < 0 || c1 <= c0 || c1 > D) throw ContractError("slice_cols: bad column range");
  const int M = c1 - c0;
  Tensor<S> out({N, M});
  for (int i = 0; i < N; ++i) {
    std::copy(xv.data() + static_cast<long>(i) * D + c0, xv.data() + static_cast<long>(i) * D + c1,
              out.data() + static_cast<long>(i) * M);
  }
  auto fn = [x, N, D, c0, M](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < M; ++j) {
        dx[static_cast<long>(i) * D + c0 + j] += og[static_cast<long>(i) * M + j];
      }
    }
  };
  return g.add_node(OpKind::kSliceCols, {x}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// bce_with_logits: per-sample binary log loss on raw logits. Algebraically
// -log(s) for label 1 and -log(1-s) for label 0 with s = logistic(z), but
// evaluated through softplus so saturated scores stay finite and keep a
// usable gradient.
// ---------------------------------------------------------------------------
template <typename S>
int bce_with_logits(Graph<S>& g, int logits, std::vector<uint8_t> labels) {
  const Tensor<S>& zv = g.value(logits);
  const long n = zv.size();
  if (static_cast<long>(labels.size()) != n) {
    throw ShapeError("bce_with_logits: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(zv.shape()) + " logits");
  }
  Tensor<S> out({static_cast<int>(n)});
  for (long i = 0; i < n; ++i) {
    const S z = zv[i];
    out[i] = labels[static_cast<size_t>(i)] ? detail::softplus(-z) : detail::softplus(z);
  }
  auto shared_labels = std::make_shared<std::vector<uint8_t>>(std::move(labels));
  auto fn = [logits, shared_labels](Graph<S>& gr, const Tensor<S>& og,
                                    std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& zv2 = gr.value(logits);
    Tensor<S>& dz = Graph<S>::sweep_slot(sweep, logits, zv2.shape());
    for (long i = 0; i < og.size(); ++i) {
      const S s = detail::stable_sigmoid(zv2[i]);
      const S y = (*shared_labels)[static_cast<size_t>(i)] ? S(1) : S(0);
      dz[i] += og[i] * (s - y);
    }
  };
  return g.add_node(OpKind::kBceWithLogits, {logits}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// smooth_l1_loss: mean over rows of the summed smooth-L1 of (pred - target).
// Targets are constants.
// ---------------------------------------------------------------------------
template <typename S>
int smooth_l1_loss(Graph<S>& g, int pred, Tensor<S> target) {
  const Tensor<S>& pv = g.value(pred);
  if (!pv.same_shape(target)) {
    throw ShapeError("smooth_l1_loss: pred " + shape_str(pv.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const long rows = pv.dim(0);
  S total = 0;
  for (long i = 0; i < pv.size(); ++i) total += detail::smooth_l1_value(pv[i] - target[i]);
  Tensor<S> out({1}, total / static_cast<S>(rows));
  auto shared_target = std::make_shared<Tensor<S>>(std::move(target));
  auto fn = [pred, shared_target, rows](Graph<S>& gr, const Tensor<S>& og,
                                        std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& pv2 = gr.value(pred);
    Tensor<S>& dp = Graph<S>::sweep_slot(sweep, pred, pv2.shape());
    const S scale = og[0] / static_cast<S>(rows);
    for (long i = 0; i < pv2.size(); ++i) {
      dp[i] += scale * detail::smooth_l1_slope(pv2[i] - (*shared_target)[i]);
    }
  };
  return g.add_node(OpKind::kSmoothL1Loss, {pred}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Reductions and scalar plumbing.
// ---------------------------------------------------------------------------
template <typename S>
int mean(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  S total = 0;
  for (long i = 0; i < xv.size(); ++i) total += xv[i];
  Tensor<S> out({1}, total / static_cast<S>(xv.size()));
  auto fn = [x](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    const S v = og[0] / static_cast<S>(xv2.size());
    for (long i = 0; i < dx.size(); ++i) dx[i] += v;
  };
  return g.add_node(OpKind::kMean, {x}, std::move(out), std::move(fn));
}

template <typename S>
int sum(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  S total = 0;
  for (long i = 0; i < xv.size(); ++i) total += xv[i];
  Tensor<S> out({1}, total);
  auto fn = [x](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (long i = 0; i < dx.size(); ++i) dx[i] += og[0];
  };
  return g.add_node(OpKind::kSum, {x}, std::move(out), std::move(fn));
}

template <typename S>
int square(Graph<S>& g, int x) {
  const Tensor<S>& xv = g.value(x);
  Tensor<S> out(xv.shape());
  for (long i = 0; i < xv.size(); ++i) out[i] = xv[i] * xv[i];
  auto fn = [x](Graph<S>& gr, const Tensor<S>& og, std::vector<Tensor<S>>& sweep) {
    const Tensor<S>& xv2 = gr.value(x);
    Tensor<S>& dx = Graph<S>::sweep_slot(sweep, x, xv2.shape());
    for (long i = 0; i < og.size(); ++i) dx[i] += S(2) * xv2[i] * og[i];
  };
  return g.add_node(OpKind::kSquare, {x}, std::move(out), std::move(fn));
}

// Weighted sum of scalar nodes: sum_i coeff[i] * value(xs[i]).
template <typename S>
int affine_combine(Graph<S>& g, std::vector<int> xs, std::vector<S> coeffs) {
  if (xs.size() != coeffs.size() || xs.empty()) {
    throw ContractError("affine_combine: inputs and coefficients must match and be non-empty");
  }
  S total = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const Tensor<S>& v = g.value(xs[i]);
    if (v.size() != 1) throw ShapeError("affine_combine: inputs must be scalar");
    total += coeffs[i] * v[0];
  }
  auto shared_coeffs = std::make_shared<std::vector<S>>(std::move(coeffs));
  auto inputs = xs;
  Tensor<S> out({1}, total);
  auto fn = [inputs, shared_coeffs](Graph<S>& gr, const Tensor<S>& og,
                                    std::vector<Tensor<S>>& sweep) {
    (void)gr;
    for (size_t i = 0; i < inputs.size(); ++i) {
      Tensor<S>& dx = Graph<S>::sweep_slot(sweep, inputs[i], {1});
      dx[0] += og[0] * (*shared_coeffs)[i];
    }
  };
  return g.add_node(OpKind::kAffineCombine, std::move(xs), std::move(out), std::move(fn));
}

}  // namespace evbox
