#include "pgroup/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <string>

namespace pgroup {

void set_gemm_threads(int n) { openblas_set_num_threads(n < 1 ? 1 : n); }

namespace {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
          int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

// Geometry of a strided cross-correlation from a (c, h, w) image to an (oh, ow) map.
struct ConvGeom {
  std::size_t c, h, w, k, oh, ow;
  int stride, pad;

  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return oh * ow; }
  // Output rows per im2col chunk, keeping the column buffer near 4M elements.
  std::size_t rows_per_chunk() const {
    const std::size_t budget = std::size_t(1) << 22;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(1, rows() * ow), 1, oh);
  }
};

// Unfolds output rows [oy0, oy1) of `img` into a (rows, (oy1-oy0)*ow) matrix.
template <class T>
void im2col(const T* img, const ConvGeom& g, std::size_t oy0, std::size_t oy1, T* out) {
  const std::size_t ncols = (oy1 - oy0) * g.ow;
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const T* plane = img + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++r) {
        T* dst = out + r * ncols;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = long(oy) * g.stride - g.pad + long(ki);
          T* row = dst + (oy - oy0) * g.ow;
          if (iy < 0 || iy >= long(g.h)) {
            std::fill(row, row + g.ow, T(0));
            continue;
          }
          const T* src = plane + std::size_t(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = long(ox) * g.stride - g.pad + long(kj);
            row[ox] = (ix < 0 || ix >= long(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds the column matrix back into `img`.
template <class T>
void col2im(const T* cols, const ConvGeom& g, std::size_t oy0, std::size_t oy1, T* img) {
  const std::size_t ncols = (oy1 - oy0) * g.ow;
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    T* plane = img + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++r) {
        const T* src = cols + r * ncols;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = long(oy) * g.stride - g.pad + long(ki);
          if (iy < 0 || iy >= long(g.h)) continue;
          const T* row = src + (oy - oy0) * g.ow;
          T* dst = plane + std::size_t(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = long(ox) * g.stride - g.pad + long(kj);
            if (ix >= 0 && ix < long(g.w)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <class T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t n = out.dim(0), c = out.dim(1), hw = out.dim(2) * out.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (i * c + ch) * hw;
      const T b = bias[ch];
      for (std::size_t j = 0; j < hw; ++j) p[j] += b;
    }
}

template <class T>
void accumulate_bias_grad(Tensor<T>& db, const Tensor<T>& gout) {
  const std::size_t n = gout.dim(0), c = gout.dim(1), hw = gout.dim(2) * gout.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = gout.data() + (i * c + ch) * hw;
      T s = 0;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
      db[ch] += s;
    }
}

std::uint64_t hash_bits(const std::vector<bool>& bits) {
  std::uint64_t h = 1469598103934665603ULL, word = 0;
  std::size_t i = 0;
  for (bool b : bits) {
    word = (word << 1) | std::uint64_t(b);
    if (++i % 64 == 0) {
      h = (h ^ word) * 1099511628211ULL;
      word = 0;
    }
  }
  return (h ^ word ^ bits.size()) * 1099511628211ULL;
}

std::uint64_t hash_indices(const std::vector<std::size_t>& idx) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto v : idx) h = (h ^ v) * 1099511628211ULL;
  return h;
}

void require_rank4(const Shape& s, std::string_view op) {
  require(s.size() == 4, std::string(op) + ": expected (N, C, H, W), got " + shape_string(s));
}

enum class Broadcast { same, channel };

template <class T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) return Broadcast::channel;
  throw ContractError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " against " +
                      shape_string(a.shape()));
}

// Channel index of flat element i in an (N, C, H, W) tensor.
struct ChannelOf {
  std::size_t c, hw;
  explicit ChannelOf(const Shape& s) : c(s.size() == 4 ? s[1] : 1), hw(s.size() == 4 ? s[2] * s[3] : 1) {}
  std::size_t operator()(std::size_t i) const { return (i / hw) % c; }
};

// Accumulates `g` into `v`, summing over (N, H, W) when `v` is a channel vector.
template <class T>
void accumulate_reduced(Tape<T>& tape, const Var<T>& v, const Tensor<T>& g, Broadcast kind) {
  if (kind == Broadcast::same) {
    tape.accumulate(v, g);
    return;
  }
  Tensor<T>* buf = tape.grad_buffer(v);
  if (!buf) return;
  ChannelOf ch(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) (*buf)[ch(i)] += g[i];
}

}  // namespace

template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias, Conv2dOptions opts) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require_rank4(xs, "conv2d");
  require(ws.size() == 4 && ws[2] == ws[3], "conv2d: kernel must be (Cout, Cin, k, k), got " + shape_string(ws));
  require(xs[1] == ws[1], "conv2d: input has " + std::to_string(xs[1]) + " channels, kernel expects " +
                              std::to_string(ws[1]));
  require(opts.stride >= 1, "conv2d: stride must be positive");
  const std::size_t k = ws[2];
  int pad = opts.padding;
  if (pad == kSamePadding) {
    require(k % 2 == 1, "conv2d: same padding needs an odd kernel");
    pad = int(k - 1) / 2;
  }
  require(pad >= 0, "conv2d: negative padding");
  require(xs[2] + 2 * pad >= k && xs[3] + 2 * pad >= k, "conv2d: kernel larger than padded input");
  if (bias) require(bias->shape() == Shape{ws[0]}, "conv2d: bias must have one entry per output channel");

  const ConvGeom g{xs[1], xs[2], xs[3], k, (xs[2] + 2 * pad - k) / opts.stride + 1,
                   (xs[3] + 2 * pad - k) / opts.stride + 1, opts.stride, pad};
  const std::size_t n = xs[0], cout = ws[0], in_sz = g.c * g.h * g.w, out_sz = cout * g.cols();
  const bool pointwise = k == 1 && opts.stride == 1 && pad == 0;

  Tensor<T> out(Shape{n, cout, g.oh, g.ow});
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  std::vector<T> cols;
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = xv.data() + i * in_sz;
    T* oi = out.data() + i * out_sz;
    if (pointwise) {
      gemm(false, false, int(cout), int(g.cols()), int(g.c), T(1), wv.data(), int(g.c), xi, int(g.cols()), T(0), oi,
           int(g.cols()));
      continue;
    }
    const std::size_t step = g.rows_per_chunk();
    for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += step) {
      const std::size_t oy1 = std::min(g.oh, oy0 + step), nc = (oy1 - oy0) * g.ow;
      cols.resize(g.rows() * nc);
      im2col(xi, g, oy0, oy1, cols.data());
      gemm(false, false, int(cout), int(nc), int(g.rows()), T(1), wv.data(), int(g.rows()), cols.data(), int(nc),
           T(0), oi + oy0 * g.ow, int(g.cols()));
    }
  }
  if (bias) add_bias(out, bias->value());

  Tape<T>& tape = *x.tape();
  auto backward = [x, w, bias, g, n, cout, in_sz, out_sz, pointwise](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* dx = t.grad_buffer(x);
    Tensor<T>* dw = t.grad_buffer(w);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(w);
    std::vector<T> cols, dcols;
    for (std::size_t i = 0; i < n; ++i) {
      const T* xi = xv.data() + i * in_sz;
      const T* gi = gout.data() + i * out_sz;
      if (pointwise) {
        if (dw)
          gemm(false, true, int(cout), int(g.c), int(g.cols()), T(1), gi, int(g.cols()), xi, int(g.cols()), T(1),
               dw->data(), int(g.c));
        if (dx)
          gemm(true, false, int(g.c), int(g.cols()), int(cout), T(1), wv.data(), int(g.c), gi, int(g.cols()), T(1),
               dx->data() + i * in_sz, int(g.cols()));
        continue;
      }
      const std::size_t step = g.rows_per_chunk();
      for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += step) {
        const std::size_t oy1 = std::min(g.oh, oy0 + step), nc = (oy1 - oy0) * g.ow;
        if (dw) {
          cols.resize(g.rows() * nc);
          im2col(xi, g, oy0, oy1, cols.data());
          gemm(false, true, int(cout), int(g.rows()), int(nc), T(1), gi + oy0 * g.ow, int(g.cols()), cols.data(),
               int(nc), T(1), dw->data(), int(g.rows()));
        }
        if (dx) {
          dcols.resize(g.rows() * nc);
          gemm(true, false, int(g.rows()), int(nc), int(cout), T(1), wv.data(), int(g.rows()), gi + oy0 * g.ow,
               int(g.cols()), T(0), dcols.data(), int(nc));
          col2im(dcols.data(), g, oy0, oy1, dx->data() + i * in_sz);
        }
      }
    }
    if (bias) {
      if (Tensor<T>* db = t.grad_buffer(*bias)) accumulate_bias_grad(*db, gout);
    }
  };
  if (bias) return tape.record(std::move(out), {x, w, *bias}, backward, "conv2d");
  return tape.record(std::move(out), {x, w}, backward, "conv2d");
}

template <std::floating_point T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias, int stride,
                        int padding) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require_rank4(xs, "conv2d_transpose");
  require(ws.size() == 4 && ws[2] == ws[3],
          "conv2d_transpose: kernel must be (Cin, Cout, k, k), got " + shape_string(ws));
  require(xs[1] == ws[0], "conv2d_transpose: input has " + std::to_string(xs[1]) + " channels, kernel expects " +
                              std::to_string(ws[0]));
  require(stride >= 1 && padding >= 0, "conv2d_transpose: invalid stride/padding");
  const std::size_t k = ws[2];
  const long oh = (long(xs[2]) - 1) * stride - 2 * padding + long(k);
  const long ow = (long(xs[3]) - 1) * stride - 2 * padding + long(k);
  require(oh > 0 && ow > 0, "conv2d_transpose: empty output");
  if (bias) require(bias->shape() == Shape{ws[1]}, "conv2d_transpose: bias must have one entry per output channel");

  // Geometry of the forward conv this op is the adjoint of: (Cout, oh, ow) -> (H, W).
  const ConvGeom g{ws[1], std::size_t(oh), std::size_t(ow), k, xs[2], xs[3], stride, padding};
  const std::size_t n = xs[0], cin = xs[1], in_sz = cin * g.cols(), out_sz = g.c * g.h * g.w;

  Tensor<T> out(Shape{n, g.c, g.h, g.w});
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  std::vector<T> cols;
  const std::size_t step = g.rows_per_chunk();
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = xv.data() + i * in_sz;
    for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += step) {
      const std::size_t oy1 = std::min(g.oh, oy0 + step), nc = (oy1 - oy0) * g.ow;
      cols.resize(g.rows() * nc);
      gemm(true, false, int(g.rows()), int(nc), int(cin), T(1), wv.data(), int(g.rows()), xi + oy0 * g.ow,
           int(g.cols()), T(0), cols.data(), int(nc));
      col2im(cols.data(), g, oy0, oy1, out.data() + i * out_sz);
    }
  }
  if (bias) add_bias(out, bias->value());

  Tape<T>& tape = *x.tape();
  auto backward = [x, w, bias, g, n, cin, in_sz, out_sz, step](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* dx = t.grad_buffer(x);
    Tensor<T>* dw = t.grad_buffer(w);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(w);
    std::vector<T> cols;
    for (std::size_t i = 0; i < n; ++i) {
      const T* gi = gout.data() + i * out_sz;
      const T* xi = xv.data() + i * in_sz;
      for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += step) {
        const std::size_t oy1 = std::min(g.oh, oy0 + step), nc = (oy1 - oy0) * g.ow;
        cols.resize(g.rows() * nc);
        im2col(gi, g, oy0, oy1, cols.data());
        if (dx)
          gemm(false, false, int(cin), int(nc), int(g.rows()), T(1), wv.data(), int(g.rows()), cols.data(), int(nc),
               T(1), dx->data() + i * in_sz + oy0 * g.ow, int(g.cols()));
        if (dw)
          gemm(false, true, int(cin), int(g.rows()), int(nc), T(1), xi + oy0 * g.ow, int(g.cols()), cols.data(),
               int(nc), T(1), dw->data(), int(g.rows()));
      }
    }
    if (bias) {
      if (Tensor<T>* db = t.grad_buffer(*bias)) accumulate_bias_grad(*db, gout);
    }
  };
  if (bias) return tape.record(std::move(out), {x, w, *bias}, backward, "conv2d_transpose");
  return tape.record(std::move(out), {x, w}, backward, "conv2d_transpose");
}

template <std::floating_point T>
Var<T> maxpool2(const Var<T>& x) {
  const auto& xs = x.shape();
  require_rank4(xs, "maxpool2");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3], oh = (h + 1) / 2, ow = (w + 1) / 2;
  require(h > 0 && w > 0, "maxpool2: empty input");
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.value().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t r0 = 2 * i, r1 = std::min(2 * i + 1, h - 1);
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        const std::size_t c0 = 2 * j, c1 = std::min(2 * j + 1, w - 1);
        const std::size_t cand[4] = {base + r0 * w + c0, base + r0 * w + c1, base + r1 * w + c0, base + r1 * w + c1};
        std::size_t best = cand[0];
        for (std::size_t q = 1; q < 4; ++q)
          if (xv[cand[q]] > xv[best]) best = cand[q];
        argmax[o] = best;
        out[o] = xv[best];
      }
    }
  }
  Tape<T>& tape = *x.tape();
  if (tape.track_kinks()) tape.mix_kink(hash_indices(argmax));
  return tape.record(
      std::move(out), {x},
      [x, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[argmax[i]] += g[i];
      },
      "maxpool2");
}

template <std::floating_point T>
Var<T> global_max_pool(const Var<T>& x) {
  const auto& xs = x.shape();
  require_rank4(xs, "global_max_pool");
  const std::size_t planes = xs[0] * xs[1], hw = xs[2] * xs[3];
  require(hw > 0, "global_max_pool: empty input");
  Tensor<T> out(Shape{xs[0], xs[1], 1, 1});
  std::vector<std::size_t> argmax(planes);
  const T* xv = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* begin = xv + p * hw;
    argmax[p] = p * hw + std::size_t(std::max_element(begin, begin + hw) - begin);
    out[p] = xv[argmax[p]];
  }
  Tape<T>& tape = *x.tape();
  if (tape.track_kinks()) tape.mix_kink(hash_indices(argmax));
  return tape.record(
      std::move(out), {x},
      [x, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[argmax[i]] += g[i];
      },
      "global_max_pool");
}

namespace {

template <class T>
void check_bn_operands(const Var<T>& x, const Var<T>& scale, const Var<T>& bias, const BatchNormStats<T>& stats) {
  require_rank4(x.shape(), "batchnorm");
  const Shape cs{x.shape()[1]};
  require(scale.shape() == cs && bias.shape() == cs, "batchnorm: scale/bias must be per-channel vectors");
  require(stats.running_mean.shape() == cs && stats.running_var.shape() == cs,
          "batchnorm: running statistics have the wrong channel count");
  require(x.shape()[0] > 0, "batchnorm: empty batch");
}

}  // namespace

template <std::floating_point T>
Var<T> batchnorm_eval(const Var<T>& x, const Var<T>& scale, const Var<T>& bias, const BatchNormStats<T>& stats,
                      BatchNormOptions opts) {
  check_bn_operands(x, scale, bias, stats);
  const auto& xs = x.shape();
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1 / std::sqrt(double(stats.running_var[ch]) + opts.eta));
  std::vector<T> mu(stats.running_mean.values().begin(), stats.running_mean.values().end());
  Tensor<T> out(xs);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sv = scale.value();
  const Tensor<T>& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      const T a = sv[ch] * inv_std[ch], b = bv[ch] - a * mu[ch];
      for (std::size_t j = 0; j < hw; ++j) out[off + j] = a * xv[off + j] + b;
    }
  return x.tape()->record(
      std::move(out), {x, scale, bias},
      [x, scale, bias, inv_std, mu, n, c, hw](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& sv = t.value(scale);
        Tensor<T>* dx = t.grad_buffer(x);
        Tensor<T>* ds = t.grad_buffer(scale);
        Tensor<T>* db = t.grad_buffer(bias);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              const T gv = g[off + j];
              sum_g += gv;
              sum_gx += gv * (xv[off + j] - mu[ch]) * inv_std[ch];
              if (dx) (*dx)[off + j] += gv * sv[ch] * inv_std[ch];
            }
          }
          if (ds) (*ds)[ch] += sum_gx;
          if (db) (*db)[ch] += sum_g;
        }
      },
      "batchnorm");
}

template <std::floating_point T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& scale, const Var<T>& bias, BatchNormStats<T>& stats, Mode mode,
                 BatchNormOptions opts) {
  if (mode == Mode::eval) return batchnorm_eval(x, scale, bias, stats, opts);
  check_bn_operands(x, scale, bias, stats);
  const auto& xs = x.shape();
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3], count = n * hw;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sv = scale.value();
  const Tensor<T>& bv = bias.value();

  Tensor<T> xhat(xs);
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = xv.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
    }
    const double mu = s / double(count);
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = xv.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) s2 += (p[j] - mu) * (p[j] - mu);
    }
    const double var = s2 / double(count);
    inv_std[ch] = T(1 / std::sqrt(var + opts.eta));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) xhat[off + j] = T((xv[off + j] - mu) * inv_std[ch]);
    }
    const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
    stats.running_mean[ch] = T((1 - opts.momentum) * stats.running_mean[ch] + opts.momentum * mu);
    stats.running_var[ch] = T((1 - opts.momentum) * stats.running_var[ch] + opts.momentum * unbiased);
  }
  Tensor<T> out(xs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) out[off + j] = sv[ch] * xhat[off + j] + bv[ch];
    }
  return x.tape()->record(
      std::move(out), {x, scale, bias},
      [x, scale, bias, xhat = std::move(xhat), inv_std, n, c, hw, count](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& sv = t.value(scale);
        Tensor<T>* dx = t.grad_buffer(x);
        Tensor<T>* ds = t.grad_buffer(scale);
        Tensor<T>* db = t.grad_buffer(bias);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              sum_g += g[off + j];
              sum_gx += double(g[off + j]) * xhat[off + j];
            }
          }
          if (ds) (*ds)[ch] += T(sum_gx);
          if (db) (*db)[ch] += T(sum_g);
          if (!dx) continue;
          // dx = scale * inv_std / m * (m * g - sum(g) - xhat * sum(g * xhat))
          const double k = double(sv[ch]) * inv_std[ch] / double(count);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j)
              (*dx)[off + j] += T(k * (double(count) * g[off + j] - sum_g - xhat[off + j] * sum_gx));
          }
        }
      },
      "batchnorm");
}

namespace {

template <class T>
T logistic(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = logistic(xv[i]);
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x);
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = logistic(xv[i]);
          (*dx)[i] += g[i] * y * (T(1) - y);
        }
      },
      "sigmoid");
}

template <std::floating_point T>
Var<T> relu(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  std::vector<bool> active(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    active[i] = xv[i] > T(0);
    out[i] = active[i] ? xv[i] : T(0);
  }
  Tape<T>& tape = *x.tape();
  if (tape.track_kinks()) tape.mix_kink(hash_bits(active));
  return tape.record(
      std::move(out), {x},
      [x, active = std::move(active)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (active[i]) (*dx)[i] += g[i];
      },
      "relu");
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, "add");
  Tensor<T> out = av;
  ChannelOf ch(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += kind == Broadcast::same ? bv[i] : bv[ch(i)];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, kind](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, g);
        accumulate_reduced(t, b, g, kind);
      },
      "add");
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, "sub");
  Tensor<T> out = av;
  ChannelOf ch(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= kind == Broadcast::same ? bv[i] : bv[ch(i)];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, kind](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, g);
        if (!t.needs_grad(b)) return;
        Tensor<T> neg = g;
        for (auto& v : neg.values()) v = -v;
        accumulate_reduced(t, b, neg, kind);
      },
      "sub");
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, "mul");
  Tensor<T> out = av;
  ChannelOf ch(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kind == Broadcast::same ? bv[i] : bv[ch(i)];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, kind](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(a);
        const Tensor<T>& bv = t.value(b);
        ChannelOf ch(av.shape());
        if (Tensor<T>* da = t.grad_buffer(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * (kind == Broadcast::same ? bv[i] : bv[ch(i)]);
        }
        if (t.needs_grad(b)) {
          Tensor<T> gb = g;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] *= av[i];
          accumulate_reduced(t, b, gb, kind);
        }
      },
      "mul");
}

template <std::floating_point T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return x.tape()->record(
      std::move(out), {x},
      [x, factor](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += factor * g[i];
      },
      "scale");
}

template <std::floating_point T>
Var<T> mix(const Var<T>& gate, const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Tensor<T>& gv = gate.value();
  require(av.shape() == bv.shape(), "mix: operands must have identical shapes, got " + shape_string(av.shape()) +
                                        " and " + shape_string(bv.shape()));
  const Broadcast kind = broadcast_kind(av, gv, "mix");
  ChannelOf ch(av.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T gi = kind == Broadcast::same ? gv[i] : gv[ch(i)];
    out[i] = (T(1) - gi) * av[i] + gi * bv[i];
  }
  return a.tape()->record(
      std::move(out), {gate, a, b},
      [gate, a, b, kind](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(a);
        const Tensor<T>& bv = t.value(b);
        const Tensor<T>& gv = t.value(gate);
        ChannelOf ch(av.shape());
        Tensor<T>* da = t.grad_buffer(a);
        Tensor<T>* db = t.grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T gi = kind == Broadcast::same ? gv[i] : gv[ch(i)];
          if (da) (*da)[i] += g[i] * (T(1) - gi);
          if (db) (*db)[i] += g[i] * gi;
        }
        if (t.needs_grad(gate)) {
          Tensor<T> gg = g;
          for (std::size_t i = 0; i < g.size(); ++i) gg[i] *= bv[i] - av[i];
          accumulate_reduced(t, gate, gg, kind);
        }
      },
      "mix");
}

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (T v : x.value().values()) s += v;
  return x.tape()->record(
      Tensor<T>::scalar(T(s)), {x},
      [x](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (auto& v : dx->values()) v += g[0];
      },
      "sum");
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x) {
  require(x.value().size() > 0, "mean of an empty tensor");
  return scale(sum(x), T(1) / T(x.value().size()));
}

template <std::floating_point T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  require(x.shape() == weights.shape(), "weighted_sum: weight shape mismatch");
  return x.tape()->record(
      Tensor<T>::scalar(T(inner_product(x.value(), weights))), {x},
      [x, weights](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < weights.size(); ++i) (*dx)[i] += g[0] * weights[i];
      },
      "weighted_sum");
}

template <std::floating_point T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets) {
  const Tensor<T>& z = logits.value();
  require(z.size() == targets.size() && z.size() > 0, "bce_with_logits: logits/targets size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = targets[i];
    require(y == 0.0 || y == 1.0, "bce_with_logits: label outside {0, 1}");
    const double v = z[i];
    total += std::max(v, 0.0) - v * y + std::log1p(std::exp(-std::abs(v)));
  }
  const double n = double(z.size());
  return logits.tape()->record(
      Tensor<T>::scalar(T(total / n)), {logits},
      [logits, targets, n](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& z = t.value(logits);
        Tensor<T>* dz = t.grad_buffer(logits);
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double v = z[i];
          const double p = logistic(v);
          (*dz)[i] += T(g[0] * (p - targets[i]) / n);
        }
      },
      "bce_with_logits");
}

#define PGROUP_INSTANTIATE_OPS(T)                                                                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Conv2dOptions);             \
  template Var<T> conv2d_transpose(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, int, int);         \
  template Var<T> maxpool2(const Var<T>&);                                                                        \
  template Var<T> global_max_pool(const Var<T>&);                                                                 \
  template Var<T> batchnorm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, Mode,                \
                            BatchNormOptions);                                                                    \
  template Var<T> batchnorm_eval(const Var<T>&, const Var<T>&, const Var<T>&, const BatchNormStats<T>&,           \
                                 BatchNormOptions);                                                               \
  template Var<T> sigmoid(const Var<T>&);                                                                         \
  template Var<T> relu(const Var<T>&);                                                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> scale(const Var<T>&, T);                                                                        \
  template Var<T> mix(const Var<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> sum(const Var<T>&);                                                                             \
  template Var<T> mean(const Var<T>&);                                                                            \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                                                  \
  template Var<T> bce_with_logits(const Var<T>&, const Tensor<T>&);

PGROUP_INSTANTIATE_OPS(float)
PGROUP_INSTANTIATE_OPS(double)

}  // namespace pgroup
