#include "seg25d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace seg25d {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
void check_not_nan(const Tensor<T>& t, const std::string& what) {
  for (const T v : t.data()) {
    if (std::isnan(v)) throw NumericError("NaN produced by " + what);
  }
}

template void check_not_nan(const Tensor<float>&, const std::string&);
template void check_not_nan(const Tensor<double>&, const std::string&);

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
// Rows of one depth plane inside a [C, D, H, W] buffer.
template <class T>
using PlaneMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CPlaneMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <class T>
using Node = detail::Node<T>;

// Scratch buffers reused across calls on one thread.
template <class T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> bufs[2];
  return bufs[slot];
}

template <class T>
T* scratch_data(int slot, std::size_t n) {
  auto& b = scratch<T>(slot);
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Sequential sum of a block. Eigen's vectorized reductions peel by runtime
// alignment, so their rounding would depend on where buffers happen to live.
template <class M>
typename M::Scalar ordered_sum(const M& m) {
  typename M::Scalar s{0};
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c);
  }
  return s;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

// Geometry of a stride-1 3D convolution; 2D convolutions use depth 1.
struct ConvGeom {
  std::size_t cin, depth, height, width;  // input channels per group + spatial
  std::size_t kd, kh, kw;
  std::size_t pd, ph, pw;
  std::size_t out_d, out_h, out_w;

  std::size_t plane_in() const { return height * width; }
  std::size_t plane_out() const { return out_h * out_w; }
  std::size_t col_rows() const { return cin * kd * kh * kw; }
};

// Valid output range [lo, hi) for a kernel tap at `offset - pad` along an
// axis of length `in` producing `out` positions.
inline void tap_range(std::size_t tap, std::size_t pad, std::size_t in,
                      std::size_t out, std::size_t& lo, std::size_t& hi) {
  // input index = o + tap - pad must lie in [0, in)
  lo = pad > tap ? pad - tap : 0;
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(in) +
                           static_cast<std::ptrdiff_t>(pad) -
                           static_cast<std::ptrdiff_t>(tap);
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(h, 0, out));
  if (hi < lo) hi = lo;
}

// Gathers the receptive fields of output plane `od` into col
// [cin*kd*kh*kw, out_h*out_w]. `x` points at the group's first channel.
template <class T>
void im2col_plane(const T* x, const ConvGeom& g, std::size_t od, T* col) {
  const std::size_t po = g.plane_out();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(od + kz) -
                                static_cast<std::ptrdiff_t>(g.pd);
      const bool z_ok = iz >= 0 && iz < static_cast<std::ptrdiff_t>(g.depth);
      const T* src_plane =
          z_ok ? x + (c * g.depth + static_cast<std::size_t>(iz)) * g.plane_in()
               : nullptr;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        std::size_t ylo, yhi;
        tap_range(ky, g.ph, g.height, g.out_h, ylo, yhi);
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          T* dst = col + row * po;
          if (!z_ok) {
            std::fill(dst, dst + po, T{0});
            continue;
          }
          std::size_t xlo, xhi;
          tap_range(kx, g.pw, g.width, g.out_w, xlo, xhi);
          std::fill(dst, dst + ylo * g.out_w, T{0});
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            T* d = dst + oy * g.out_w;
            const T* s = src_plane + (oy + ky - g.ph) * g.width;
            std::fill(d, d + xlo, T{0});
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = s[ox + kx - g.pw];
            std::fill(d + xhi, d + g.out_w, T{0});
          }
          std::fill(dst + yhi * g.out_w, dst + po, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col_plane: scatters col back into dx.
template <class T>
void col2im_plane(const T* col, const ConvGeom& g, std::size_t od, T* dx) {
  const std::size_t po = g.plane_out();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(od + kz) -
                                static_cast<std::ptrdiff_t>(g.pd);
      if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.depth)) {
        row += g.kh * g.kw;
        continue;
      }
      T* dst_plane = dx + (c * g.depth + static_cast<std::size_t>(iz)) * g.plane_in();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        std::size_t ylo, yhi;
        tap_range(ky, g.ph, g.height, g.out_h, ylo, yhi);
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          const T* src = col + row * po;
          std::size_t xlo, xhi;
          tap_range(kx, g.pw, g.width, g.out_w, xlo, xhi);
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const T* s = src + oy * g.out_w;
            T* d = dst_plane + (oy + ky - g.ph) * g.width;
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox + kx - g.pw] += s[ox];
          }
        }
      }
    }
  }
}

// Grouped stride-1 convolution over [C, D, H, W]. Weights are
// [C_out, C_in / groups, kd, kh, kw].
template <class T>
void conv_forward(const T* x, const T* w, const T* b, const ConvGeom& g,
                  std::size_t cout, std::size_t groups, T* out) {
  const std::size_t cout_g = cout / groups;
  const std::size_t rows = g.col_rows();
  const std::size_t po = g.plane_out();
  const bool direct = rows == g.cin && g.kd == 1 && g.kh == 1 && g.kw == 1 &&
                      g.depth == 1;
  T* col = direct ? nullptr : scratch_data<T>(0, rows * po);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const T* xg = x + grp * g.cin * g.depth * g.plane_in();
    CMapR<T> wm(w + grp * cout_g * rows, cout_g, rows);
    for (std::size_t od = 0; od < g.out_d; ++od) {
      const T* cp = xg;
      if (!direct) {
        im2col_plane(xg, g, od, col);
        cp = col;
      }
      PlaneMap<T> dst(out + (grp * cout_g * g.out_d + od) * po, cout_g, po,
                      Eigen::OuterStride<>(g.out_d * po));
      dst.noalias() = wm * CMapR<T>(cp, rows, po);
      for (std::size_t o = 0; o < cout_g; ++o) {
        dst.row(o).array() += b[grp * cout_g + o];
      }
    }
  }
}

template <class T>
void conv_backward(const T* x, const T* w, const T* gout, const ConvGeom& g,
                   std::size_t cout, std::size_t groups, T* dx, T* dw, T* db) {
  const std::size_t cout_g = cout / groups;
  const std::size_t rows = g.col_rows();
  const std::size_t po = g.plane_out();
  const bool direct = rows == g.cin && g.kd == 1 && g.kh == 1 && g.kw == 1 &&
                      g.depth == 1;
  T* col = (!direct && dw) ? scratch_data<T>(0, rows * po) : nullptr;
  T* dcol = (!direct && dx) ? scratch_data<T>(1, rows * po) : nullptr;
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const T* xg = x + grp * g.cin * g.depth * g.plane_in();
    CMapR<T> wm(w + grp * cout_g * rows, cout_g, rows);
    for (std::size_t od = 0; od < g.out_d; ++od) {
      CPlaneMap<T> gplane(gout + (grp * cout_g * g.out_d + od) * po, cout_g, po,
                          Eigen::OuterStride<>(g.out_d * po));
      if (db) {
        for (std::size_t o = 0; o < cout_g; ++o) db[grp * cout_g + o] += ordered_sum(gplane.row(o));
      }
      if (dw) {
        const T* cp = xg;
        if (!direct) {
          im2col_plane(xg, g, od, col);
          cp = col;
        }
        MapR<T> dwm(dw + grp * cout_g * rows, cout_g, rows);
        dwm.noalias() += gplane * CMapR<T>(cp, rows, po).transpose();
      }
      if (dx) {
        T* dxg = dx + grp * g.cin * g.depth * g.plane_in();
        if (direct) {
          MapR<T>(dxg, rows, po).noalias() += wm.transpose() * gplane;
        } else {
          MapR<T>(dcol, rows, po).noalias() = wm.transpose() * gplane;
          col2im_plane(dcol, g, od, dxg);
        }
      }
    }
  }
}

template <class T>
Var<T> conv_op(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias,
               const ConvGeom& g, std::size_t cout, std::size_t groups,
               Shape out_shape, const char* name) {
  Tensor<T> out(std::move(out_shape));
  conv_forward(input.value().raw(), kernels.value().raw(), bias.value().raw(),
               g, cout, groups, out.raw());
  check_not_nan(out, name);
  return Var<T>::make(
      std::move(out), {input, kernels, bias}, [g, cout, groups](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        conv_backward(px.value.raw(), pw.value.raw(), self.grad.raw(), g, cout,
                      groups, px.requires_grad ? px.grad_buffer().raw() : nullptr,
                      pw.requires_grad ? pw.grad_buffer().raw() : nullptr,
                      pb.requires_grad ? pb.grad_buffer().raw() : nullptr);
      });
}

template <class T>
Var<T> elementwise(const Var<T>& a, Tensor<T> out, const char* name,
                   std::function<void(Node<T>&)> fn) {
  check_not_nan(out, name);
  return Var<T>::make(std::move(out), {a}, std::move(fn));
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias) {
  const auto& x = input.value().shape();
  const auto& w = kernels.value().shape();
  require(x.size() == 3, "conv2d input must be [C,H,W], got " + shape_str(x));
  require(w.size() == 4 && w[1] == x[0] && w[2] == w[3],
          "conv2d kernels " + shape_str(w) + " do not fit input " + shape_str(x));
  require(bias.value().shape() == Shape{w[0]},
          "conv2d bias must be [" + std::to_string(w[0]) + "]");
  const std::size_t k = w[2];
  if (k != 3 && k != 1) {
    throw ConfigError("conv2d supports 3x3 (pad 1) and 1x1 kernels, got " +
                      std::to_string(k) + "x" + std::to_string(k));
  }
  const std::size_t pad = k / 2;
  ConvGeom g{x[0], 1, x[1], x[2], 1, k, k, 0, pad, pad, 1, x[1], x[2]};
  return conv_op(input, kernels, bias, g, w[0], 1, Shape{w[0], x[1], x[2]},
                 "conv2d");
}

template <class T>
Var<T> conv3d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias,
              std::size_t groups) {
  const auto& x = input.value().shape();
  const auto& w = kernels.value().shape();
  require(x.size() == 4, "conv3d input must be [C,D,H,W], got " + shape_str(x));
  require(w.size() == 5, "conv3d kernels must be rank 5, got " + shape_str(w));
  if (groups == 0 || x[0] % groups != 0 || w[0] % groups != 0) {
    throw ConfigError("conv3d groups " + std::to_string(groups) +
                      " must divide input and output channels");
  }
  require(w[1] * groups == x[0], "conv3d kernels " + shape_str(w) +
                                     " do not fit input " + shape_str(x));
  require(bias.value().shape() == Shape{w[0]},
          "conv3d bias must be [" + std::to_string(w[0]) + "]");
  std::size_t pad = 0;
  if (w[2] == 3 && w[3] == 3 && w[4] == 3) {
    pad = 1;
  } else if (w[2] == 2 && w[3] == 1 && w[4] == 1) {
    pad = 0;
  } else {
    throw ConfigError("conv3d supports 3x3x3 (pad 1) and 2x1x1 (pad 0) kernels, got " +
                      shape_str(Shape(w.begin() + 2, w.end())));
  }
  require(x[1] + 2 * pad >= w[2], "conv3d depth too small for kernel");
  const std::size_t od = x[1] + 2 * pad - w[2] + 1;
  ConvGeom g{w[1], x[1], x[2], x[3], w[2], w[3], w[4], pad, pad, pad, od, x[2], x[3]};
  return conv_op(input, kernels, bias, g, w[0], groups,
                 Shape{w[0], od, x[2], x[3]}, "conv3d");
}

template <class T>
Var<T> avg_pool2(const Var<T>& input) {
  const auto& s = input.value().shape();
  require(s.size() == 3, "avg_pool2 input must be [C,H,W], got " + shape_str(s));
  if (s[1] % 2 != 0 || s[2] % 2 != 0) {
    throw DimensionError("avg_pool2 needs even spatial dims, got " + shape_str(s));
  }
  const std::size_t C = s[0], H = s[1], W = s[2], Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{C, Ho, Wo});
  const T* x = input.value().raw();
  T* y = out.raw();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < Ho; ++i) {
      const T* r0 = x + (c * H + 2 * i) * W;
      const T* r1 = r0 + W;
      T* d = y + (c * Ho + i) * Wo;
      for (std::size_t j = 0; j < Wo; ++j) {
        d[j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
      }
    }
  }
  return elementwise<T>(input, std::move(out), "avg_pool2", [C, H, W](Node<T>& self) {
    auto& p = *self.parents[0];
    T* dx = p.grad_buffer().raw();
    const T* g = self.grad.raw();
    const std::size_t Ho = H / 2, Wo = W / 2;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < Ho; ++i) {
        T* r0 = dx + (c * H + 2 * i) * W;
        T* r1 = r0 + W;
        const T* gr = g + (c * Ho + i) * Wo;
        for (std::size_t j = 0; j < Wo; ++j) {
          const T v = gr[j] * T(0.25);
          r0[2 * j] += v;
          r0[2 * j + 1] += v;
          r1[2 * j] += v;
          r1[2 * j + 1] += v;
        }
      }
    }
  });
}

template <class T>
Var<T> deconv2(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias) {
  const auto& s = input.value().shape();
  const auto& w = kernels.value().shape();
  require(s.size() == 3, "deconv2 input must be [C,H,W], got " + shape_str(s));
  require(w.size() == 4 && w[0] == s[0] && w[2] == 2 && w[3] == 2,
          "deconv2 kernels " + shape_str(w) + " do not fit input " + shape_str(s));
  require(bias.value().shape() == Shape{w[1]},
          "deconv2 bias must be [" + std::to_string(w[1]) + "]");
  const std::size_t cin = s[0], H = s[1], W = s[2], cout = w[1], P = H * W;
  // y[(co,a,b), p] = sum_ci w[ci,(co,a,b)] x[ci,p]
  MatR<T> y = CMapR<T>(kernels.value().raw(), cin, cout * 4).transpose() *
              CMapR<T>(input.value().raw(), cin, P);
  Tensor<T> out(Shape{cout, 2 * H, 2 * W});
  T* o = out.raw();
  const T* b = bias.value().raw();
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t bb = 0; bb < 2; ++bb) {
        const T* src = y.data() + (co * 4 + a * 2 + bb) * P;
        for (std::size_t i = 0; i < H; ++i) {
          T* dst = o + (co * 2 * H + 2 * i + a) * 2 * W + bb;
          for (std::size_t j = 0; j < W; ++j) dst[2 * j] = src[i * W + j] + b[co];
        }
      }
    }
  }
  check_not_nan(out, "deconv2");
  return Var<T>::make(
      std::move(out), {input, kernels, bias}, [cin, cout, H, W](Node<T>& self) {
        const std::size_t P = H * W;
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* g = self.grad.raw();
        MatR<T> gy(cout * 4, P);
        for (std::size_t co = 0; co < cout; ++co) {
          for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t bb = 0; bb < 2; ++bb) {
              T* dst = gy.data() + (co * 4 + a * 2 + bb) * P;
              for (std::size_t i = 0; i < H; ++i) {
                const T* src = g + (co * 2 * H + 2 * i + a) * 2 * W + bb;
                for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = src[2 * j];
              }
            }
          }
        }
        if (pb.requires_grad) {
          T* db = pb.grad_buffer().raw();
          for (std::size_t co = 0; co < cout; ++co) {
            db[co] += ordered_sum(gy.block(co * 4, 0, 4, P));
          }
        }
        if (pw.requires_grad) {
          MapR<T>(pw.grad_buffer().raw(), cin, cout * 4).noalias() +=
              CMapR<T>(px.value.raw(), cin, P) * gy.transpose();
        }
        if (px.requires_grad) {
          MapR<T>(px.grad_buffer().raw(), cin, P).noalias() +=
              CMapR<T>(pw.value.raw(), cin, cout * 4) * gy;
        }
      });
}

template <class T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out(input.value().shape());
  const auto x = input.value().data();
  auto y = out.data();
  // NaN passes through so the output check reports it.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} || x[i] != x[i] ? x[i] : T{0};
  return elementwise<T>(input, std::move(out), "relu", [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto dx = p.grad_buffer().data();
    const auto x = p.value.data();
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (x[i] > T{0}) dx[i] += g[i];
    }
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& input) {
  Tensor<T> out(input.value().shape());
  const auto x = input.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= T{0}) {
      y[i] = T{1} / (T{1} + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T{1} + e);
    }
  }
  return elementwise<T>(input, std::move(out), "sigmoid", [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto dx = p.grad_buffer().data();
    const auto y = self.value.data();
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <class T>
Var<T> softmax_channels(const Var<T>& input) {
  const auto& s = input.value().shape();
  if (s.empty() || s[0] != 2) {
    throw DimensionError("softmax_channels needs exactly 2 channels, got " +
                         shape_str(s));
  }
  const std::size_t n = input.value().size() / 2;
  Tensor<T> out(s);
  const T* x = input.value().raw();
  T* y = out.raw();
  for (std::size_t i = 0; i < n; ++i) {
    const T m = std::max(x[i], x[n + i]);
    const T e0 = std::exp(x[i] - m);
    const T e1 = std::exp(x[n + i] - m);
    const T sum = e0 + e1;
    y[i] = e0 / sum;
    y[n + i] = e1 / sum;
  }
  return elementwise<T>(input, std::move(out), "softmax_channels", [n](Node<T>& self) {
    auto& p = *self.parents[0];
    T* dx = p.grad_buffer().raw();
    const T* y = self.value.raw();
    const T* g = self.grad.raw();
    for (std::size_t i = 0; i < n; ++i) {
      const T dot = g[i] * y[i] + g[n + i] * y[n + i];
      dx[i] += y[i] * (g[i] - dot);
      dx[n + i] += y[n + i] * (g[n + i] - dot);
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  check_not_nan(out, "add");
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    const auto g = self.grad.data();
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto d = p->grad_buffer().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  check_not_nan(out, "mul");
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    const auto g = self.grad.data();
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto d = pa.grad_buffer().data();
      const auto o = pb.value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
    }
    if (pb.requires_grad) {
      auto d = pb.grad_buffer().data();
      const auto o = pa.value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * o[i];
    }
  });
}

template <class T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  Tensor<T> out(x.shape());
  const auto v = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = scale * v[i] + shift;
  return elementwise<T>(x, std::move(out), "affine", [scale](Node<T>& self) {
    auto d = self.parents[0]->grad_buffer().data();
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * g[i];
  });
}

template <class T>
Var<T> stack2(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape() && !a.shape().empty(),
          "stack2 shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const Shape& s = a.shape();
  const std::size_t C = s[0];
  const std::size_t inner = a.value().size() / C;
  Shape os{C, 2};
  os.insert(os.end(), s.begin() + 1, s.end());
  Tensor<T> out(os);
  for (std::size_t c = 0; c < C; ++c) {
    std::copy_n(a.value().raw() + c * inner, inner, out.raw() + (2 * c) * inner);
    std::copy_n(b.value().raw() + c * inner, inner, out.raw() + (2 * c + 1) * inner);
  }
  return Var<T>::make(std::move(out), {a, b}, [C, inner](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      T* d = p.grad_buffer().raw();
      for (std::size_t c = 0; c < C; ++c) {
        const T* g = self.grad.raw() + (2 * c + k) * inner;
        for (std::size_t i = 0; i < inner; ++i) d[c * inner + i] += g[i];
      }
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    auto d = self.parents[0]->grad_buffer().data();
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> select_channel(const Var<T>& x, std::size_t channel) {
  const Shape& s = x.shape();
  require(s.size() >= 2 && channel < s[0],
          "select_channel " + std::to_string(channel) + " of " + shape_str(s));
  const std::size_t inner = x.value().size() / s[0];
  Tensor<T> out(Shape(s.begin() + 1, s.end()));
  std::copy_n(x.value().raw() + channel * inner, inner, out.raw());
  return Var<T>::make(std::move(out), {x}, [channel, inner](Node<T>& self) {
    T* d = self.parents[0]->grad_buffer().raw() + channel * inner;
    const T* g = self.grad.raw();
    for (std::size_t i = 0; i < inner; ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  require(x.shape() == weights.shape(), "weighted_sum shape mismatch");
  double s = 0.0;
  const auto v = x.value().data();
  const auto w = weights.data();
  for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<double>(v[i]) * w[i];
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  return elementwise<T>(x, std::move(out), "weighted_sum", [weights](Node<T>& self) {
    auto d = self.parents[0]->grad_buffer().data();
    const T g = self.grad[0];
    const auto w = weights.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * w[i];
  });
}

template <class T>
Var<T> dice_soft(std::span<const Var<T>> probs, std::span<const Tensor<T>* const> refs) {
  require(probs.size() == refs.size() && !probs.empty(),
          "dice_soft needs matching, nonempty prediction/reference lists");
  double pr = 0.0, pp = 0.0, rr = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    require(probs[k].shape() == refs[k]->shape(),
            "dice_soft shape mismatch " + shape_str(probs[k].shape()) + " vs " +
                shape_str(refs[k]->shape()));
    const auto p = probs[k].value().data();
    const auto r = refs[k]->data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p[i], ri = r[i];
      pr += pi * ri;
      pp += pi * pi;
      rr += ri * ri;
    }
  }
  const double denom = pp + rr;
  const double dice = denom > 0.0 ? 2.0 * pr / denom : 1.0;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(dice));
  check_not_nan(out, "dice_soft");
  std::vector<Var<T>> parents(probs.begin(), probs.end());
  // References are copied so callers may pass temporaries.
  auto owned = std::make_shared<std::vector<Tensor<T>>>();
  owned->reserve(refs.size());
  for (const auto* r : refs) owned->push_back(*r);
  return Var<T>::make(std::move(out), std::move(parents),
                      [owned, denom, dice](Node<T>& self) {
                        if (denom <= 0.0) return;
                        // dD/dp_i = (2 r_i - 2 D p_i) / denom
                        const double g = static_cast<double>(self.grad[0]) / denom;
                        for (std::size_t k = 0; k < self.parents.size(); ++k) {
                          auto& p = *self.parents[k];
                          if (!p.requires_grad) continue;
                          auto d = p.grad_buffer().data();
                          const auto pv = p.value.data();
                          const auto r = (*owned)[k].data();
                          for (std::size_t i = 0; i < d.size(); ++i) {
                            d[i] += static_cast<T>(
                                g * (2.0 * r[i] - 2.0 * dice * pv[i]));
                          }
                        }
                      });
}

#define SEG25D_INSTANTIATE_OPS(T)                                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);            \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&,             \
                         std::size_t);                                            \
  template Var<T> avg_pool2(const Var<T>&);                                       \
  template Var<T> deconv2(const Var<T>&, const Var<T>&, const Var<T>&);           \
  template Var<T> relu(const Var<T>&);                                            \
  template Var<T> sigmoid(const Var<T>&);                                         \
  template Var<T> softmax_channels(const Var<T>&);                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                              \
  template Var<T> affine(const Var<T>&, T, T);                                    \
  template Var<T> stack2(const Var<T>&, const Var<T>&);                           \
  template Var<T> reshape(const Var<T>&, Shape);                                  \
  template Var<T> select_channel(const Var<T>&, std::size_t);                     \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                  \
  template Var<T> dice_soft(std::span<const Var<T>>, std::span<const Tensor<T>* const>);

SEG25D_INSTANTIATE_OPS(float)
SEG25D_INSTANTIATE_OPS(double)

}  // namespace seg25d
