#include "ste/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

namespace ste::nn::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds conv windows for output rows [oy0, oy1):
// col[(c*k + ki)*k + kj][(oy - oy0)*Wo + ox] = img[c][iy][ix] with
// iy = oy*s - p + ki, ix = ox*s - p + kj, zero outside the image.
template <typename T>
void im2col(const T* img, int channels, int height, int width, const ConvGeometry& g, int oy0,
            int oy1, int out_w, T* col) {
  const int k = g.kernel;
  const std::size_t positions = static_cast<std::size_t>(oy1 - oy0) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * positions;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* out = row + static_cast<std::size_t>(oy - oy0) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(out, out + out_w, T(0));
            continue;
          }
          const T* in = img + (static_cast<std::size_t>(c) * height + iy) * width;
          if (g.stride == 1) {
            const int begin = std::clamp(g.pad - kj, 0, out_w);
            const int end = std::clamp(width + g.pad - kj, begin, out_w);
            std::fill(out, out + begin, T(0));
            std::copy(in + begin - g.pad + kj, in + end - g.pad + kj, out + begin);
            std::fill(out + end, out + out_w, T(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              out[ox] = (ix >= 0 && ix < width) ? in[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates window columns back into the image.
template <typename T>
void col2im(const T* col, int channels, int height, int width, const ConvGeometry& g, int oy0,
            int oy1, int out_w, T* img) {
  const int k = g.kernel;
  const std::size_t positions = static_cast<std::size_t>(oy1 - oy0) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * positions;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= height) continue;
          const T* in = row + static_cast<std::size_t>(oy - oy0) * out_w;
          T* out = img + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < width) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Output rows per im2col chunk, keeping the column buffer near kColBudget.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

int rows_per_chunk(int kdim, int out_h, int out_w) {
  const std::size_t per_row = static_cast<std::size_t>(kdim) * out_w;
  return std::clamp(static_cast<int>(kColBudget / std::max<std::size_t>(per_row, 1)), 1, out_h);
}

template <typename T>
std::vector<Var<T>> defined_only(std::initializer_list<Var<T>> vars) {
  std::vector<Var<T>> out;
  for (const Var<T>& v : vars) {
    if (v.defined()) out.push_back(v);
  }
  return out;
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* what) {
  require_shape(b.shape(), a.shape(), what);
}

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
void add_bias_rows(Tensor<T>& y, const Tensor<T>& bias) {
  const Shape s = y.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      T* p = y.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      const T b = bias[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& dy, Tensor<T>& db) {
  const Shape s = dy.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = dy.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      db[c] += acc;
    }
  }
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary(const Var<T>& x, Fwd fwd, Bwd bwd) {
  Tensor<T> y(x.shape());
  const T* in = x.value().data();
  T* out = y.data();
  for (std::size_t i = 0; i < y.numel(); ++i) out[i] = fwd(in[i]);
  return make_op<T>(std::move(y), {x}, [bwd](Node<T>& self) {
    Node<T>& xn = self.input(0);
    T* dx = xn.grad_buffer().data();
    const T* dy = self.grad.data();
    const T* xv = xn.value.data();
    const T* yv = self.value.data();
    for (std::size_t i = 0; i < self.value.numel(); ++i) dx[i] += dy[i] * bwd(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw Error(ErrorKind::kShapeMismatch,
                "conv2d: weight " + ws.str() + " does not fit input " + xs.str());
  }
  const int out_h = conv_out(xs.h, g);
  const int out_w = conv_out(xs.w, g);
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::kShapeMismatch, "conv2d: input too small");
  const int co = ws.n;
  const int kdim = xs.c * g.kernel * g.kernel;
  const std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  Tensor<T> y(Shape{xs.n, co, out_h, out_w});
  const int chunk = rows_per_chunk(kdim, out_h, out_w);
  std::vector<T> col(static_cast<std::size_t>(kdim) * chunk * out_w);
  const ConstMatMap<T> w(weight.value().data(), co, kdim);
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x.value().data() + static_cast<std::size_t>(n) * xs.c * xs.plane();
    MatMap<T> out(y.data() + static_cast<std::size_t>(n) * co * positions, co,
                  static_cast<Eigen::Index>(positions));
    for (int oy0 = 0; oy0 < out_h; oy0 += chunk) {
      const int oy1 = std::min(out_h, oy0 + chunk);
      const Eigen::Index len = static_cast<Eigen::Index>(oy1 - oy0) * out_w;
      im2col(xn, xs.c, xs.h, xs.w, g, oy0, oy1, out_w, col.data());
      out.middleCols(static_cast<Eigen::Index>(oy0) * out_w, len).noalias() =
          w * ConstMatMap<T>(col.data(), kdim, len);
    }
  }
  const bool has_bias = bias.defined();
  if (has_bias) add_bias_rows(y, bias.value());
  return make_op<T>(std::move(y), defined_only<T>({x, weight, bias}), [g, has_bias](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& wn = self.input(1);
    const Shape xs = xn.value.shape();
    const Shape ys = self.value.shape();
    const int co = ys.c;
    const int kdim = xs.c * g.kernel * g.kernel;
    const auto positions = static_cast<Eigen::Index>(ys.plane());
    const int chunk = rows_per_chunk(kdim, ys.h, ys.w);
    std::vector<T> col(static_cast<std::size_t>(kdim) * chunk * ys.w);
    const ConstMatMap<T> w(wn.value.data(), co, kdim);
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t x_off = static_cast<std::size_t>(n) * xs.c * xs.plane();
      const ConstMatMap<T> dy(self.grad.data() + static_cast<std::size_t>(n) * co * positions, co,
                              positions);
      for (int oy0 = 0; oy0 < ys.h; oy0 += chunk) {
        const int oy1 = std::min(ys.h, oy0 + chunk);
        const Eigen::Index len = static_cast<Eigen::Index>(oy1 - oy0) * ys.w;
        const auto dy_block = dy.middleCols(static_cast<Eigen::Index>(oy0) * ys.w, len);
        if (wn.requires_grad) {
          im2col(xn.value.data() + x_off, xs.c, xs.h, xs.w, g, oy0, oy1, ys.w, col.data());
          MatMap<T> dw(wn.grad_buffer().data(), co, kdim);
          dw.noalias() += dy_block * ConstMatMap<T>(col.data(), kdim, len).transpose();
        }
        if (xn.requires_grad) {
          MatMap<T> dcol(col.data(), kdim, len);
          dcol.noalias() = w.transpose() * dy_block;
          col2im(col.data(), xs.c, xs.h, xs.w, g, oy0, oy1, ys.w, xn.grad_buffer().data() + x_off);
        }
      }
    }
    if (has_bias && self.input(2).requires_grad) {
      accumulate_bias_grad(self.grad, self.input(2).grad_buffer());
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw Error(ErrorKind::kShapeMismatch,
                "conv_transpose2d: weight " + ws.str() + " does not fit input " + xs.str());
  }
  const int co = ws.c;
  const int out_h = (xs.h - 1) * g.stride - 2 * g.pad + g.kernel + g.output_pad;
  const int out_w = (xs.w - 1) * g.stride - 2 * g.pad + g.kernel + g.output_pad;
  const int kdim = co * g.kernel * g.kernel;
  const auto positions = static_cast<Eigen::Index>(xs.plane());
  Tensor<T> y(Shape{xs.n, co, out_h, out_w});
  std::vector<T> col(static_cast<std::size_t>(kdim) * positions);
  const ConstMatMap<T> w(weight.value().data(), xs.c, kdim);
  for (int n = 0; n < xs.n; ++n) {
    const ConstMatMap<T> in(x.value().data() + static_cast<std::size_t>(n) * xs.c * positions, xs.c,
                            positions);
    MatMap<T> c(col.data(), kdim, positions);
    c.noalias() = w.transpose() * in;
    col2im(col.data(), co, out_h, out_w, g, 0, xs.h, xs.w,
           y.data() + static_cast<std::size_t>(n) * co * out_h * out_w);
  }
  const bool has_bias = bias.defined();
  if (has_bias) add_bias_rows(y, bias.value());
  return make_op<T>(std::move(y), defined_only<T>({x, weight, bias}), [g, has_bias](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& wn = self.input(1);
    const Shape xs = xn.value.shape();
    const Shape ys = self.value.shape();
    const int kdim = ys.c * g.kernel * g.kernel;
    const auto positions = static_cast<Eigen::Index>(xs.plane());
    std::vector<T> col(static_cast<std::size_t>(kdim) * positions);
    const ConstMatMap<T> w(wn.value.data(), xs.c, kdim);
    for (int n = 0; n < xs.n; ++n) {
      im2col(self.grad.data() + static_cast<std::size_t>(n) * ys.c * ys.plane(), ys.c, ys.h, ys.w, g,
             0, xs.h, xs.w, col.data());
      const ConstMatMap<T> dcol(col.data(), kdim, positions);
      if (xn.requires_grad) {
        MatMap<T> dx(xn.grad_buffer().data() + static_cast<std::size_t>(n) * xs.c * positions, xs.c,
                     positions);
        dx.noalias() += w * dcol;
      }
      if (wn.requires_grad) {
        const ConstMatMap<T> in(xn.value.data() + static_cast<std::size_t>(n) * xs.c * positions,
                                xs.c, positions);
        MatMap<T> dw(wn.grad_buffer().data(), xs.c, kdim);
        dw.noalias() += in * dcol.transpose();
      }
    }
    if (has_bias && self.input(2).requires_grad) {
      accumulate_bias_grad(self.grad, self.input(2).grad_buffer());
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary<T>(x, [](T v) { return std::abs(v); }, [](T v, T) { return sign(v); });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& in = self.input(k);
      if (!in.requires_grad) continue;
      Tensor<T>& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    if (self.input(0).requires_grad) {
      Tensor<T>& g = self.input(0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.input(1).requires_grad) {
      Tensor<T>& g = self.input(1).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    Node<T>& an = self.input(0);
    Node<T>& bn = self.input(1);
    if (an.requires_grad) {
      Tensor<T>& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      Tensor<T>& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "div");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= b.value()[i];
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    Node<T>& an = self.input(0);
    Node<T>& bn = self.input(1);
    if (an.requires_grad) {
      Tensor<T>& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / bn.value[i];
    }
    if (bn.requires_grad) {
      Tensor<T>& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        g[i] -= self.grad[i] * an.value[i] / (bn.value[i] * bn.value[i]);
      }
    }
  });
}

template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  return unary<T>(x, [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Var<T> mul_bcast(const Var<T>& x, const Var<T>& m) {
  const Shape xs = x.shape();
  require_shape(m.shape(), Shape{xs.n, 1, xs.h, xs.w}, "mul_bcast mask");
  const std::size_t plane = xs.plane();
  Tensor<T> y = x.value();
  for (int n = 0; n < xs.n; ++n) {
    const T* mv = m.value().data() + n * plane;
    for (int c = 0; c < xs.c; ++c) {
      T* p = y.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] *= mv[i];
    }
  }
  return make_op<T>(std::move(y), {x, m}, [](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& mn = self.input(1);
    const Shape xs = xn.value.shape();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n) {
      const T* mv = mn.value.data() + n * plane;
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        const T* dy = self.grad.data() + off;
        if (xn.requires_grad) {
          T* dx = xn.grad_buffer().data() + off;
          for (std::size_t i = 0; i < plane; ++i) dx[i] += dy[i] * mv[i];
        }
        if (mn.requires_grad) {
          T* dm = mn.grad_buffer().data() + n * plane;
          const T* xv = xn.value.data() + off;
          for (std::size_t i = 0; i < plane; ++i) dm[i] += dy[i] * xv[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  require_shape(b.shape(), Shape{1, x.shape().c, 1, 1}, "add_channel_bias");
  Tensor<T> y = x.value();
  add_bias_rows(y, b.value());
  return make_op<T>(std::move(y), {x, b}, [](Node<T>& self) {
    if (self.input(0).requires_grad) {
      Tensor<T>& g = self.input(0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.input(1).requires_grad) accumulate_bias_grad(self.grad, self.input(1).grad_buffer());
  });
}

template <typename T>
Var<T> add_bcast_spatial(const Var<T>& x, const Var<T>& v) {
  const Shape xs = x.shape();
  require_shape(v.shape(), Shape{xs.n, xs.c, 1, 1}, "add_bcast_spatial");
  const std::size_t plane = xs.plane();
  Tensor<T> y = x.value();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
    T* p = y.data() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += v.value()[nc];
  }
  return make_op<T>(std::move(y), {x, v}, [](Node<T>& self) {
    const Shape xs = self.value.shape();
    const std::size_t plane = xs.plane();
    if (self.input(0).requires_grad) {
      Tensor<T>& g = self.input(0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.input(1).requires_grad) {
      Tensor<T>& g = self.input(1).grad_buffer();
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
        const T* p = self.grad.data() + nc * plane;
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        g[nc] += acc;
      }
    }
  });
}

template <typename T>
Var<T> normalize_channels(const Var<T>& x, const std::vector<T>& mean_v, const std::vector<T>& std_v) {
  const Shape xs = x.shape();
  if (mean_v.size() != static_cast<std::size_t>(xs.c) || std_v.size() != mean_v.size()) {
    throw Error(ErrorKind::kShapeMismatch, "normalize_channels: parameter count != channels");
  }
  const std::size_t plane = xs.plane();
  Tensor<T> y = x.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      T* p = y.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean_v[c]) / std_v[c];
    }
  }
  return make_op<T>(std::move(y), {x}, [std_v](Node<T>& self) {
    const Shape xs = self.value.shape();
    const std::size_t plane = xs.plane();
    T* dx = self.input(0).grad_buffer().data();
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dx[off + i] += self.grad[off + i] / std_v[c];
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat of nothing");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const Var<T>& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw Error(ErrorKind::kShapeMismatch,
                  "concat: " + s.str() + " does not match " + first.str());
    }
    channels += s.c;
  }
  const std::size_t plane = first.plane();
  Tensor<T> y(Shape{first.n, channels, first.h, first.w});
  for (int n = 0; n < first.n; ++n) {
    T* out = y.data() + static_cast<std::size_t>(n) * channels * plane;
    for (const Var<T>& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      const T* in = p.value().data() + n * len;
      out = std::copy(in, in + len, out);
    }
  }
  return make_op<T>(std::move(y), parts, [](Node<T>& self) {
    const Shape ys = self.value.shape();
    const std::size_t plane = ys.plane();
    for (int n = 0; n < ys.n; ++n) {
      const T* g = self.grad.data() + static_cast<std::size_t>(n) * ys.c * plane;
      for (auto& in : self.inputs) {
        const std::size_t len = static_cast<std::size_t>(in->value.shape().c) * plane;
        if (in->requires_grad) {
          T* dx = in->grad_buffer().data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dx[i] += g[i];
        }
        g += len;
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor<T> y(ys);
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
    const T* in = x.value().data() + nc * xs.plane();
    T* out = y.data() + nc * ys.plane();
    for (int i = 0; i < ys.h; ++i) {
      for (int j = 0; j < ys.w; ++j) out[i * ys.w + j] = in[(i / 2) * xs.w + j / 2];
    }
  }
  return make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    Node<T>& xn = self.input(0);
    const Shape xs = xn.value.shape();
    const Shape ys = self.value.shape();
    T* dx = xn.grad_buffer().data();
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
      const T* g = self.grad.data() + nc * ys.plane();
      T* d = dx + nc * xs.plane();
      for (int i = 0; i < ys.h; ++i) {
        for (int j = 0; j < ys.w; ++j) d[(i / 2) * xs.w + j / 2] += g[i * ys.w + j];
      }
    }
  });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, xs.h / 2, xs.w / 2};
  if (ys.h < 1 || ys.w < 1) throw Error(ErrorKind::kShapeMismatch, "max_pool2x2: input too small");
  Tensor<T> y(ys);
  std::vector<std::uint32_t> argmax(ys.numel());
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
    const T* in = x.value().data() + nc * xs.plane();
    for (int i = 0; i < ys.h; ++i) {
      for (int j = 0; j < ys.w; ++j) {
        std::uint32_t best = static_cast<std::uint32_t>((2 * i) * xs.w + 2 * j);
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            const auto idx = static_cast<std::uint32_t>((2 * i + di) * xs.w + 2 * j + dj);
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = nc * ys.plane() + static_cast<std::size_t>(i) * ys.w + j;
        y[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return make_op<T>(std::move(y), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    Node<T>& xn = self.input(0);
    const Shape xs = xn.value.shape();
    const Shape ys = self.value.shape();
    T* dx = xn.grad_buffer().data();
    for (std::size_t o = 0; o < ys.numel(); ++o) {
      const std::size_t nc = o / ys.plane();
      dx[nc * xs.plane() + argmax[o]] += self.grad[o];
    }
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  Tensor<T> y(Shape{xs.n, 1, xs.h, xs.w});
  for (int n = 0; n < xs.n; ++n) {
    T* out = y.data() + n * plane;
    for (int c = 0; c < xs.c; ++c) {
      const T* in = x.value().data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[i] += in[i];
    }
    for (std::size_t i = 0; i < plane; ++i) out[i] /= static_cast<T>(xs.c);
  }
  return make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    Node<T>& xn = self.input(0);
    const Shape xs = xn.value.shape();
    const std::size_t plane = xs.plane();
    T* dx = xn.grad_buffer().data();
    const T inv = T(1) / static_cast<T>(xs.c);
    for (int n = 0; n < xs.n; ++n) {
      const T* g = self.grad.data() + n * plane;
      for (int c = 0; c < xs.c; ++c) {
        T* d = dx + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] * inv;
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x}, [](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return affine(sum(x), T(1) / static_cast<T>(x.value().numel()), T(0));
}

template <typename T>
Var<T> sum_per_sample(const Var<T>& x) {
  const Shape xs = x.shape();
  const std::size_t per = xs.numel() / xs.n;
  Tensor<T> y(Shape{xs.n, 1, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    const T* p = x.value().data() + n * per;
    T acc = 0;
    for (std::size_t i = 0; i < per; ++i) acc += p[i];
    y[n] = acc;
  }
  return make_op<T>(std::move(y), {x}, [per](Node<T>& self) {
    T* dx = self.input(0).grad_buffer().data();
    for (int n = 0; n < self.value.shape().n; ++n) {
      for (std::size_t i = 0; i < per; ++i) dx[n * per + i] += self.grad[n];
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool use_batch_stats, bool update_running, T momentum, T eps) {
  const Shape xs = x.shape();
  const Shape cs{1, xs.c, 1, 1};
  require_shape(gamma.shape(), cs, "batch_norm gamma");
  require_shape(beta.shape(), cs, "batch_norm beta");
  const std::size_t plane = xs.plane();
  const double count = static_cast<double>(xs.n) * plane;
  std::vector<T> mu(xs.c), inv_std(xs.c);
  for (int c = 0; c < xs.c; ++c) {
    if (use_batch_stats) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = x.value().data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / count;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = x.value().data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s2 += (p[i] - m) * (p[i] - m);
      }
      const double var = s2 / count;
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      if (update_running) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        stats.running_mean[c] = static_cast<T>((1 - momentum) * stats.running_mean[c] + momentum * m);
        stats.running_var[c] =
            static_cast<T>((1 - momentum) * stats.running_var[c] + momentum * unbiased);
      }
    } else {
      mu[c] = stats.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + eps));
    }
  }
  Tensor<T> y(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      const T g = gamma.value()[c], b = beta.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        y[off + i] = g * (x.value()[off + i] - mu[c]) * inv_std[c] + b;
      }
    }
  }
  return make_op<T>(std::move(y), {x, gamma, beta}, [mu, inv_std, use_batch_stats](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& gn = self.input(1);
    Node<T>& bn = self.input(2);
    const Shape xs = xn.value.shape();
    const std::size_t plane = xs.plane();
    const double count = static_cast<double>(xs.n) * plane;
    for (int c = 0; c < xs.c; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (xn.value[off + i] - mu[c]) * inv_std[c];
          sum_dy += self.grad[off + i];
          sum_dy_xhat += self.grad[off + i] * xhat;
        }
      }
      if (gn.requires_grad) gn.grad_buffer()[c] += static_cast<T>(sum_dy_xhat);
      if (bn.requires_grad) bn.grad_buffer()[c] += static_cast<T>(sum_dy);
      if (!xn.requires_grad) continue;
      T* dx = xn.grad_buffer().data();
      const double scale = gn.value[c] * inv_std[c];
      for (int n = 0; n < xs.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (use_batch_stats) {
            const double xhat = (xn.value[off + i] - mu[c]) * inv_std[c];
            dx[off + i] += static_cast<T>(
                scale * (self.grad[off + i] - sum_dy / count - xhat * sum_dy_xhat / count));
          } else {
            dx[off + i] += static_cast<T>(scale * self.grad[off + i]);
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Shape xs = x.shape();
  const Shape cs{1, xs.c, 1, 1};
  require_shape(gamma.shape(), cs, "layer_norm gamma");
  require_shape(beta.shape(), cs, "layer_norm beta");
  const std::size_t per = xs.numel() / xs.n;
  const std::size_t plane = xs.plane();
  std::vector<T> mu(xs.n), inv_std(xs.n);
  Tensor<T> y(xs);
  for (int n = 0; n < xs.n; ++n) {
    const T* p = x.value().data() + n * per;
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += p[i];
    const double m = s / per;
    for (std::size_t i = 0; i < per; ++i) s2 += (p[i] - m) * (p[i] - m);
    mu[n] = static_cast<T>(m);
    inv_std[n] = static_cast<T>(1.0 / std::sqrt(s2 / per + eps));
    for (std::size_t i = 0; i < per; ++i) {
      const int c = static_cast<int>(i / plane);
      y[n * per + i] = gamma.value()[c] * (p[i] - mu[n]) * inv_std[n] + beta.value()[c];
    }
  }
  return make_op<T>(std::move(y), {x, gamma, beta}, [mu, inv_std, per, plane](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& gn = self.input(1);
    Node<T>& bn = self.input(2);
    const int batch = xn.value.shape().n;
    for (int n = 0; n < batch; ++n) {
      const T* xv = xn.value.data() + n * per;
      const T* dy = self.grad.data() + n * per;
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        const int c = static_cast<int>(i / plane);
        const double xhat = (xv[i] - mu[n]) * inv_std[n];
        const double dxhat = dy[i] * gn.value[c];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
        if (gn.requires_grad) gn.grad_buffer()[c] += static_cast<T>(dy[i] * xhat);
        if (bn.requires_grad) bn.grad_buffer()[c] += dy[i];
      }
      mean_dxhat /= per;
      mean_dxhat_xhat /= per;
      if (!xn.requires_grad) continue;
      T* dx = xn.grad_buffer().data() + n * per;
      for (std::size_t i = 0; i < per; ++i) {
        const int c = static_cast<int>(i / plane);
        const double xhat = (xv[i] - mu[n]) * inv_std[n];
        const double dxhat = dy[i] * gn.value[c];
        dx[i] += static_cast<T>(inv_std[n] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
      }
    }
  });
}

template <typename T>
Var<T> softmax_spatial(const Var<T>& x) {
  const Shape xs = x.shape();
  if (xs.c != 1) throw Error(ErrorKind::kShapeMismatch, "softmax_spatial expects one channel");
  const std::size_t plane = xs.plane();
  Tensor<T> y(xs);
  for (int n = 0; n < xs.n; ++n) {
    const T* in = x.value().data() + n * plane;
    T* out = y.data() + n * plane;
    const T peak = *std::max_element(in, in + plane);
    double z = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = std::exp(in[i] - peak);
      z += out[i];
    }
    for (std::size_t i = 0; i < plane; ++i) out[i] = static_cast<T>(out[i] / z);
  }
  return make_op<T>(std::move(y), {x}, [plane](Node<T>& self) {
    T* dx = self.input(0).grad_buffer().data();
    for (int n = 0; n < self.value.shape().n; ++n) {
      const T* s = self.value.data() + n * plane;
      const T* g = self.grad.data() + n * plane;
      double dot = 0.0;
      for (std::size_t i = 0; i < plane; ++i) dot += g[i] * s[i];
      for (std::size_t i = 0; i < plane; ++i) dx[n * plane + i] += static_cast<T>(s[i] * (g[i] - dot));
    }
  });
}

template <typename T>
Var<T> weighted_pool(const Var<T>& x, const Var<T>& w) {
  const Shape xs = x.shape();
  require_shape(w.shape(), Shape{xs.n, 1, xs.h, xs.w}, "weighted_pool weights");
  const auto plane = static_cast<Eigen::Index>(xs.plane());
  Tensor<T> y(Shape{xs.n, xs.c, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    const ConstMatMap<T> feat(x.value().data() + n * xs.c * plane, xs.c, plane);
    const ConstMatMap<T> wt(w.value().data() + n * plane, plane, 1);
    MatMap<T>(y.data() + n * xs.c, xs.c, 1).noalias() = feat * wt;
  }
  return make_op<T>(std::move(y), {x, w}, [](Node<T>& self) {
    Node<T>& xn = self.input(0);
    Node<T>& wn = self.input(1);
    const Shape xs = xn.value.shape();
    const auto plane = static_cast<Eigen::Index>(xs.plane());
    for (int n = 0; n < xs.n; ++n) {
      const ConstMatMap<T> dy(self.grad.data() + n * xs.c, xs.c, 1);
      if (xn.requires_grad) {
        const ConstMatMap<T> wt(wn.value.data() + n * plane, 1, plane);
        MatMap<T>(xn.grad_buffer().data() + n * xs.c * plane, xs.c, plane).noalias() += dy * wt;
      }
      if (wn.requires_grad) {
        const ConstMatMap<T> feat(xn.value.data() + n * xs.c * plane, xs.c, plane);
        MatMap<T>(wn.grad_buffer().data() + n * plane, 1, plane).noalias() += dy.transpose() * feat;
      }
    }
  });
}

template <typename T>
Var<T> gram(const Var<T>& x) {
  const Shape xs = x.shape();
  const auto plane = static_cast<Eigen::Index>(xs.plane());
  const T norm = T(1) / static_cast<T>(static_cast<std::size_t>(xs.c) * xs.plane());
  Tensor<T> y(Shape{xs.n, 1, xs.c, xs.c});
  for (int n = 0; n < xs.n; ++n) {
    const ConstMatMap<T> f(x.value().data() + n * xs.c * plane, xs.c, plane);
    MatMap<T>(y.data() + static_cast<std::size_t>(n) * xs.c * xs.c, xs.c, xs.c).noalias() =
        norm * (f * f.transpose());
  }
  return make_op<T>(std::move(y), {x}, [norm](Node<T>& self) {
    Node<T>& xn = self.input(0);
    const Shape xs = xn.value.shape();
    const auto plane = static_cast<Eigen::Index>(xs.plane());
    for (int n = 0; n < xs.n; ++n) {
      const ConstMatMap<T> dg(self.grad.data() + static_cast<std::size_t>(n) * xs.c * xs.c, xs.c,
                              xs.c);
      const ConstMatMap<T> f(xn.value.data() + n * xs.c * plane, xs.c, plane);
      MatMap<T>(xn.grad_buffer().data() + n * xs.c * plane, xs.c, plane).noalias() +=
          norm * ((dg + dg.transpose()) * f);
    }
  });
}

template <typename T>
Var<T> masked_tv(const Var<T>& x, const Tensor<T>& hole) {
  const Shape xs = x.shape();
  require_shape(hole.shape(), Shape{xs.n, 1, xs.h, xs.w}, "masked_tv hole");
  const T norm = T(1) / static_cast<T>(xs.numel());
  double acc = 0.0;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int i = 0; i < xs.h; ++i) {
        for (int j = 0; j < xs.w; ++j) {
          if (hole.at(n, 0, i, j) <= T(0.5)) continue;
          const T v = x.value().at(n, c, i, j);
          if (j + 1 < xs.w) acc += std::abs(x.value().at(n, c, i, j + 1) - v);
          if (i + 1 < xs.h) acc += std::abs(x.value().at(n, c, i + 1, j) - v);
        }
      }
    }
  }
  return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(acc * norm)), {x},
                    [hole, norm](Node<T>& self) {
                      Node<T>& xn = self.input(0);
                      const Shape xs = xn.value.shape();
                      Tensor<T>& dx = xn.grad_buffer();
                      const T g = self.grad[0] * norm;
                      for (int n = 0; n < xs.n; ++n) {
                        for (int c = 0; c < xs.c; ++c) {
                          for (int i = 0; i < xs.h; ++i) {
                            for (int j = 0; j < xs.w; ++j) {
                              if (hole.at(n, 0, i, j) <= T(0.5)) continue;
                              const T v = xn.value.at(n, c, i, j);
                              if (j + 1 < xs.w) {
                                const T s = sign(xn.value.at(n, c, i, j + 1) - v) * g;
                                dx.at(n, c, i, j + 1) += s;
                                dx.at(n, c, i, j) -= s;
                              }
                              if (i + 1 < xs.h) {
                                const T s = sign(xn.value.at(n, c, i + 1, j) - v) * g;
                                dx.at(n, c, i + 1, j) += s;
                                dx.at(n, c, i, j) -= s;
                              }
                            }
                          }
                        }
                      }
                    });
}

#define STE_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);              \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);    \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> abs(const Var<T>&);                                                             \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> div(const Var<T>&, const Var<T>&);                                              \
  template Var<T> affine(const Var<T>&, T, T);                                                    \
  template Var<T> mul_bcast(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                 \
  template Var<T> add_bcast_spatial(const Var<T>&, const Var<T>&);                                \
  template Var<T> normalize_channels(const Var<T>&, const std::vector<T>&, const std::vector<T>&); \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
  template Var<T> upsample_nearest2x(const Var<T>&);                                              \
  template Var<T> max_pool2x2(const Var<T>&);                                                     \
  template Var<T> channel_mean(const Var<T>&);                                                    \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> sum_per_sample(const Var<T>&);                                                  \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&,     \
                             bool, bool, T, T);                                                   \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> softmax_spatial(const Var<T>&);                                                 \
  template Var<T> weighted_pool(const Var<T>&, const Var<T>&);                                    \
  template Var<T> gram(const Var<T>&);                                                            \
  template Var<T> masked_tv(const Var<T>&, const Tensor<T>&);

STE_INSTANTIATE_OPS(float)
STE_INSTANTIATE_OPS(double)

#undef STE_INSTANTIATE_OPS

}  // namespace ste::nn::ops
