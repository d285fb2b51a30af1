#pragma once

// Differentiable operations over Var. Layouts: images (N, C, H, W), feature
// matrices (N, D). Convolutions lower to im2col + Eigen GEMM per sample.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "metairnet/autograd.hpp"
#include "metairnet/grid.hpp"
#include "metairnet/tensor.hpp"

namespace metairnet::ops {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
  }
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto pa = a.shared();
  return make_result<T>(std::move(out), {a}, [pa, df](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(pa->value[i], self.value[i]);
    }
  });
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_height, out_width;

  static ConvGeometry make(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                           std::size_t stride, std::size_t pad) {
    require(h + 2 * pad >= k && w + 2 * pad >= k, "convolution kernel larger than padded input");
    return {c, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
  }
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_height * out_width; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_width, T{0});
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          const T* src = row + oy * g.out_width;
          T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    accumulate(pa, self.grad);
    accumulate(pb, self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    accumulate(pa, self.grad);
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return detail::unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  return detail::unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary(
      a, [slope](T x) { return x > T{0} ? x : slope * x; },
      [slope](T x, T) { return x > T{0} ? T{1} : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return T{1} / (T{1} + std::exp(-x)); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  auto pa = a.shared();
  return make_result<T>(Tensor<T>({1}, {total}), {a}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

// ------------------------------------------------------------------ reshaping

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  auto pa = a.shared();
  return make_result<T>(a.value().reshaped(std::move(shape)), {a},
                        [pa](Node<T>& self) { accumulate(pa, self.grad); });
}

/// (N, ...) -> (N, prod(...)).
template <typename T>
Var<T> flatten(const Var<T>& a) {
  return reshape(a, Shape{a.dim(0), a.size() / a.dim(0)});
}

/// Concatenates along the leading (batch) dimension.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat of zero tensors");
  Shape shape = parts.front().shape();
  shape[0] = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape ref(parts.front().shape().begin() + 1, parts.front().shape().end());
    detail::require_same(tail, ref, "concat");
    shape[0] += p.dim(0);
    data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.shared());
  return make_result<T>(Tensor<T>(shape, std::move(data)), parts, [nodes](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      const std::size_t count = n->value.size();
      if (n->requires_grad) {
        auto& g = n->grad_buffer();
        for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[offset + i];
      }
      offset += count;
    }
  });
}

/// Concatenates two feature matrices (N, D1), (N, D2) -> (N, D1 + D2).
template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0),
                  "concat_features expects (N, D) inputs with equal N");
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor<T> out({n, da + db});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.value().data() + i * db, db, out.data() + i * (da + db) + da);
  }
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(std::move(out), {a, b}, [pa, pb, n, da, db](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < da; ++j) g[i * da + j] += self.grad[i * (da + db) + j];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < db; ++j) g[i * db + j] += self.grad[i * (da + db) + da + j];
    }
  });
}

/// Selects items of the leading dimension (repetition allowed).
template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& rows) {
  Shape shape = a.shape();
  const std::size_t stride = a.size() / shape[0];
  for (std::size_t r : rows) detail::require(r < shape[0], "gather_rows: index out of range");
  shape[0] = rows.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(a.value().data() + rows[i] * stride, stride, out.data() + i * stride);
  }
  auto pa = a.shared();
  return make_result<T>(std::move(out), {a}, [pa, rows, stride](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < stride; ++j) g[rows[i] * stride + j] += self.grad[i * stride + j];
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return gather_rows(a, rows);
}

/// Broadcasts a single row (1, ...) or vector (D) to `count` rows.
template <typename T>
Var<T> repeat_rows(const Var<T>& a, std::size_t count) {
  Shape shape = a.shape();
  if (shape.size() == 1) shape.insert(shape.begin(), 1);
  detail::require(shape[0] == 1, "repeat_rows expects a single row");
  auto row = reshape(a, shape);
  return gather_rows(row, std::vector<std::size_t>(count, 0));
}

// --------------------------------------------------------------------- layers

/// x (N, D) * W(O, D)^T + b(O).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  detail::require(x.shape().size() == 2, "linear expects (N, D) input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  detail::require(weight.dim(1) == d, "linear: weight " + shape_string(weight.shape()) +
                                          " incompatible with input " + shape_string(x.shape()));
  Tensor<T> out({n, o});
  MatMap<T> y(out.data(), n, o);
  y.noalias() = ConstMatMap<T>(x.value().data(), n, d) *
                ConstMatMap<T>(weight.value().data(), o, d).transpose();
  if (bias.defined()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) out[i * o + j] += bias.value()[j];
  }
  auto px = x.shared(), pw = weight.shared();
  auto pb = bias.defined() ? bias.shared() : nullptr;
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [px, pw, pb, n, d, o](Node<T>& self) {
    ConstMatMap<T> gy(self.grad.data(), n, o);
    if (px->requires_grad) {
      MatMap<T>(px->grad_buffer().data(), n, d).noalias() +=
          gy * ConstMatMap<T>(pw->value.data(), o, d);
    }
    if (pw->requires_grad) {
      MatMap<T>(pw->grad_buffer().data(), o, d).noalias() +=
          gy.transpose() * ConstMatMap<T>(px->value.data(), n, d);
    }
    if (pb && pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j) g[j] += self.grad[i * o + j];
    }
  });
}

/// 2-D convolution, weight (O, C, k, k), optional bias (O).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  detail::require(x.shape().size() == 4, "conv2d expects (N, C, H, W) input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), o = weight.dim(0), k = weight.dim(2);
  detail::require(weight.dim(1) == x.dim(1), "conv2d: weight " + shape_string(weight.shape()) +
                                                  " incompatible with input " + shape_string(x.shape()));
  const auto geo = detail::ConvGeometry::make(x.dim(1), x.dim(2), x.dim(3), k, stride, pad);
  const std::size_t in_stride = geo.channels * geo.height * geo.width;
  const std::size_t out_stride = o * geo.cols();
  Tensor<T> out({n, o, geo.out_height, geo.out_width});
  std::vector<T> cols(geo.rows() * geo.cols());
  ConstMatMap<T> w(weight.value().data(), o, geo.rows());
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(x.value().data() + s * in_stride, geo, cols.data());
    MatMap<T>(out.data() + s * out_stride, o, geo.cols()).noalias() =
        w * ConstMatMap<T>(cols.data(), geo.rows(), geo.cols());
    if (bias.defined()) {
      for (std::size_t c = 0; c < o; ++c) {
        T* dst = out.data() + s * out_stride + c * geo.cols();
        const T b = bias.value()[c];
        for (std::size_t i = 0; i < geo.cols(); ++i) dst[i] += b;
      }
    }
  }
  auto px = x.shared(), pw = weight.shared();
  auto pb = bias.defined() ? bias.shared() : nullptr;
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [px, pw, pb, geo, n, o, in_stride, out_stride](Node<T>& self) {
    std::vector<T> cols(geo.rows() * geo.cols());
    std::vector<T> dcols(px->requires_grad ? cols.size() : 0);
    ConstMatMap<T> w(pw->value.data(), o, geo.rows());
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatMap<T> gy(self.grad.data() + s * out_stride, o, geo.cols());
      if (pw->requires_grad) {
        detail::im2col(px->value.data() + s * in_stride, geo, cols.data());
        MatMap<T>(pw->grad_buffer().data(), o, geo.rows()).noalias() +=
            gy * ConstMatMap<T>(cols.data(), geo.rows(), geo.cols()).transpose();
      }
      if (px->requires_grad) {
        MatMap<T>(dcols.data(), geo.rows(), geo.cols()).noalias() = w.transpose() * gy;
        detail::col2im(dcols.data(), geo, px->grad_buffer().data() + s * in_stride);
      }
      if (pb && pb->requires_grad) {
        auto& g = pb->grad_buffer();
        for (std::size_t c = 0; c < o; ++c) {
          const T* src = self.grad.data() + s * out_stride + c * geo.cols();
          T acc{0};
          for (std::size_t i = 0; i < geo.cols(); ++i) acc += src[i];
          g[c] += acc;
        }
      }
    }
  });
}

/// Transposed convolution, weight (C_in, O, k, k), output size
/// (H - 1) * stride - 2 * pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        std::size_t stride, std::size_t pad) {
  detail::require(x.shape().size() == 4, "conv_transpose2d expects (N, C, H, W) input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  detail::require(weight.dim(0) == c, "conv_transpose2d: weight " + shape_string(weight.shape()) +
                                          " incompatible with input " + shape_string(x.shape()));
  const std::size_t o = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = (h - 1) * stride + k - 2 * pad, ow = (wd - 1) * stride + k - 2 * pad;
  // The geometry of the forward convolution this operation is the adjoint of.
  const auto geo = detail::ConvGeometry::make(o, oh, ow, k, stride, pad);
  detail::require(geo.out_height == h && geo.out_width == wd, "conv_transpose2d: inconsistent geometry");
  const std::size_t in_stride = c * h * wd, out_stride = o * oh * ow;
  Tensor<T> out({n, o, oh, ow});
  std::vector<T> cols(geo.rows() * geo.cols());
  ConstMatMap<T> w(weight.value().data(), c, geo.rows());
  for (std::size_t s = 0; s < n; ++s) {
    MatMap<T>(cols.data(), geo.rows(), geo.cols()).noalias() =
        w.transpose() * ConstMatMap<T>(x.value().data() + s * in_stride, c, h * wd);
    detail::col2im(cols.data(), geo, out.data() + s * out_stride);
    if (bias.defined()) {
      for (std::size_t ch = 0; ch < o; ++ch) {
        T* dst = out.data() + s * out_stride + ch * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) dst[i] += bias.value()[ch];
      }
    }
  }
  auto px = x.shared(), pw = weight.shared();
  auto pb = bias.defined() ? bias.shared() : nullptr;
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [=](Node<T>& self) {
    std::vector<T> cols(geo.rows() * geo.cols());
    ConstMatMap<T> w(pw->value.data(), c, geo.rows());
    for (std::size_t s = 0; s < n; ++s) {
      detail::im2col(self.grad.data() + s * out_stride, geo, cols.data());
      ConstMatMap<T> gc(cols.data(), geo.rows(), geo.cols());
      if (px->requires_grad) {
        MatMap<T>(px->grad_buffer().data() + s * in_stride, c, h * wd).noalias() += w * gc;
      }
      if (pw->requires_grad) {
        MatMap<T>(pw->grad_buffer().data(), c, geo.rows()).noalias() +=
            ConstMatMap<T>(px->value.data() + s * in_stride, c, h * wd) * gc.transpose();
      }
      if (pb && pb->requires_grad) {
        auto& g = pb->grad_buffer();
        for (std::size_t ch = 0; ch < o; ++ch) {
          const T* src = self.grad.data() + s * out_stride + ch * oh * ow;
          T acc{0};
          for (std::size_t i = 0; i < oh * ow; ++i) acc += src[i];
          g[ch] += acc;
        }
      }
    }
  });
}

/// Non-overlapping max pooling with window = stride = `size` (floor on odd extents).
template <typename T>
Var<T> max_pool2d(const Var<T>& x, std::size_t size = 2) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  detail::require(oh > 0 && ow > 0, "max_pool2d: input smaller than window");
  Tensor<T> out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const auto& in = x.value();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * size * w + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = base + (oy * size + dy) * w + ox * size + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  auto px = x.shared();
  return make_result<T>(std::move(out), {x}, [px, argmax = std::move(argmax)](Node<T>& self) {
    if (!px->requires_grad) return;
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

/// Running statistics of a batch-normalization layer.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

/// Batch normalization over (N, H, W) per channel for (N, C, H, W) input, or
/// over N for (N, C) input. In training mode batch statistics are used and
/// `stats` is updated; otherwise `stats` normalizes.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, RunningStats<T>* stats,
                  bool training, T momentum, T eps) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = x.size() / (n * c);
  const std::size_t count = n * spatial;
  detail::require(gamma.size() == c && beta.size() == c, "batch_norm: parameter size mismatch");
  detail::require(training || stats, "batch_norm: inference requires running statistics");
  detail::require(!training || count > 1, "batch_norm: training needs more than one value per channel");
  const auto& in = x.value();
  std::vector<T> mu(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      T s{0}, ss{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = in.data() + (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) s += p[j];
      }
      mu[ch] = s / static_cast<T>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = in.data() + (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) ss += (p[j] - mu[ch]) * (p[j] - mu[ch]);
      }
      const T var = ss / static_cast<T>(count);
      inv_std[ch] = T{1} / std::sqrt(var + eps);
      if (stats) {
        const T unbiased = ss / static_cast<T>(count - 1);
        stats->mean[ch] = (T{1} - momentum) * stats->mean[ch] + momentum * mu[ch];
        stats->var[ch] = (T{1} - momentum) * stats->var[ch] + momentum * unbiased;
      }
    } else {
      mu[ch] = stats->mean[ch];
      inv_std[ch] = T{1} / std::sqrt(stats->var[ch] + eps);
    }
  }
  Tensor<T> xhat(x.shape()), out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * spatial;
      for (std::size_t j = 0; j < spatial; ++j) {
        xhat[base + j] = (in[base + j] - mu[ch]) * inv_std[ch];
        out[base + j] = gamma.value()[ch] * xhat[base + j] + beta.value()[ch];
      }
    }
  auto px = x.shared(), pg = gamma.shared(), pb = beta.shared();
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [px, pg, pb, xhat = std::move(xhat), inv_std, n, c, spatial, count,
                         training](Node<T>& self) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) {
          sum_dy += self.grad[base + j];
          sum_dy_xhat += self.grad[base + j] * xhat[base + j];
        }
      }
      if (pg->requires_grad) pg->grad_buffer()[ch] += sum_dy_xhat;
      if (pb->requires_grad) pb->grad_buffer()[ch] += sum_dy;
      if (!px->requires_grad) continue;
      auto& g = px->grad_buffer();
      const T gm = pg->value[ch];
      const T m = static_cast<T>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) {
          if (training) {
            g[base + j] += gm * inv_std[ch] *
                           (self.grad[base + j] - sum_dy / m - xhat[base + j] * sum_dy_xhat / m);
          } else {
            g[base + j] += gm * inv_std[ch] * self.grad[base + j];
          }
        }
      }
    }
  });
}

/// Normalization with per-sample statistics over (H, W) and per-sample scale
/// and shift: gamma, beta of shape (N, C). For a single image this is batch
/// normalization with batch size one.
template <typename T>
Var<T> modulated_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = x.size() / (n * c);
  detail::require(gamma.size() == n * c && beta.size() == n * c,
                  "modulated_norm: gamma/beta must be (N, C)");
  detail::require(spatial > 1, "modulated_norm: needs more than one spatial position");
  const auto& in = x.value();
  Tensor<T> xhat(x.shape()), out(x.shape());
  std::vector<T> inv_std(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* p = in.data() + plane * spatial;
    T s{0}, ss{0};
    for (std::size_t j = 0; j < spatial; ++j) s += p[j];
    const T mu = s / static_cast<T>(spatial);
    for (std::size_t j = 0; j < spatial; ++j) ss += (p[j] - mu) * (p[j] - mu);
    inv_std[plane] = T{1} / std::sqrt(ss / static_cast<T>(spatial) + eps);
    for (std::size_t j = 0; j < spatial; ++j) {
      xhat[plane * spatial + j] = (p[j] - mu) * inv_std[plane];
      out[plane * spatial + j] = gamma.value()[plane] * xhat[plane * spatial + j] + beta.value()[plane];
    }
  }
  auto px = x.shared(), pg = gamma.shared(), pb = beta.shared();
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [px, pg, pb, xhat = std::move(xhat), inv_std, n, c, spatial](Node<T>& self) {
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const std::size_t base = plane * spatial;
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t j = 0; j < spatial; ++j) {
        sum_dy += self.grad[base + j];
        sum_dy_xhat += self.grad[base + j] * xhat[base + j];
      }
      if (pg->requires_grad) pg->grad_buffer()[plane] += sum_dy_xhat;
      if (pb->requires_grad) pb->grad_buffer()[plane] += sum_dy;
      if (!px->requires_grad) continue;
      auto& g = px->grad_buffer();
      const T m = static_cast<T>(spatial);
      const T k = pg->value[plane] * inv_std[plane];
      for (std::size_t j = 0; j < spatial; ++j) {
        g[base + j] += k * (self.grad[base + j] - sum_dy / m - xhat[base + j] * sum_dy_xhat / m);
      }
    }
  });
}

// ----------------------------------------------------------------- fusion op

/// Block-wise convex fusion: out = w (.) original + (1 - w) (.) generated,
/// where w (N, g*g) is expanded to the image size with floor-boundary cells
/// and shared across channels.
template <typename T>
Var<T> fuse_blocks(const Var<T>& original, const Var<T>& generated, const Var<T>& weights,
                   std::size_t grid) {
  detail::require_same(original.shape(), generated.shape(), "fuse_blocks");
  detail::require(original.shape().size() == 4, "fuse_blocks expects (N, C, H, W) images");
  const std::size_t n = original.dim(0), c = original.dim(1), h = original.dim(2), w = original.dim(3);
  detail::require(weights.size() == n * grid * grid, "fuse_blocks: weights must be (N, g*g)");
  const auto rows = block_index(grid, h);
  const auto cols = block_index(grid, w);
  Tensor<T> out(original.shape());
  const auto& a = original.value();
  const auto& b = generated.value();
  const auto& wt = weights.value();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = ((s * c + ch) * h + y) * w + x;
          const T wv = wt[s * grid * grid + rows[y] * grid + cols[x]];
          out[i] = wv * a[i] + (T{1} - wv) * b[i];
        }
  auto pa = original.shared(), pg = generated.shared(), pw = weights.shared();
  return make_result<T>(std::move(out), {original, generated, weights},
                        [pa, pg, pw, rows, cols, n, c, h, w, grid](Node<T>& self) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = ((s * c + ch) * h + y) * w + x;
            const std::size_t cell = s * grid * grid + rows[y] * grid + cols[x];
            const T wv = pw->value[cell];
            const T gy = self.grad[i];
            if (pa->requires_grad) pa->grad_buffer()[i] += wv * gy;
            if (pg->requires_grad) pg->grad_buffer()[i] += (T{1} - wv) * gy;
            if (pw->requires_grad) pw->grad_buffer()[cell] += gy * (pa->value[i] - pg->value[i]);
          }
  });
}

// --------------------------------------------------------------------- losses

/// Mean absolute difference (subgradient 0 at equality).
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "l1_loss");
  const std::size_t count = a.size();
  T total{0};
  for (std::size_t i = 0; i < count; ++i) total += std::abs(a.value()[i] - b.value()[i]);
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(Tensor<T>({1}, {total / static_cast<T>(count)}), {a, b},
                        [pa, pb, count](Node<T>& self) {
    const T k = self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = pa->value[i] - pb->value[i];
      const T sgn = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (pa->requires_grad) pa->grad_buffer()[i] += k * sgn;
      if (pb->requires_grad) pb->grad_buffer()[i] -= k * sgn;
    }
  });
}

/// Mean squared difference.
template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mse_loss");
  const std::size_t count = a.size();
  T total{0};
  for (std::size_t i = 0; i < count; ++i) {
    const T d = a.value()[i] - b.value()[i];
    total += d * d;
  }
  auto pa = a.shared(), pb = b.shared();
  return make_result<T>(Tensor<T>({1}, {total / static_cast<T>(count)}), {a, b},
                        [pa, pb, count](Node<T>& self) {
    const T k = T{2} * self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = pa->value[i] - pb->value[i];
      if (pa->requires_grad) pa->grad_buffer()[i] += k * d;
      if (pb->requires_grad) pb->grad_buffer()[i] -= k * d;
    }
  });
}

/// One-dimensional earth mover distance between the empirical distributions
/// of the coordinates of `z` and of the fixed sample `r`: the mean absolute
/// difference of the sorted vectors.
template <typename T>
Var<T> earth_mover_1d(const Var<T>& z, const Tensor<T>& r) {
  detail::require(z.size() == r.size(), "earth mover distance: dimension mismatch (" +
                                            std::to_string(z.size()) + " vs " +
                                            std::to_string(r.size()) + ")");
  detail::require(z.size() > 0, "earth mover distance of empty vectors");
  const std::size_t d = z.size();
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  const auto& zv = z.value();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return zv[a] < zv[b]; });
  std::vector<T> rs(r.storage());
  std::sort(rs.begin(), rs.end());
  T total{0};
  std::vector<T> sign(d);
  for (std::size_t k = 0; k < d; ++k) {
    const T diff = zv[order[k]] - rs[k];
    total += std::abs(diff);
    sign[order[k]] = diff > T{0} ? T{1} : (diff < T{0} ? T{-1} : T{0});
  }
  auto pz = z.shared();
  return make_result<T>(Tensor<T>({1}, {total / static_cast<T>(d)}), {z},
                        [pz, sign = std::move(sign), d](Node<T>& self) {
    if (!pz->requires_grad) return;
    auto& g = pz->grad_buffer();
    for (std::size_t i = 0; i < d; ++i) g[i] += self.grad[0] * sign[i] / static_cast<T>(d);
  });
}

/// Distances between every query row (Q, D) and every prototype row (P, D).
/// Euclidean by default, squared Euclidean when `squared`.
template <typename T>
Var<T> pairwise_distances(const Var<T>& queries, const Var<T>& prototypes, bool squared) {
  detail::require(queries.shape().size() == 2 && prototypes.shape().size() == 2 &&
                      queries.dim(1) == prototypes.dim(1),
                  "pairwise_distances expects (Q, D) and (P, D)");
  const std::size_t nq = queries.dim(0), np = prototypes.dim(0), d = queries.dim(1);
  Tensor<T> out({nq, np});
  const T* q = queries.value().data();
  const T* p = prototypes.value().data();
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < np; ++j) {
      T acc{0};
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = q[i * d + k] - p[j * d + k];
        acc += diff * diff;
      }
      out[i * np + j] = squared ? acc : std::sqrt(acc);
    }
  auto pq = queries.shared(), pp = prototypes.shared();
  return make_result<T>(std::move(out), {queries, prototypes}, [pq, pp, nq, np, d, squared](Node<T>& self) {
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < np; ++j) {
        const T dist = self.value[i * np + j];
        T coef;
        if (squared) {
          coef = T{2} * self.grad[i * np + j];
        } else {
          if (dist <= T{0}) continue;
          coef = self.grad[i * np + j] / dist;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = pq->value[i * d + k] - pp->value[j * d + k];
          if (pq->requires_grad) pq->grad_buffer()[i * d + k] += coef * diff;
          if (pp->requires_grad) pp->grad_buffer()[j * d + k] -= coef * diff;
        }
      }
  });
}

/// Per-class mean of embedding rows; labels in [0, classes).
template <typename T>
Var<T> class_means(const Var<T>& embeddings, const std::vector<std::size_t>& labels,
                   std::size_t classes) {
  detail::require(embeddings.shape().size() == 2 && embeddings.dim(0) == labels.size(),
                  "class_means: one label per embedding row required");
  const std::size_t d = embeddings.dim(1);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t label : labels) {
    detail::require(label < classes, "class_means: label " + std::to_string(label) + " out of range");
    ++counts[label];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    detail::require(counts[c] > 0, "class_means: class " + std::to_string(c) + " has no embeddings");
  }
  Tensor<T> out({classes, d});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) out[labels[i] * d + k] += embeddings.value()[i * d + k];
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < d; ++k) out[c * d + k] /= static_cast<T>(counts[c]);
  auto pe = embeddings.shared();
  return make_result<T>(std::move(out), {embeddings}, [pe, labels, counts, d](Node<T>& self) {
    if (!pe->requires_grad) return;
    auto& g = pe->grad_buffer();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const T inv = T{1} / static_cast<T>(counts[labels[i]]);
      for (std::size_t k = 0; k < d; ++k) g[i * d + k] += self.grad[labels[i] * d + k] * inv;
    }
  });
}

/// Row-wise softmax of a (Q, n) logit matrix (not differentiable).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t nq = logits.dim(0), n = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < nq; ++i) {
    T mx = logits[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, logits[i * n + j]);
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(logits[i * n + j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return out;
}

/// Mean over rows of -log(max(softmax(logits)[label], floor)). `floored`
/// receives the number of rows where the floor was active.
template <typename T>
Var<T> cross_entropy_logits(const Var<T>& logits, const std::vector<std::size_t>& labels, T floor,
                            std::size_t* floored = nullptr) {
  detail::require(logits.shape().size() == 2 && logits.dim(0) == labels.size(),
                  "cross_entropy_logits: one label per row required");
  const std::size_t nq = logits.dim(0), n = logits.dim(1);
  Tensor<T> prob = softmax_rows(logits.value());
  T total{0};
  std::vector<char> active(nq, 1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    detail::require(labels[i] < n, "cross_entropy_logits: label out of range");
    T p = prob[i * n + labels[i]];
    if (p < floor) {
      p = floor;
      active[i] = 0;
      ++hits;
    }
    total -= std::log(p);
  }
  if (floored) *floored = hits;
  auto pl = logits.shared();
  return make_result<T>(Tensor<T>({1}, {total / static_cast<T>(nq)}), {logits},
                        [pl, prob = std::move(prob), labels, active = std::move(active), nq, n](Node<T>& self) {
    if (!pl->requires_grad) return;
    auto& g = pl->grad_buffer();
    const T k = self.grad[0] / static_cast<T>(nq);
    for (std::size_t i = 0; i < nq; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        g[i * n + j] += k * (prob[i * n + j] - (j == labels[i] ? T{1} : T{0}));
      }
    }
  });
}

}  // namespace metairnet::ops
