#include "pedsense/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "pedsense/error.hpp"

namespace pedsense::nn {
namespace {

void require(bool cond, const char* code, const std::string& msg) {
  if (!cond) throw_input(code, msg);
}

// Rows/cols of a tensor treated as a matrix over its last axis.
std::pair<int, int> as_rows(const Shape& shape) {
  require(!shape.empty(), "nn.shape_mismatch", "rank-0 tensor");
  int cols = shape.back();
  int rows = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, cols};
}

// col is [Ho*Wo][C*kh*kw] row-major.
void im2col(const double* src, int c_in, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, double* col) {
  const int patch = c_in * kh * kw;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* dst = col + static_cast<size_t>(oy * wo + ox) * patch;
      int idx = 0;
      for (int c = 0; c < c_in; ++c) {
        const double* plane = src + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy * stride + ky - pad;
          for (int kx = 0; kx < kw; ++kx, ++idx) {
            const int x = ox * stride + kx - pad;
            dst[idx] = (y >= 0 && y < h && x >= 0 && x < w)
                           ? plane[y * w + x]
                           : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* col, int c_in, int h, int w, int kh,
                       int kw, int stride, int pad, int ho, int wo,
                       double* dst) {
  const int patch = c_in * kh * kw;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* src = col + static_cast<size_t>(oy * wo + ox) * patch;
      int idx = 0;
      for (int c = 0; c < c_in; ++c) {
        double* plane = dst + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy * stride + ky - pad;
          for (int kx = 0; kx < kw; ++kx, ++idx) {
            const int x = ox * stride + kx - pad;
            if (y >= 0 && y < h && x >= 0 && x < w) {
              plane[y * w + x] += src[idx];
            }
          }
        }
      }
    }
  }
}

double dot(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "nn.shape_mismatch",
          "add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = make_op("add", a.shape(), {a, b}, [a = a, b = b](Node& node) mutable {
    if (a.requires_grad()) {
      for (int i = 0; i < a.size(); ++i) a.grad()[i] += node.grad[i];
    }
    if (b.requires_grad()) {
      for (int i = 0; i < b.size(); ++i) b.grad()[i] += node.grad[i];
    }
  });
  for (int i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] + b.data()[i];
  }
  check_finite("add", out.shape(), out.data());
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = make_op("scale", x.shape(), {x}, [x = x, factor](Node& node) mutable {
    if (!x.requires_grad()) return;
    for (int i = 0; i < x.size(); ++i) x.grad()[i] += factor * node.grad[i];
  });
  for (int i = 0; i < out.size(); ++i) out.data()[i] = factor * x.data()[i];
  check_finite("scale", out.shape(), out.data());
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[0],
          "nn.shape_mismatch",
          "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make_op("matmul", {m, n}, {a, b}, [a = a, b = b, m, k, n](Node& node) mutable {
    const double* go = node.grad.data();
    if (a.requires_grad()) {
      // gA[i,:] += sum_j go[i,j] * B[j-th row? no: B[k x n], gA = go * B^T
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          a.grad()[i * k + kk] +=
              dot(go + static_cast<size_t>(i) * n,
                  b.data().data() + static_cast<size_t>(kk) * n, n);
        }
      }
    }
    if (b.requires_grad()) {
      // gB = A^T * go
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          axpy(a.data()[i * k + kk], go + static_cast<size_t>(i) * n,
               b.grad().data() + static_cast<size_t>(kk) * n, n);
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      axpy(a.data()[i * k + kk],
           b.data().data() + static_cast<size_t>(kk) * n,
           out.data().data() + static_cast<size_t>(i) * n, n);
    }
  }
  check_finite("matmul", out.shape(), out.data());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[1],
          "nn.shape_mismatch",
          "matmul_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor out = make_op("matmul_nt", {m, n}, {a, b}, [a = a, b = b, m, k, n](Node& node) mutable {
    const double* go = node.grad.data();
    if (a.requires_grad()) {
      // gA = go * B
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          axpy(go[i * n + j], b.data().data() + static_cast<size_t>(j) * k,
               a.grad().data() + static_cast<size_t>(i) * k, k);
        }
      }
    }
    if (b.requires_grad()) {
      // gB = go^T * A
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          axpy(go[i * n + j], a.data().data() + static_cast<size_t>(i) * k,
               b.grad().data() + static_cast<size_t>(j) * k, k);
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out.data()[i * n + j] =
          dot(a.data().data() + static_cast<size_t>(i) * k,
              b.data().data() + static_cast<size_t>(j) * k, k);
    }
  }
  check_finite("matmul_nt", out.shape(), out.data());
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2 &&
              x.shape()[1] == w.shape()[0] && b.shape().size() == 1 &&
              b.shape()[0] == w.shape()[1],
          "nn.shape_mismatch",
          "linear " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const int n = x.shape()[0], d = x.shape()[1], e = w.shape()[1];
  Tensor out = make_op("linear", {n, e}, {x, w, b}, [x = x, w = w, b = b, n, d, e](Node& node) mutable {
    const double* go = node.grad.data();
    if (x.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          x.grad()[i * d + j] +=
              dot(go + static_cast<size_t>(i) * e,
                  w.data().data() + static_cast<size_t>(j) * e, e);
        }
      }
    }
    if (w.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          axpy(x.data()[i * d + j], go + static_cast<size_t>(i) * e,
               w.grad().data() + static_cast<size_t>(j) * e, e);
        }
      }
    }
    if (b.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        axpy(1.0, go + static_cast<size_t>(i) * e, b.grad().data(), e);
      }
    }
  });
  for (int i = 0; i < n; ++i) {
    double* row = out.data().data() + static_cast<size_t>(i) * e;
    std::copy(b.data().begin(), b.data().end(), row);
    for (int j = 0; j < d; ++j) {
      axpy(x.data()[i * d + j], w.data().data() + static_cast<size_t>(j) * e,
           row, e);
    }
  }
  check_finite("linear", out.shape(), out.data());
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding) {
  require(x.shape().size() == 4 && w.shape().size() == 4 &&
              x.shape()[1] == w.shape()[1] && b.shape().size() == 1 &&
              b.shape()[0] == w.shape()[0],
          "nn.shape_mismatch",
          "conv2d " + shape_str(x.shape()) + " with " + shape_str(w.shape()));
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            ww = x.shape()[3];
  const int k = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(kh <= h + 2 * padding && kw <= ww + 2 * padding, "nn.shape_mismatch",
          "kernel larger than padded input");
  require((h + 2 * padding - kh) % stride == 0 &&
              (ww + 2 * padding - kw) % stride == 0,
          "conv.non_integral_output", "output size is not integral");
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (ww + 2 * padding - kw) / stride + 1;
  const int patch = c * kh * kw;
  const int pixels = ho * wo;

  Tensor out = make_op(
      "conv2d", {n, k, ho, wo}, {x, w, b},
      [x = x, w = w, b = b, n, c, h, ww, k, kh, kw, stride, padding, ho, wo, patch,
       pixels](Node& node) mutable {
        std::vector<double> col(static_cast<size_t>(pixels) * patch);
        std::vector<double> dcol(static_cast<size_t>(pixels) * patch);
        const double* go_all = node.grad.data();
        for (int i = 0; i < n; ++i) {
          const double* src =
              x.data().data() + static_cast<size_t>(i) * c * h * ww;
          const double* go = go_all + static_cast<size_t>(i) * k * pixels;
          const bool need_col = x.requires_grad() || w.requires_grad();
          if (need_col) {
            im2col(src, c, h, ww, kh, kw, stride, padding, ho, wo, col.data());
          }
          if (w.requires_grad()) {
            for (int kk = 0; kk < k; ++kk) {
              double* gw = w.grad().data() + static_cast<size_t>(kk) * patch;
              const double* gk = go + static_cast<size_t>(kk) * pixels;
              for (int p = 0; p < pixels; ++p) {
                axpy(gk[p], col.data() + static_cast<size_t>(p) * patch, gw,
                     patch);
              }
            }
          }
          if (b.requires_grad()) {
            for (int kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* gk = go + static_cast<size_t>(kk) * pixels;
              for (int p = 0; p < pixels; ++p) acc += gk[p];
              b.grad()[kk] += acc;
            }
          }
          if (x.requires_grad()) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            for (int kk = 0; kk < k; ++kk) {
              const double* wk =
                  w.data().data() + static_cast<size_t>(kk) * patch;
              const double* gk = go + static_cast<size_t>(kk) * pixels;
              for (int p = 0; p < pixels; ++p) {
                axpy(gk[p], wk, dcol.data() + static_cast<size_t>(p) * patch,
                     patch);
              }
            }
            col2im_accumulate(dcol.data(), c, h, ww, kh, kw, stride, padding,
                              ho, wo,
                              x.grad().data() +
                                  static_cast<size_t>(i) * c * h * ww);
          }
        }
      });

  std::vector<double> col(static_cast<size_t>(pixels) * patch);
  for (int i = 0; i < n; ++i) {
    const double* src = x.data().data() + static_cast<size_t>(i) * c * h * ww;
    im2col(src, c, h, ww, kh, kw, stride, padding, ho, wo, col.data());
    double* dst = out.data().data() + static_cast<size_t>(i) * k * pixels;
    for (int kk = 0; kk < k; ++kk) {
      const double* wk = w.data().data() + static_cast<size_t>(kk) * patch;
      const double bias = b.data()[kk];
      double* row = dst + static_cast<size_t>(kk) * pixels;
      for (int p = 0; p < pixels; ++p) {
        row[p] = bias + dot(wk, col.data() + static_cast<size_t>(p) * patch,
                            patch);
      }
    }
  }
  check_finite("conv2d", out.shape(), out.data());
  return out;
}

Tensor maxpool2d(const Tensor& x, int window, int stride) {
  require(x.shape().size() == 4, "nn.shape_mismatch", "maxpool2d needs NCHW");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            w = x.shape()[3];
  require(window <= h && window <= w, "nn.shape_mismatch",
          "pool window exceeds spatial dims");
  const int ho = (h - window) / stride + 1;
  const int wo = (w - window) / stride + 1;
  auto argmax = std::make_shared<std::vector<int>>(
      static_cast<size_t>(n) * c * ho * wo);

  Tensor out = make_op("maxpool2d", {n, c, ho, wo}, {x},
                       [x = x, argmax](Node& node) mutable {
                         if (!x.requires_grad()) return;
                         for (size_t i = 0; i < node.grad.size(); ++i) {
                           x.grad()[(*argmax)[i]] += node.grad[i];
                         }
                       });
  size_t out_idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int cc = 0; cc < c; ++cc) {
      const double* plane =
          x.data().data() + (static_cast<size_t>(i) * c + cc) * h * w;
      const size_t plane_off = (static_cast<size_t>(i) * c + cc) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++out_idx) {
          double best = -1e300;
          int best_idx = 0;
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const int idx = (oy * stride + ky) * w + (ox * stride + kx);
              // strict > keeps the first maximal element on ties
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          out.data()[out_idx] = best;
          (*argmax)[out_idx] = static_cast<int>(plane_off) + best_idx;
        }
      }
    }
  }
  check_finite("maxpool2d", out.shape(), out.data());
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_op("relu", x.shape(), {x}, [x = x](Node& node) mutable {
    if (!x.requires_grad()) return;
    for (int i = 0; i < x.size(); ++i) {
      if (x.data()[i] > 0.0) x.grad()[i] += node.grad[i];
    }
  });
  for (int i = 0; i < out.size(); ++i) {
    out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  }
  check_finite("relu", out.shape(), out.data());
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_op("sigmoid", x.shape(), {x}, [x = x](Node& node) mutable {
    if (!x.requires_grad()) return;
    for (int i = 0; i < x.size(); ++i) {
      const double y = node.value[i];
      x.grad()[i] += node.grad[i] * y * (1.0 - y);
    }
  });
  for (int i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    if (v >= 0.0) {
      out.data()[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out.data()[i] = e / (1.0 + e);
    }
  }
  check_finite("sigmoid", out.shape(), out.data());
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const auto [rows, cols] = as_rows(x.shape());
  Tensor out = make_op("softmax", x.shape(), {x},
                       [x = x, rows = rows, cols = cols](Node& node) mutable {
                         if (!x.requires_grad()) return;
                         for (int r = 0; r < rows; ++r) {
                           const double* y =
                               node.value.data() + static_cast<size_t>(r) * cols;
                           const double* go =
                               node.grad.data() + static_cast<size_t>(r) * cols;
                           double inner = dot(y, go, cols);
                           double* gx =
                               x.grad().data() + static_cast<size_t>(r) * cols;
                           for (int c = 0; c < cols; ++c) {
                             gx[c] += y[c] * (go[c] - inner);
                           }
                         }
                       });
  for (int r = 0; r < rows; ++r) {
    const double* src = x.data().data() + static_cast<size_t>(r) * cols;
    double* dst = out.data().data() + static_cast<size_t>(r) * cols;
    double mx = *std::max_element(src, src + cols);
    double denom = 0.0;
    for (int c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      denom += dst[c];
    }
    for (int c = 0; c < cols; ++c) dst[c] /= denom;
  }
  check_finite("softmax", out.shape(), out.data());
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps) {
  const auto [rows, cols] = as_rows(x.shape());
  require(gain.shape() == Shape{cols} && shift.shape() == Shape{cols},
          "nn.shape_mismatch", "layer_norm gain/shift must have length D");
  auto normalized =
      std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);

  Tensor out = make_op(
      "layer_norm", x.shape(), {x, gain, shift},
      [x = x, gain = gain, shift = shift, normalized, inv_std, rows = rows,
       cols = cols](Node& node) mutable {
        for (int r = 0; r < rows; ++r) {
          const double* y = normalized->data() + static_cast<size_t>(r) * cols;
          const double* go = node.grad.data() + static_cast<size_t>(r) * cols;
          if (gain.requires_grad()) {
            for (int c = 0; c < cols; ++c) gain.grad()[c] += go[c] * y[c];
          }
          if (shift.requires_grad()) {
            for (int c = 0; c < cols; ++c) shift.grad()[c] += go[c];
          }
          if (x.requires_grad()) {
            double mean_u = 0.0, mean_uy = 0.0;
            for (int c = 0; c < cols; ++c) {
              const double u = gain.data()[c] * go[c];
              mean_u += u;
              mean_uy += u * y[c];
            }
            mean_u /= cols;
            mean_uy /= cols;
            double* gx = x.grad().data() + static_cast<size_t>(r) * cols;
            const double is = (*inv_std)[r];
            for (int c = 0; c < cols; ++c) {
              const double u = gain.data()[c] * go[c];
              gx[c] += is * (u - mean_u - y[c] * mean_uy);
            }
          }
        }
      });
  for (int r = 0; r < rows; ++r) {
    const double* src = x.data().data() + static_cast<size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += src[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* y = normalized->data() + static_cast<size_t>(r) * cols;
    double* dst = out.data().data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      y[c] = (src[c] - mean) * is;
      dst[c] = y[c] * gain.data()[c] + shift.data()[c];
    }
  }
  check_finite("layer_norm", out.shape(), out.data());
  return out;
}

Tensor slice_cols(const Tensor& x, int col_begin, int col_end) {
  require(x.shape().size() == 2 && col_begin >= 0 && col_begin < col_end &&
              col_end <= x.shape()[1],
          "nn.shape_mismatch", "bad column slice");
  const int rows = x.shape()[0], cols = x.shape()[1];
  const int width = col_end - col_begin;
  Tensor out = make_op("slice_cols", {rows, width}, {x},
                       [x = x, col_begin, rows, cols, width](Node& node) mutable {
                         if (!x.requires_grad()) return;
                         for (int r = 0; r < rows; ++r) {
                           axpy(1.0,
                                node.grad.data() +
                                    static_cast<size_t>(r) * width,
                                x.grad().data() +
                                    static_cast<size_t>(r) * cols + col_begin,
                                width);
                         }
                       });
  for (int r = 0; r < rows; ++r) {
    std::copy(x.data().begin() + static_cast<size_t>(r) * cols + col_begin,
              x.data().begin() + static_cast<size_t>(r) * cols + col_end,
              out.data().begin() + static_cast<size_t>(r) * width);
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "nn.shape_mismatch", "concat of nothing");
  const int rows = parts[0].shape()[0];
  int total = 0;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.shape()[0] == rows, "nn.shape_mismatch",
            "concat_cols row mismatch");
    total += p.shape()[1];
  }
  Tensor out = make_op("concat_cols", {rows, total}, parts,
                       [parts, rows, total](Node& node) mutable {
                         int off = 0;
                         for (auto p : parts) {
                           const int w = p.shape()[1];
                           if (p.requires_grad()) {
                             for (int r = 0; r < rows; ++r) {
                               axpy(1.0,
                                    node.grad.data() +
                                        static_cast<size_t>(r) * total + off,
                                    p.grad().data() +
                                        static_cast<size_t>(r) * w,
                                    w);
                             }
                           }
                           off += w;
                         }
                       });
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.shape()[1];
    for (int r = 0; r < rows; ++r) {
      std::copy(p.data().begin() + static_cast<size_t>(r) * w,
                p.data().begin() + static_cast<size_t>(r + 1) * w,
                out.data().begin() + static_cast<size_t>(r) * total + off);
    }
    off += w;
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int row_begin, int row_end) {
  require(x.shape().size() == 2 && row_begin >= 0 && row_begin < row_end &&
              row_end <= x.shape()[0],
          "nn.shape_mismatch", "bad row slice");
  const int cols = x.shape()[1];
  const int rows = row_end - row_begin;
  Tensor out = make_op("slice_rows", {rows, cols}, {x},
                       [x = x, row_begin, rows, cols](Node& node) mutable {
                         if (!x.requires_grad()) return;
                         axpy(1.0, node.grad.data(),
                              x.grad().data() +
                                  static_cast<size_t>(row_begin) * cols,
                              rows * cols);
                       });
  std::copy(x.data().begin() + static_cast<size_t>(row_begin) * cols,
            x.data().begin() + static_cast<size_t>(row_end) * cols,
            out.data().begin());
  return out;
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                    double eps) {
  require(x.shape().size() == 4, "nn.shape_mismatch", "channel_norm needs NCHW");
  const int n = x.shape()[0], c = x.shape()[1];
  const int area = x.shape()[2] * x.shape()[3];
  require(gain.shape() == Shape{c} && shift.shape() == Shape{c},
          "nn.shape_mismatch", "channel_norm gain/shift must have length C");
  // Layer norm over the channel axis: each spatial position's channel vector
  // is standardized, so per-sample energy differences survive to the pool.
  const int per_sample = c * area;
  const int groups = n * area;
  auto normalized = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);

  Tensor out = make_op(
      "channel_norm", x.shape(), {x, gain, shift},
      [x = x, gain = gain, shift = shift, normalized, inv_std, n, c, area,
       per_sample](Node& node) mutable {
        for (int i = 0; i < n; ++i) {
          const size_t base = static_cast<size_t>(i) * per_sample;
          const double* y = normalized->data() + base;
          const double* go = node.grad.data() + base;
          if (gain.requires_grad() || shift.requires_grad()) {
            for (int cc = 0; cc < c; ++cc) {
              double gy = 0.0, gsum = 0.0;
              for (int p = 0; p < area; ++p) {
                gy += go[cc * area + p] * y[cc * area + p];
                gsum += go[cc * area + p];
              }
              if (gain.requires_grad()) gain.grad()[cc] += gy;
              if (shift.requires_grad()) shift.grad()[cc] += gsum;
            }
          }
          if (x.requires_grad()) {
            double* gx = x.grad().data() + base;
            for (int p = 0; p < area; ++p) {
              double mean_u = 0.0, mean_uy = 0.0;
              for (int cc = 0; cc < c; ++cc) {
                const double u = gain.data()[cc] * go[cc * area + p];
                mean_u += u;
                mean_uy += u * y[cc * area + p];
              }
              mean_u /= c;
              mean_uy /= c;
              const double is = (*inv_std)[static_cast<size_t>(i) * area + p];
              for (int cc = 0; cc < c; ++cc) {
                const double u = gain.data()[cc] * go[cc * area + p];
                gx[cc * area + p] +=
                    is * (u - mean_u - y[cc * area + p] * mean_uy);
              }
            }
          }
        }
      });
  for (int i = 0; i < n; ++i) {
    const size_t base = static_cast<size_t>(i) * per_sample;
    const double* src = x.data().data() + base;
    double* y = normalized->data() + base;
    double* dst = out.data().data() + base;
    for (int p = 0; p < area; ++p) {
      double mean = 0.0;
      for (int cc = 0; cc < c; ++cc) mean += src[cc * area + p];
      mean /= c;
      double var = 0.0;
      for (int cc = 0; cc < c; ++cc) {
        const double d = src[cc * area + p] - mean;
        var += d * d;
      }
      var /= c;
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(i) * area + p] = is;
      for (int cc = 0; cc < c; ++cc) {
        y[cc * area + p] = (src[cc * area + p] - mean) * is;
        dst[cc * area + p] =
            y[cc * area + p] * gain.data()[cc] + shift.data()[cc];
      }
    }
  }
  check_finite("channel_norm", out.shape(), out.data());
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_size(shape) == x.size(), "nn.shape_mismatch",
          "reshape to incompatible size " + shape_str(shape));
  Tensor out = make_op("reshape", std::move(shape), {x}, [x = x](Node& node) mutable {
    if (!x.requires_grad()) return;
    for (int i = 0; i < x.size(); ++i) x.grad()[i] += node.grad[i];
  });
  out.data() = x.data();
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_op("sum", {1}, {x}, [x = x](Node& node) mutable {
    if (!x.requires_grad()) return;
    for (int i = 0; i < x.size(); ++i) x.grad()[i] += node.grad[0];
  });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  check_finite("sum", out.shape(), out.data());
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.shape().size() == 4, "nn.shape_mismatch", "gap needs NCHW");
  const int n = x.shape()[0], c = x.shape()[1];
  const int area = x.shape()[2] * x.shape()[3];
  Tensor out = make_op("global_avg_pool", {n, c}, {x},
                       [x = x, n, c, area](Node& node) mutable {
                         if (!x.requires_grad()) return;
                         for (int i = 0; i < n * c; ++i) {
                           const double g = node.grad[i] / area;
                           double* gx =
                               x.grad().data() + static_cast<size_t>(i) * area;
                           for (int p = 0; p < area; ++p) gx[p] += g;
                         }
                       });
  for (int i = 0; i < n * c; ++i) {
    const double* src = x.data().data() + static_cast<size_t>(i) * area;
    double acc = 0.0;
    for (int p = 0; p < area; ++p) acc += src[p];
    out.data()[i] = acc / area;
  }
  check_finite("global_avg_pool", out.shape(), out.data());
  return out;
}

BceResult bce_loss(const Tensor& probabilities,
                   const std::vector<int>& targets) {
  require(static_cast<int>(targets.size()) == probabilities.size(),
          "nn.shape_mismatch", "bce target length mismatch");
  const int n = probabilities.size();
  require(n > 0, "nn.shape_mismatch", "bce on empty batch");
  constexpr double kClamp = 1e-7;

  // Per-element loss with clamped probabilities.
  Tensor elements = make_op(
      "bce_elements", {n}, {probabilities},
      [probabilities = probabilities, targets, kClamp](Node& node) mutable {
        if (!probabilities.requires_grad()) return;
        for (size_t i = 0; i < targets.size(); ++i) {
          const double p =
              std::clamp(probabilities.data()[i], kClamp, 1.0 - kClamp);
          const double d = targets[i] == 1 ? -1.0 / p : 1.0 / (1.0 - p);
          probabilities.grad()[i] += node.grad[i] * d;
        }
      });
  int num_pos = 0;
  for (int i = 0; i < n; ++i) {
    const double p = std::clamp(probabilities.data()[i], kClamp, 1.0 - kClamp);
    elements.data()[i] = targets[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
    if (targets[i] == 1) ++num_pos;
  }
  check_finite("bce_elements", elements.shape(), elements.data());

  auto masked_sum = [&](int cls) {
    Tensor mask = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) {
      if (targets[i] == cls) mask.data()[i] = 1.0;
    }
    Tensor out = make_op("bce_masked_sum", {1}, {elements},
                         [elements, mask](Node& node) mutable {
                           if (!elements.requires_grad()) return;
                           for (int i = 0; i < elements.size(); ++i) {
                             elements.grad()[i] += node.grad[0] * mask.data()[i];
                           }
                         });
    out.data()[0] = dot(elements.data().data(), mask.data().data(), n);
    return out;
  };

  BceResult result;
  result.num_pos = num_pos;
  result.num_neg = n - num_pos;
  result.pos_sum = masked_sum(1);
  result.neg_sum = masked_sum(0);
  result.mean_loss =
      scale(add(result.pos_sum, result.neg_sum), 1.0 / static_cast<double>(n));
  return result;
}

Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<int>& targets) {
  require(logits.shape().size() >= 2, "nn.shape_mismatch",
          "cross entropy needs at least 2-D logits");
  const auto [rows, cols] = as_rows(logits.shape());
  require(static_cast<int>(targets.size()) == rows, "nn.shape_mismatch",
          "cross entropy target length mismatch");
  auto probs =
      std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols);

  Tensor out = make_op("cross_entropy", {1}, {logits},
                       [logits = logits, targets, probs, rows = rows,
                        cols = cols](Node& node) mutable {
                         if (!logits.requires_grad()) return;
                         const double g = node.grad[0] / rows;
                         for (int r = 0; r < rows; ++r) {
                           const double* p =
                               probs->data() + static_cast<size_t>(r) * cols;
                           double* gx = logits.grad().data() +
                                        static_cast<size_t>(r) * cols;
                           for (int c = 0; c < cols; ++c) gx[c] += g * p[c];
                           gx[targets[r]] -= g;
                         }
                       });
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double* src = logits.data().data() + static_cast<size_t>(r) * cols;
    require(targets[r] >= 0 && targets[r] < cols, "nn.shape_mismatch",
            "target class out of range");
    const double mx = *std::max_element(src, src + cols);
    double denom = 0.0;
    double* p = probs->data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      p[c] = std::exp(src[c] - mx);
      denom += p[c];
    }
    for (int c = 0; c < cols; ++c) p[c] /= denom;
    total += std::log(denom) + mx - src[targets[r]];
  }
  out.data()[0] = total / rows;
  check_finite("cross_entropy", out.shape(), out.data());
  return out;
}

}  // namespace pedsense::nn
