#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/parallel.hpp"
#include "streamnet/tensor.hpp"

// Dense compute kernels behind the autodiff ops. Everything here is written
// so that results are bit-identical for a given binary regardless of the
// worker count: parallel tasks write disjoint outputs and every floating-point
// reduction runs in a fixed order.

namespace streamnet {

enum class Padding { kSame, kValid };

namespace kernels {

inline constexpr std::size_t kPanelWidth = 32;  // columns per packed B panel
inline constexpr std::size_t kJBlock = 512;     // columns per parallel task

namespace detail {

// Reusable per-thread scratch; kernels overwrite every cell they read back.
inline std::vector<double>& scratch(int slot) {
  thread_local std::vector<double> buffers[3];
  return buffers[slot];
}

// 4x32 register tile: acc[r][j] accumulates A row r times packed B panel.
// Bp holds K rows of kPanelWidth doubles (zero-padded past jw).
template <int Rows, bool Accumulate>
inline void micro_tile(const double* a, std::size_t lda, const double* bp,
                       std::size_t K, double* c, std::size_t ldc,
                       std::size_t jw) {
  double acc[Rows][kPanelWidth] = {};
  if constexpr (Accumulate) {
    for (int r = 0; r < Rows; ++r) {
      for (std::size_t j = 0; j < jw; ++j) acc[r][j] = c[r * ldc + j];
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = bp + k * kPanelWidth;
    double av[Rows];
    for (int r = 0; r < Rows; ++r) av[r] = a[r * lda + k];
    for (std::size_t j = 0; j < kPanelWidth; ++j) {
      for (int r = 0; r < Rows; ++r) acc[r][j] += av[r] * b[j];
    }
  }
  for (int r = 0; r < Rows; ++r) {
    for (std::size_t j = 0; j < jw; ++j) c[r * ldc + j] = acc[r][j];
  }
}

template <bool Accumulate>
inline void run_tile(const double* a, std::size_t lda, const double* bp,
                     std::size_t K, double* c, std::size_t ldc, std::size_t rows,
                     std::size_t jw) {
  switch (rows) {
    case 4: micro_tile<4, Accumulate>(a, lda, bp, K, c, ldc, jw); break;
    case 3: micro_tile<3, Accumulate>(a, lda, bp, K, c, ldc, jw); break;
    case 2: micro_tile<2, Accumulate>(a, lda, bp, K, c, ldc, jw); break;
    default: micro_tile<1, Accumulate>(a, lda, bp, K, c, ldc, jw); break;
  }
}

// Shared driver. TransposeB reads B as N x K (row j holds the j-th column of
// the logical K x N operand); the transpose happens while packing, which
// keeps both storage orders streaming contiguously.
template <bool Accumulate, bool TransposeB>
inline void gemm_impl(const double* A, std::size_t lda, const double* B,
                      std::size_t ldb, double* C, std::size_t ldc,
                      std::size_t M, std::size_t K, std::size_t N) {
  const std::size_t blocks = (N + kJBlock - 1) / kJBlock;
  parallel_for(blocks, [&](std::size_t block) {
    const std::size_t j_lo = block * kJBlock;
    const std::size_t j_hi = std::min(N, j_lo + kJBlock);
    std::vector<double>& pack_buf = scratch(2);
    pack_buf.resize(K * kPanelWidth);
    double* pack = pack_buf.data();
    for (std::size_t j0 = j_lo; j0 < j_hi; j0 += kPanelWidth) {
      const std::size_t jw = std::min(kPanelWidth, j_hi - j0);
      if constexpr (TransposeB) {
        for (std::size_t j = 0; j < jw; ++j) {
          const double* src = B + (j0 + j) * ldb;
          for (std::size_t k = 0; k < K; ++k) pack[k * kPanelWidth + j] = src[k];
        }
        if (jw < kPanelWidth) {
          for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t j = jw; j < kPanelWidth; ++j)
              pack[k * kPanelWidth + j] = 0.0;
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const double* src = B + k * ldb + j0;
          double* dst = pack + k * kPanelWidth;
          std::memcpy(dst, src, jw * sizeof(double));
          for (std::size_t j = jw; j < kPanelWidth; ++j) dst[j] = 0.0;
        }
      }
      for (std::size_t i0 = 0; i0 < M; i0 += 4) {
        const std::size_t rows = std::min<std::size_t>(4, M - i0);
        run_tile<Accumulate>(A + i0 * lda, lda, pack, K, C + i0 * ldc + j0, ldc,
                             rows, jw);
      }
    }
  });
}

}  // namespace detail

/// C = A * B. A is M x K (leading dimension lda), B is K x N (ldb),
/// C is M x N (ldc), all row-major. Overwrites C.
inline void gemm(const double* A, std::size_t lda, const double* B,
                 std::size_t ldb, double* C, std::size_t ldc, std::size_t M,
                 std::size_t K, std::size_t N) {
  detail::gemm_impl<false, false>(A, lda, B, ldb, C, ldc, M, K, N);
}

/// C += A * B^T. A is M x K (lda), B is N x K (ldb), C is M x N (ldc).
inline void gemm_nt_acc(const double* A, std::size_t lda, const double* B,
                        std::size_t ldb, double* C, std::size_t ldc,
                        std::size_t M, std::size_t K, std::size_t N) {
  detail::gemm_impl<true, true>(A, lda, B, ldb, C, ldc, M, K, N);
}

/// C += A^T * B. A is N x M (lda), B is N x K (ldb), C is M x K (ldc).
/// Row-saxpy form; the reduction over rows of A runs in ascending order.
inline void gemm_tn_acc(const double* A, std::size_t lda, const double* B,
                        std::size_t ldb, double* C, std::size_t ldc,
                        std::size_t N, std::size_t M, std::size_t K) {
  for (std::size_t n = 0; n < N; ++n) {
    const double* b = B + n * ldb;
    for (std::size_t m = 0; m < M; ++m) {
      const double a = A[n * lda + m];
      double* c = C + m * ldc;
      for (std::size_t k = 0; k < K; ++k) c[k] += a * b[k];
    }
  }
}

struct Conv2dDims {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, kernel_h, kernel_w;
  std::size_t pad_h, pad_w;
  std::size_t out_h, out_w;
};

inline Conv2dDims conv2d_dims(const Shape& input, const Shape& kernels,
                              Padding padding) {
  Conv2dDims d{};
  d.in_c = input[1];
  d.in_h = input[2];
  d.in_w = input[3];
  d.out_c = kernels[0];
  d.kernel_h = kernels[2];
  d.kernel_w = kernels[3];
  if (kernels[1] != d.in_c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernels[1]) +
                     " input channels, input has " + std::to_string(d.in_c));
  }
  if (padding == Padding::kSame) {
    if (d.kernel_h % 2 == 0 || d.kernel_w % 2 == 0) {
      throw ShapeError("conv2d: same padding requires odd kernel sides, got " +
                       std::to_string(d.kernel_h) + "x" +
                       std::to_string(d.kernel_w));
    }
    d.pad_h = (d.kernel_h - 1) / 2;
    d.pad_w = (d.kernel_w - 1) / 2;
    d.out_h = d.in_h;
    d.out_w = d.in_w;
  } else {
    d.pad_h = d.pad_w = 0;
    if (d.kernel_h > d.in_h || d.kernel_w > d.in_w) {
      throw ShapeError("conv2d: " + std::to_string(d.kernel_h) + "x" +
                       std::to_string(d.kernel_w) + " kernel exceeds " +
                       std::to_string(d.in_h) + "x" + std::to_string(d.in_w) +
                       " input (height/width)");
    }
    d.out_h = d.in_h - d.kernel_h + 1;
    d.out_w = d.in_w - d.kernel_w + 1;
  }
  if (d.kernel_h > d.in_h + 2 * d.pad_h || d.kernel_w > d.in_w + 2 * d.pad_w) {
    throw ShapeError("conv2d: kernel exceeds padded input extent");
  }
  return d;
}

/// Unfolds one [C,H,W] image into a (C*kh*kw) x (out_h*out_w) patch matrix.
/// `col` must hold that many doubles. Stride is 1.
inline void im2col(const double* image, const Conv2dDims& d, double* col) {
  const std::size_t out_w = d.out_w;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    const double* plane = image + c * d.in_h * d.in_w;
    for (std::size_t u = 0; u < d.kernel_h; ++u) {
      for (std::size_t v = 0; v < d.kernel_w; ++v) {
        double* row = col + ((c * d.kernel_h + u) * d.kernel_w + v) * d.out_h * out_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
          double* dst = row + oh * out_w;
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh + u) - static_cast<std::ptrdiff_t>(d.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.in_h)) {
            std::memset(dst, 0, out_w * sizeof(double));
            continue;
          }
          // Valid output columns: 0 <= ow + v - pad_w < in_w.
          const std::ptrdiff_t shift =
              static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(d.pad_w);
          const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -shift));
          const std::size_t w_hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(d.in_w) - shift, 0,
              static_cast<std::ptrdiff_t>(out_w)));
          if (w_lo > 0) std::memset(dst, 0, w_lo * sizeof(double));
          if (w_hi > w_lo) {
            std::memcpy(dst + w_lo, plane + ih * d.in_w + w_lo + shift,
                        (w_hi - w_lo) * sizeof(double));
          }
          if (w_hi < out_w) {
            std::memset(dst + w_hi, 0, (out_w - w_hi) * sizeof(double));
          }
        }
      }
    }
  }
}

/// Transpose of im2col: scatter-adds a patch matrix back onto one image.
inline void col2im_add(const double* col, const Conv2dDims& d, double* image) {
  const std::size_t out_w = d.out_w;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    double* plane = image + c * d.in_h * d.in_w;
    for (std::size_t u = 0; u < d.kernel_h; ++u) {
      for (std::size_t v = 0; v < d.kernel_w; ++v) {
        const double* row =
            col + ((c * d.kernel_h + u) * d.kernel_w + v) * d.out_h * out_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh + u) - static_cast<std::ptrdiff_t>(d.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
          const std::ptrdiff_t shift =
              static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(d.pad_w);
          const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -shift));
          const std::size_t w_hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(d.in_w) - shift, 0,
              static_cast<std::ptrdiff_t>(out_w)));
          const double* src = row + oh * out_w;
          double* dst = plane + ih * d.in_w + shift;
          for (std::size_t ow = w_lo; ow < w_hi; ++ow) dst[ow] += src[ow];
        }
      }
    }
  }
}

/// out[N,Cout,OH,OW] = input[N,Cin,H,W] (*) kernels[Cout,Cin,kh,kw] + bias.
inline void conv2d_forward(const Tensor& input, const Tensor& kernels,
                           const Tensor& bias, const Conv2dDims& d, Tensor& out) {
  const std::size_t batch = input.dim(0);
  const std::size_t ckk = d.in_c * d.kernel_h * d.kernel_w;
  const std::size_t ohw = d.out_h * d.out_w;
  parallel_for(batch, [&](std::size_t n) {
    std::vector<double>& col = detail::scratch(0);
    col.resize(ckk * ohw);
    im2col(input.data() + n * d.in_c * d.in_h * d.in_w, d, col.data());
    double* out_n = out.data() + n * d.out_c * ohw;
    gemm(kernels.data(), ckk, col.data(), ohw, out_n, ohw, d.out_c, ckk, ohw);
    for (std::size_t c = 0; c < d.out_c; ++c) {
      double* row = out_n + c * ohw;
      const double b = bias[c];
      for (std::size_t i = 0; i < ohw; ++i) row[i] += b;
    }
  });
}

/// Accumulates conv gradients. d_input may be null when the input needs no
/// gradient (saves the largest GEMM of the first layer). Images are processed
/// in ascending order so weight-gradient accumulation is deterministic.
inline void conv2d_backward(const Tensor& input, const Tensor& kernels,
                            const Conv2dDims& d, const Tensor& d_out,
                            Tensor* d_input, Tensor& d_kernels, Tensor& d_bias) {
  const std::size_t batch = input.dim(0);
  const std::size_t ckk = d.in_c * d.kernel_h * d.kernel_w;
  const std::size_t ohw = d.out_h * d.out_w;

  std::vector<double> kernels_t(ckk * d.out_c);
  if (d_input != nullptr) {
    for (std::size_t c = 0; c < d.out_c; ++c) {
      for (std::size_t r = 0; r < ckk; ++r) {
        kernels_t[r * d.out_c + c] = kernels[c * ckk + r];
      }
    }
  }

  std::vector<double> col(ckk * ohw);
  std::vector<double> dcol(d_input != nullptr ? ckk * ohw : 0);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* dout_n = d_out.data() + n * d.out_c * ohw;
    im2col(input.data() + n * d.in_c * d.in_h * d.in_w, d, col.data());
    gemm_nt_acc(dout_n, ohw, col.data(), ohw, d_kernels.data(), ckk, d.out_c,
                ohw, ckk);
    for (std::size_t c = 0; c < d.out_c; ++c) {
      const double* row = dout_n + c * ohw;
      double s = 0.0;
      for (std::size_t i = 0; i < ohw; ++i) s += row[i];
      d_bias[c] += s;
    }
    if (d_input != nullptr) {
      gemm(kernels_t.data(), d.out_c, dout_n, ohw, dcol.data(), ohw, ckk,
           d.out_c, ohw);
      col2im_add(dcol.data(), d, d_input->data() + n * d.in_c * d.in_h * d.in_w);
    }
  }
}

/// 2x2 max pooling, stride 2; odd trailing row/column dropped. `argmax`
/// records the winning in-window position as (dy<<1)|dx, first occurrence
/// winning ties, so the backward pass is deterministic.
inline void maxpool2x2_forward(const Tensor& input, Tensor& out,
                               std::vector<std::uint8_t>& argmax) {
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  parallel_for(batch * channels, [&](std::size_t plane) {
    const double* src = input.data() + plane * h * w;
    double* dst = out.data() + plane * oh * ow;
    std::uint8_t* arg = argmax.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double* cell = src + (2 * y) * w + 2 * x;
        double best = cell[0];
        std::uint8_t code = 0;
        if (cell[1] > best) { best = cell[1]; code = 1; }
        if (cell[w] > best) { best = cell[w]; code = 2; }
        if (cell[w + 1] > best) { best = cell[w + 1]; code = 3; }
        dst[y * ow + x] = best;
        arg[y * ow + x] = code;
      }
    }
  });
}

inline void maxpool2x2_backward(const Tensor& input_shape_ref, const Tensor& d_out,
                                const std::vector<std::uint8_t>& argmax,
                                Tensor& d_input) {
  const std::size_t batch = input_shape_ref.dim(0), channels = input_shape_ref.dim(1);
  const std::size_t h = input_shape_ref.dim(2), w = input_shape_ref.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  parallel_for(batch * channels, [&](std::size_t plane) {
    double* dst = d_input.data() + plane * h * w;
    const double* dy = d_out.data() + plane * oh * ow;
    const std::uint8_t* arg = argmax.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::uint8_t code = arg[y * ow + x];
        const std::size_t iy = 2 * y + (code >> 1);
        const std::size_t ix = 2 * x + (code & 1);
        dst[iy * w + ix] += dy[y * ow + x];
      }
    }
  });
}

}  // namespace kernels
}  // namespace streamnet
