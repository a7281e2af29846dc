#include "ccnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ccnet/error.hpp"

namespace ccnet::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                      to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, padding, out_h, out_w;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_h * out_w; }
};

// col[(c*k + ky)*k + kx, oy*out_w + ox] = x[c, oy+ky-p, ox+kx-p] (0 outside).
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.padding);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  const std::size_t n = input.extent(0), cin = input.extent(1), h = input.extent(2), w = input.extent(3);
  const std::size_t cout = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != cin || weight.extent(3) != k) {
    throw ConfigError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                      to_string(input.shape()));
  }
  if (bias.extent(0) != cout) throw ConfigError("conv2d: bias must have " + std::to_string(cout) + " entries");
  if (h + 2 * padding < k || w + 2 * padding < k) throw ConfigError("conv2d: kernel larger than padded input");

  ConvGeometry g{cin, h, w, k, padding, h + 2 * padding - k + 1, w + 2 * padding - k + 1};
  const std::size_t in_stride = cin * h * w, out_stride = cout * g.positions();
  std::vector<double> out(n * out_stride);
  std::vector<double> col(g.patch() * g.positions());
  ConstMatrixMap wmat(weight.values().data(), cout, g.patch());
  auto bv = bias.values();
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.values().data() + s * in_stride, g, col.data());
    MatrixMap y(out.data() + s * out_stride, cout, g.positions());
    y.noalias() = wmat * ConstMatrixMap(col.data(), g.patch(), g.positions());
    for (std::size_t c = 0; c < cout; ++c) y.row(c).array() += bv[c];
  }

  return record("conv2d", {n, cout, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
                [input, weight, bias, g, n, in_stride, out_stride](std::span<const double> gout) {
                  std::vector<double> col(g.patch() * g.positions());
                  std::vector<double> dcol(col.size());
                  std::vector<double> dw(weight.numel(), 0.0), db(bias.numel(), 0.0), dx;
                  if (input.requires_grad()) dx.assign(input.numel(), 0.0);
                  ConstMatrixMap wmat(weight.values().data(), weight.extent(0), g.patch());
                  MatrixMap dwmat(dw.data(), weight.extent(0), g.patch());
                  for (std::size_t s = 0; s < n; ++s) {
                    ConstMatrixMap dy(gout.data() + s * out_stride, weight.extent(0), g.positions());
                    if (weight.requires_grad()) {
                      im2col(input.values().data() + s * in_stride, g, col.data());
                      dwmat.noalias() += dy * ConstMatrixMap(col.data(), g.patch(), g.positions()).transpose();
                    }
                    if (bias.requires_grad()) {
                      const double* gp = gout.data() + s * out_stride;
                      for (std::size_t c = 0; c < db.size(); ++c) {
                        for (std::size_t j = 0; j < g.positions(); ++j) db[c] += gp[c * g.positions() + j];
                      }
                    }
                    if (!dx.empty()) {
                      MatrixMap(dcol.data(), g.patch(), g.positions()).noalias() = wmat.transpose() * dy;
                      col2im_add(dcol.data(), g, dx.data() + s * in_stride);
                    }
                  }
                  weight.accumulate_grad(dw);
                  bias.accumulate_grad(db);
                  if (!dx.empty()) input.accumulate_grad(dx);
                });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const bool batched = input.rank() == 2;
  if (!batched && input.rank() != 1) throw ConfigError("linear: input must have rank 1 or 2");
  const std::size_t rows = batched ? input.extent(0) : 1;
  const std::size_t in = batched ? input.extent(1) : input.extent(0);
  const std::size_t outn = weight.extent(0);
  if (weight.extent(1) != in) {
    throw ConfigError("linear: weight " + to_string(weight.shape()) + " incompatible with input " +
                      to_string(input.shape()));
  }
  if (bias.extent(0) != outn) throw ConfigError("linear: bias must have " + std::to_string(outn) + " entries");

  // Plain loops keep each output's summation order independent of batch size.
  const double* xv = input.values().data();
  const double* wv = weight.values().data();
  const double* bv = bias.values().data();
  std::vector<double> out(rows * outn);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < outn; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
      out[r * outn + o] = acc + bv[o];
    }
  }

  Shape shape = batched ? Shape{rows, outn} : Shape{outn};
  return record("linear", std::move(shape), std::move(out), {input, weight, bias},
                [input, weight, bias, rows, in, outn](std::span<const double> gout) {
                  const double* xv = input.values().data();
                  const double* wv = weight.values().data();
                  if (weight.requires_grad()) {
                    std::vector<double> dw(outn * in, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t o = 0; o < outn; ++o) {
                        const double g = gout[r * outn + o];
                        for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += g * xv[r * in + i];
                      }
                    }
                    weight.accumulate_grad(dw);
                  }
                  if (bias.requires_grad()) {
                    std::vector<double> db(outn, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t o = 0; o < outn; ++o) db[o] += gout[r * outn + o];
                    }
                    bias.accumulate_grad(db);
                  }
                  if (input.requires_grad()) {
                    std::vector<double> dx(rows * in, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t o = 0; o < outn; ++o) {
                        const double g = gout[r * outn + o];
                        for (std::size_t i = 0; i < in; ++i) dx[r * in + i] += g * wv[o * in + i];
                      }
                    }
                    input.accumulate_grad(dx);
                  }
                });
}

Tensor relu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  const bool rec = branch_recording();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (rec) note_branch(xv[i] > 0.0);
  }
  return record("relu", x.shape(), std::move(out), {x}, [x](std::span<const double> gout) {
    auto xv = x.values();
    std::vector<double> dx(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = xv[i] > 0.0 ? gout[i] : 0.0;
    x.accumulate_grad(dx);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> gout) {
    a.accumulate_grad(gout);
    b.accumulate_grad(gout);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> gout) {
    auto av = a.values(), bv = b.values();
    std::vector<double> da(av.size()), db(bv.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
      da[i] = gout[i] * bv[i];
      db[i] = gout[i] * av[i];
    }
    a.accumulate_grad(da);
    b.accumulate_grad(db);
  });
}

Tensor mul_scalar(const Tensor& x, double s) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  return record("mul_scalar", x.shape(), std::move(out), {x}, [x, s](std::span<const double> gout) {
    std::vector<double> dx(gout.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = gout[i] * s;
    x.accumulate_grad(dx);
  });
}

Tensor scale(const Tensor& x, const Tensor& factors) {
  require_rank(factors, 1, "scale", "scale vector");
  if (x.rank() == 0 || x.extent(x.rank() - 1) != factors.extent(0)) {
    throw ConfigError("scale: vector of length " + std::to_string(factors.extent(0)) +
                      " does not match last axis of " + to_string(x.shape()));
  }
  const std::size_t width = factors.extent(0);
  auto xv = x.values(), fv = factors.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * fv[i % width];
  return record("scale", x.shape(), std::move(out), {x, factors}, [x, factors, width](std::span<const double> gout) {
    auto xv = x.values(), fv = factors.values();
    std::vector<double> dx(xv.size()), df(width, 0.0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      dx[i] = gout[i] * fv[i % width];
      df[i % width] += gout[i] * xv[i];
    }
    x.accumulate_grad(dx);
    factors.accumulate_grad(df);
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d", "input");
  if (window == 0) throw ConfigError("max_pool2d: window must be positive");
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw ConfigError("max_pool2d: input " + to_string(x.shape()) + " smaller than window");
  auto xv = x.values();
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const bool rec = branch_recording();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * window * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            std::size_t idx = base + (oy * window + dy) * w + ox * window + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = xv[best];
        argmax[o] = best;
        if (rec) note_branch(best);
      }
    }
  }
  return record("max_pool2d", {n, c, oh, ow}, std::move(out), {x},
                [x, argmax = std::move(argmax)](std::span<const double> gout) {
                  std::vector<double> dx(x.numel(), 0.0);
                  for (std::size_t o = 0; o < gout.size(); ++o) dx[argmax[o]] += gout[o];
                  x.accumulate_grad(dx);
                });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.extent(0), c = x.extent(1), area = x.extent(2) * x.extent(3);
  auto xv = x.values();
  std::vector<double> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += xv[p * area + i];
    out[p] = s / static_cast<double>(area);
  }
  return record("global_avg_pool", {n, c}, std::move(out), {x}, [x, area](std::span<const double> gout) {
    std::vector<double> dx(x.numel());
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < gout.size(); ++p) std::fill_n(dx.begin() + p * area, area, gout[p] * inv);
    x.accumulate_grad(dx);
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ConfigError("softmax: input must have rank >= 1");
  const std::size_t width = x.extent(x.rank() - 1), rows = x.numel() / width;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* o = out.data() + r * width;
    const double m = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t k = 0; k < width; ++k) z += (o[k] = std::exp(in[k] - m));
    for (std::size_t k = 0; k < width; ++k) o[k] /= z;
  }
  std::vector<double> probs = out;
  return record("softmax", x.shape(), std::move(out), {x},
                [x, probs = std::move(probs), width, rows](std::span<const double> gout) {
                  std::vector<double> dx(probs.size());
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* p = probs.data() + r * width;
                    const double* g = gout.data() + r * width;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < width; ++k) dot += p[k] * g[k];
                    for (std::size_t k = 0; k < width; ++k) dx[r * width + k] = p[k] * (g[k] - dot);
                  }
                  x.accumulate_grad(dx);
                });
}

Tensor sum_normalize(const Tensor& x) {
  if (x.rank() == 0) throw ConfigError("sum_normalize: input must have rank >= 1");
  const std::size_t width = x.extent(x.rank() - 1), rows = x.numel() / width;
  auto xv = x.values();
  std::vector<double> out(xv.size()), sums(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < width; ++k) z += xv[r * width + k];
    if (!(z > 0.0)) throw NumericError("sum_normalize: row sum is not positive");
    sums[r] = z;
    for (std::size_t k = 0; k < width; ++k) out[r * width + k] = xv[r * width + k] / z;
  }
  return record("sum_normalize", x.shape(), std::move(out), {x},
                [x, sums = std::move(sums), width, rows](std::span<const double> gout) {
                  auto xv = x.values();
                  std::vector<double> dx(xv.size());
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double z = sums[r];
                    double dot = 0.0;
                    for (std::size_t k = 0; k < width; ++k) dot += gout[r * width + k] * xv[r * width + k];
                    for (std::size_t k = 0; k < width; ++k) dx[r * width + k] = gout[r * width + k] / z - dot / (z * z);
                  }
                  x.accumulate_grad(dx);
                });
}

Tensor log(const Tensor& x, double floor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  const bool rec = branch_recording();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool clamped = xv[i] < floor;
    if (rec) note_branch(clamped);
    out[i] = std::log(clamped ? floor : xv[i]);
  }
  return record("log", x.shape(), std::move(out), {x}, [x, floor](std::span<const double> gout) {
    auto xv = x.values();
    std::vector<double> dx(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = xv[i] < floor ? 0.0 : gout[i] / xv[i];
    x.accumulate_grad(dx);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    throw ConfigError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return record("reshape", std::move(shape), std::move(out), {x},
                [x](std::span<const double> gout) { x.accumulate_grad(gout); });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return record("sum", {}, {s}, {x}, [x](std::span<const double> gout) {
    x.accumulate_grad(std::vector<double>(x.numel(), gout[0]));
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  require_rank(x, 2, "pick", "input");
  const std::size_t rows = x.extent(0), width = x.extent(1);
  if (index.size() != rows) throw ConfigError("pick: need one index per row");
  std::vector<double> out(rows);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= width) throw ConfigError("pick: index " + std::to_string(idx[r]) + " out of range");
    out[r] = x.values()[r * width + idx[r]];
  }
  return record("pick", {rows}, std::move(out), {x}, [x, idx = std::move(idx), width](std::span<const double> gout) {
    std::vector<double> dx(x.numel(), 0.0);
    for (std::size_t r = 0; r < idx.size(); ++r) dx[r * width + idx[r]] = gout[r];
    x.accumulate_grad(dx);
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weight) {
  if (weight.size() != x.numel()) throw ConfigError("weighted_sum: weight count does not match tensor size");
  std::vector<double> w(weight.begin(), weight.end());
  double s = 0.0;
  auto xv = x.values();
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * xv[i];
  return record("weighted_sum", {}, {s}, {x}, [x, w = std::move(w)](std::span<const double> gout) {
    std::vector<double> dx(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) dx[i] = w[i] * gout[0];
    x.accumulate_grad(dx);
  });
}

}  // namespace ccnet::ops
