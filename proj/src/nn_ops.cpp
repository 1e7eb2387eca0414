#include "vesselseg/nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace vesselseg::nn {

namespace {

inline int conv_out_extent(int n, int k, int stride) {
  const int pad = (k - 1) / 2;
  return (n + 2 * pad - k) / stride + 1;
}

}  // namespace

Tensor conv3d_forward(const Tensor& in, const ConvDims& cd, const double* w,
                      const double* b) {
  const int k = cd.k, s = cd.stride, pad = (k - 1) / 2;
  const int od = conv_out_extent(in.d, k, s);
  const int oh = conv_out_extent(in.h, k, s);
  const int ow = conv_out_extent(in.w, k, s);
  Tensor out(cd.cout, od, oh, ow);
  const std::int64_t in_hw = static_cast<std::int64_t>(in.h) * in.w;
  const bool fast3 = (k == 3 && s == 1 && ow >= 2);

#pragma omp parallel for schedule(static)
  for (int co = 0; co < cd.cout; ++co) {
    std::vector<double> acc(static_cast<std::size_t>(ow));
    double* out_ch = out.channel(co);
    for (int zo = 0; zo < od; ++zo) {
      const int zb = zo * s - pad;
      for (int yo = 0; yo < oh; ++yo) {
        const int yb = yo * s - pad;
        std::fill(acc.begin(), acc.end(), b[co]);
        for (int ci = 0; ci < cd.cin; ++ci) {
          const double* in_ch = in.channel(ci);
          for (int kz = 0; kz < k; ++kz) {
            const int zi = zb + kz;
            if (zi < 0 || zi >= in.d) continue;
            for (int ky = 0; ky < k; ++ky) {
              const int yi = yb + ky;
              if (yi < 0 || yi >= in.h) continue;
              const double* in_row = in_ch + zi * in_hw + static_cast<std::int64_t>(yi) * in.w;
              const double* w_row =
                  w + (((static_cast<std::int64_t>(co) * cd.cin + ci) * k + kz) * k + ky) * k;
              if (fast3) {
                // one fused pass over the row: out[xo] += sum_kx w[kx]*in[xo-1+kx]
                const double w0 = w_row[0], w1 = w_row[1], w2 = w_row[2];
                acc[0] += w1 * in_row[0] + w2 * in_row[1];
                for (int xo = 1; xo < ow - 1; ++xo)
                  acc[xo] += w0 * in_row[xo - 1] + w1 * in_row[xo] +
                             w2 * in_row[xo + 1];
                acc[ow - 1] += w0 * in_row[ow - 2] + w1 * in_row[ow - 1];
                continue;
              }
              for (int kx = 0; kx < k; ++kx) {
                const double wv = w_row[kx];
                // valid xo range: 0 <= xo*s - pad + kx < in.w
                const int off = kx - pad;
                int xo_lo = 0;
                if (off < 0) xo_lo = (-off + s - 1) / s;
                int xo_hi = ow;  // exclusive
                const int max_xo = (in.w - 1 - off) / s;
                if (max_xo + 1 < xo_hi) xo_hi = max_xo + 1;
                const double* src = in_row + static_cast<std::int64_t>(xo_lo) * s + off;
                if (s == 1) {
                  for (int xo = xo_lo; xo < xo_hi; ++xo)
                    acc[xo] += wv * src[xo - xo_lo];
                } else {
                  for (int xo = xo_lo; xo < xo_hi; ++xo)
                    acc[xo] += wv * src[static_cast<std::int64_t>(xo - xo_lo) * s];
                }
              }
            }
          }
        }
        double* out_row = out_ch + (static_cast<std::int64_t>(zo) * oh + yo) * ow;
        std::copy(acc.begin(), acc.end(), out_row);
      }
    }
  }
  return out;
}

void conv3d_backward(const Tensor& in, const ConvDims& cd, const double* w,
                     const Tensor& gout, Tensor* gin, double* gw, double* gb) {
  const int k = cd.k, s = cd.stride, pad = (k - 1) / 2;
  const int od = gout.d, oh = gout.h, ow = gout.w;
  const std::int64_t in_hw = static_cast<std::int64_t>(in.h) * in.w;

  // Weight and bias gradients: each co owned by one thread.
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cd.cout; ++co) {
    const double* g_ch = gout.channel(co);
    double bacc = 0.0;
    for (std::int64_t i = 0; i < gout.spatial(); ++i) bacc += g_ch[i];
    gb[co] += bacc;
    const bool fast3 = (k == 3 && s == 1 && ow >= 2);
    for (int ci = 0; ci < cd.cin; ++ci) {
      const double* in_ch = in.channel(ci);
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky) {
          if (fast3) {
            // single pass per row accumulating the three taps
            double a0 = 0.0, a1 = 0.0, a2 = 0.0;
            for (int zo = 0; zo < od; ++zo) {
              const int zi = zo - pad + kz;
              if (zi < 0 || zi >= in.d) continue;
              for (int yo = 0; yo < oh; ++yo) {
                const int yi = yo - pad + ky;
                if (yi < 0 || yi >= in.h) continue;
                const double* g_row =
                    g_ch + (static_cast<std::int64_t>(zo) * oh + yo) * ow;
                const double* in_row =
                    in_ch + zi * in_hw + static_cast<std::int64_t>(yi) * in.w;
                a1 += g_row[0] * in_row[0];
                a2 += g_row[0] * in_row[1];
                for (int xo = 1; xo < ow - 1; ++xo) {
                  const double g = g_row[xo];
                  a0 += g * in_row[xo - 1];
                  a1 += g * in_row[xo];
                  a2 += g * in_row[xo + 1];
                }
                a0 += g_row[ow - 1] * in_row[ow - 2];
                a1 += g_row[ow - 1] * in_row[ow - 1];
              }
            }
            double* gw_row =
                gw + (((static_cast<std::int64_t>(co) * cd.cin + ci) * k + kz) * k + ky) * k;
            gw_row[0] += a0;
            gw_row[1] += a1;
            gw_row[2] += a2;
            continue;
          }
          for (int kx = 0; kx < k; ++kx) {
            double acc = 0.0;
            for (int zo = 0; zo < od; ++zo) {
              const int zi = zo * s - pad + kz;
              if (zi < 0 || zi >= in.d) continue;
              for (int yo = 0; yo < oh; ++yo) {
                const int yi = yo * s - pad + ky;
                if (yi < 0 || yi >= in.h) continue;
                const double* g_row = g_ch + (static_cast<std::int64_t>(zo) * oh + yo) * ow;
                const double* in_row =
                    in_ch + zi * in_hw + static_cast<std::int64_t>(yi) * in.w;
                const int off = kx - pad;
                int xo_lo = 0;
                if (off < 0) xo_lo = (-off + s - 1) / s;
                const int max_xo = (in.w - 1 - off) / s;
                const int xo_hi = std::min(ow, max_xo + 1);
                for (int xo = xo_lo; xo < xo_hi; ++xo)
                  acc += g_row[xo] * in_row[static_cast<std::int64_t>(xo) * s + off];
              }
            }
            gw[(((static_cast<std::int64_t>(co) * cd.cin + ci) * k + kz) * k + ky) * k + kx] += acc;
          }
        }
      }
    }
  }

  if (!gin) return;
  // Input gradient: each ci owned by one thread; scatter from gout.
  const bool fast3_gin = (k == 3 && s == 1 && ow >= 2 && in.w == ow);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cd.cin; ++ci) {
    double* gi_ch = gin->channel(ci);
    for (int co = 0; co < cd.cout; ++co) {
      const double* g_ch = gout.channel(co);
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky) {
          const double* w_row =
              w + (((static_cast<std::int64_t>(co) * cd.cin + ci) * k + kz) * k + ky) * k;
          if (fast3_gin) {
            // gather form: gi[xi] += w0*g[xi+1] + w1*g[xi] + w2*g[xi-1]
            const double w0 = w_row[0], w1 = w_row[1], w2 = w_row[2];
            for (int zo = 0; zo < od; ++zo) {
              const int zi = zo - pad + kz;
              if (zi < 0 || zi >= in.d) continue;
              for (int yo = 0; yo < oh; ++yo) {
                const int yi = yo - pad + ky;
                if (yi < 0 || yi >= in.h) continue;
                const double* g_row =
                    g_ch + (static_cast<std::int64_t>(zo) * oh + yo) * ow;
                double* gi_row =
                    gi_ch + zi * in_hw + static_cast<std::int64_t>(yi) * in.w;
                gi_row[0] += w0 * g_row[1] + w1 * g_row[0];
                for (int xi = 1; xi < ow - 1; ++xi)
                  gi_row[xi] += w0 * g_row[xi + 1] + w1 * g_row[xi] +
                                w2 * g_row[xi - 1];
                gi_row[ow - 1] += w1 * g_row[ow - 1] + w2 * g_row[ow - 2];
              }
            }
            continue;
          }
          for (int zo = 0; zo < od; ++zo) {
            const int zi = zo * s - pad + kz;
            if (zi < 0 || zi >= in.d) continue;
            for (int yo = 0; yo < oh; ++yo) {
              const int yi = yo * s - pad + ky;
              if (yi < 0 || yi >= in.h) continue;
              const double* g_row = g_ch + (static_cast<std::int64_t>(zo) * oh + yo) * ow;
              double* gi_row = gi_ch + zi * in_hw + static_cast<std::int64_t>(yi) * in.w;
              for (int kx = 0; kx < k; ++kx) {
                const double wv = w_row[kx];
                const int off = kx - pad;
                int xo_lo = 0;
                if (off < 0) xo_lo = (-off + s - 1) / s;
                const int max_xo = (in.w - 1 - off) / s;
                const int xo_hi = std::min(ow, max_xo + 1);
                if (s == 1) {
                  double* dst = gi_row + xo_lo + off;
                  for (int xo = xo_lo; xo < xo_hi; ++xo)
                    dst[xo - xo_lo] += wv * g_row[xo];
                } else {
                  for (int xo = xo_lo; xo < xo_hi; ++xo)
                    gi_row[static_cast<std::int64_t>(xo) * s + off] += wv * g_row[xo];
                }
              }
            }
          }
        }
      }
    }
  }
}

Tensor conv_transpose2x_forward(const Tensor& in, int cout, const double* w,
                                const double* b) {
  const int cin = in.c;
  Tensor out(cout, in.d * 2, in.h * 2, in.w * 2);
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    double* out_ch = out.channel(co);
    for (int zo = 0; zo < out.d; ++zo) {
      const int zi = zo / 2, kz = zo % 2;
      for (int yo = 0; yo < out.h; ++yo) {
        const int yi = yo / 2, ky = yo % 2;
        double* out_row = out_ch + (static_cast<std::int64_t>(zo) * out.h + yo) * out.w;
        for (int xo = 0; xo < out.w; ++xo) out_row[xo] = b[co];
        for (int ci = 0; ci < cin; ++ci) {
          const double* in_row = in.channel(ci) +
                                 (static_cast<std::int64_t>(zi) * in.h + yi) * in.w;
          const double* wv =
              w + (((static_cast<std::int64_t>(co) * cin + ci) * 2 + kz) * 2 + ky) * 2;
          for (int xo = 0; xo < out.w; ++xo)
            out_row[xo] += wv[xo % 2] * in_row[xo / 2];
        }
      }
    }
  }
  return out;
}

void conv_transpose2x_backward(const Tensor& in, int cout, const double* w,
                               const Tensor& gout, Tensor* gin, double* gw,
                               double* gb) {
  const int cin = in.c;
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    const double* g_ch = gout.channel(co);
    double bacc = 0.0;
    for (std::int64_t i = 0; i < gout.spatial(); ++i) bacc += g_ch[i];
    gb[co] += bacc;
    for (int ci = 0; ci < cin; ++ci) {
      const double* in_ch = in.channel(ci);
      for (int kz = 0; kz < 2; ++kz)
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            double acc = 0.0;
            for (int zi = 0; zi < in.d; ++zi) {
              const int zo = zi * 2 + kz;
              for (int yi = 0; yi < in.h; ++yi) {
                const int yo = yi * 2 + ky;
                const double* g_row =
                    g_ch + (static_cast<std::int64_t>(zo) * gout.h + yo) * gout.w;
                const double* in_row =
                    in_ch + (static_cast<std::int64_t>(zi) * in.h + yi) * in.w;
                for (int xi = 0; xi < in.w; ++xi)
                  acc += g_row[xi * 2 + kx] * in_row[xi];
              }
            }
            gw[(((static_cast<std::int64_t>(co) * cin + ci) * 2 + kz) * 2 + ky) * 2 + kx] += acc;
          }
    }
  }
  if (!gin) return;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin; ++ci) {
    double* gi_ch = gin->channel(ci);
    for (int co = 0; co < cout; ++co) {
      const double* g_ch = gout.channel(co);
      for (int zi = 0; zi < in.d; ++zi) {
        for (int yi = 0; yi < in.h; ++yi) {
          double* gi_row = gi_ch + (static_cast<std::int64_t>(zi) * in.h + yi) * in.w;
          for (int kz = 0; kz < 2; ++kz) {
            const int zo = zi * 2 + kz;
            for (int ky = 0; ky < 2; ++ky) {
              const int yo = yi * 2 + ky;
              const double* g_row =
                  g_ch + (static_cast<std::int64_t>(zo) * gout.h + yo) * gout.w;
              const double* wv =
                  w + (((static_cast<std::int64_t>(co) * cin + ci) * 2 + kz) * 2 + ky) * 2;
              for (int xi = 0; xi < in.w; ++xi)
                gi_row[xi] += wv[0] * g_row[xi * 2] + wv[1] * g_row[xi * 2 + 1];
            }
          }
        }
      }
    }
  }
}

Tensor instance_norm_forward(const Tensor& in, const double* gamma,
                             const double* beta, InstanceNormCache* cache,
                             double eps) {
  Tensor out(in.c, in.d, in.h, in.w);
  if (cache) {
    cache->xhat = Tensor(in.c, in.d, in.h, in.w);
    cache->inv_std.assign(in.c, 0.0);
  }
  const std::int64_t n = in.spatial();
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < in.c; ++ci) {
    const double* x = in.channel(ci);
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dx = x[i] - mean;
      var += dx * dx;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    double* o = out.channel(ci);
    const double g = gamma[ci], bta = beta[ci];
    if (cache) {
      double* xh = cache->xhat.channel(ci);
      for (std::int64_t i = 0; i < n; ++i) {
        xh[i] = (x[i] - mean) * inv_std;
        o[i] = g * xh[i] + bta;
      }
      cache->inv_std[ci] = inv_std;
    } else {
      for (std::int64_t i = 0; i < n; ++i)
        o[i] = g * (x[i] - mean) * inv_std + bta;
    }
  }
  return out;
}

void instance_norm_backward(const InstanceNormCache& cache, const double* gamma,
                            const Tensor& gout, Tensor* gin, double* ggamma,
                            double* gbeta) {
  const Tensor& xhat = cache.xhat;
  const std::int64_t n = xhat.spatial();
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < xhat.c; ++ci) {
    const double* xh = xhat.channel(ci);
    const double* gy = gout.channel(ci);
    double sum_gy = 0.0, sum_gy_xh = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      sum_gy += gy[i];
      sum_gy_xh += gy[i] * xh[i];
    }
    ggamma[ci] += sum_gy_xh;
    gbeta[ci] += sum_gy;
    const double mean_gy = sum_gy / static_cast<double>(n);
    const double mean_gy_xh = sum_gy_xh / static_cast<double>(n);
    const double scale = gamma[ci] * cache.inv_std[ci];
    double* gi = gin->channel(ci);
    for (std::int64_t i = 0; i < n; ++i)
      gi[i] += scale * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
  }
}

Tensor leaky_relu_forward(const Tensor& in, double slope) {
  Tensor out(in.c, in.d, in.h, in.w);
  const std::int64_t n = in.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    out.v[i] = in.v[i] > 0.0 ? in.v[i] : slope * in.v[i];
  return out;
}

void leaky_relu_backward(const Tensor& in, double slope, const Tensor& gout,
                         Tensor* gin) {
  const std::int64_t n = in.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    gin->v[i] += gout.v[i] * (in.v[i] > 0.0 ? 1.0 : slope);
}

Tensor relu_forward(const Tensor& in) { return leaky_relu_forward(in, 0.0); }

void relu_backward(const Tensor& in, const Tensor& gout, Tensor* gin) {
  leaky_relu_backward(in, 0.0, gout, gin);
}

Tensor sigmoid_forward(const Tensor& in) {
  Tensor out(in.c, in.d, in.h, in.w);
  const std::int64_t n = in.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    out.v[i] = 1.0 / (1.0 + std::exp(-in.v[i]));
  return out;
}

void sigmoid_backward(const Tensor& out, const Tensor& gout, Tensor* gin) {
  const std::int64_t n = out.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    gin->v[i] += gout.v[i] * out.v[i] * (1.0 - out.v[i]);
}

Tensor maxpool2_forward(const Tensor& in, std::vector<std::int32_t>* argmax) {
  Tensor out(in.c, in.d / 2, in.h / 2, in.w / 2);
  argmax->assign(static_cast<std::size_t>(out.size()), 0);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < in.c; ++ci) {
    const double* x = in.channel(ci);
    double* o = out.channel(ci);
    std::int32_t* am = argmax->data() + ci * out.spatial();
    std::int64_t oi = 0;
    for (int zo = 0; zo < out.d; ++zo)
      for (int yo = 0; yo < out.h; ++yo)
        for (int xo = 0; xo < out.w; ++xo, ++oi) {
          double best = -1e300;
          std::int32_t best_i = 0;
          for (int kz = 0; kz < 2; ++kz)
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx) {
                const std::int64_t ii =
                    ((static_cast<std::int64_t>(zo * 2 + kz) * in.h) + yo * 2 + ky) * in.w +
                    xo * 2 + kx;
                if (x[ii] > best) {
                  best = x[ii];
                  best_i = static_cast<std::int32_t>(ii);
                }
              }
          o[oi] = best;
          am[oi] = best_i;
        }
  }
  return out;
}

void maxpool2_backward(const Tensor& in, const Tensor& gout,
                       const std::vector<std::int32_t>& argmax, Tensor* gin) {
  const std::int64_t on = gout.spatial();
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < in.c; ++ci) {
    const double* gy = gout.channel(ci);
    const std::int32_t* am = argmax.data() + ci * on;
    double* gi = gin->channel(ci);
    for (std::int64_t i = 0; i < on; ++i) gi[am[i]] += gy[i];
  }
}

Tensor upsample2_forward(const Tensor& in) {
  Tensor out(in.c, in.d * 2, in.h * 2, in.w * 2);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < in.c; ++ci) {
    const double* x = in.channel(ci);
    double* o = out.channel(ci);
    for (int zo = 0; zo < out.d; ++zo)
      for (int yo = 0; yo < out.h; ++yo) {
        const double* x_row =
            x + (static_cast<std::int64_t>(zo / 2) * in.h + yo / 2) * in.w;
        double* o_row = o + (static_cast<std::int64_t>(zo) * out.h + yo) * out.w;
        for (int xo = 0; xo < out.w; ++xo) o_row[xo] = x_row[xo / 2];
      }
  }
  return out;
}

void upsample2_backward(const Tensor& in, const Tensor& gout, Tensor* gin) {
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < in.c; ++ci) {
    const double* gy = gout.channel(ci);
    double* gi = gin->channel(ci);
    for (int zi = 0; zi < in.d; ++zi)
      for (int yi = 0; yi < in.h; ++yi) {
        double* gi_row = gi + (static_cast<std::int64_t>(zi) * in.h + yi) * in.w;
        for (int kz = 0; kz < 2; ++kz)
          for (int ky = 0; ky < 2; ++ky) {
            const double* gy_row =
                gy + (static_cast<std::int64_t>(zi * 2 + kz) * gout.h + yi * 2 + ky) * gout.w;
            for (int xi = 0; xi < in.w; ++xi)
              gi_row[xi] += gy_row[xi * 2] + gy_row[xi * 2 + 1];
          }
      }
  }
}

Tensor concat_forward(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.d, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.size());
  return out;
}

void concat_backward(const Tensor& gout, int ca, Tensor* ga, Tensor* gb) {
  if (ga->c != ca || ga->c + gb->c != gout.c)
    throw ShapeError("concat_backward channel split mismatch");
  const std::int64_t na = ga->size();
  for (std::int64_t i = 0; i < na; ++i) ga->v[i] += gout.v[i];
  const std::int64_t nb = gb->size();
  for (std::int64_t i = 0; i < nb; ++i) gb->v[i] += gout.v[na + i];
}

}  // namespace vesselseg::nn
