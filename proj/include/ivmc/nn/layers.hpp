#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ivmc/common.hpp"
#include "ivmc/tensor.hpp"

namespace ivmc::nn {

enum class Activation { Identity, Tanh, Relu };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

inline double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: return 1.0 - post * post;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
  }
  (void)pre;
  return 1.0;
}

// Named view of a trainable parameter block and its gradient accumulator.
struct ParamView {
  std::string name;
  std::vector<double>* value;
  std::vector<double>* grad;
};

struct DenseCache {
  std::vector<double> x;
  std::vector<double> pre;
  std::vector<double> y;
};

struct DenseLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::Identity;
  std::vector<double> w, b;    // w is [out x in] row-major
  std::vector<double> gw, gb;

  DenseLayer() = default;
  DenseLayer(std::size_t in_w, std::size_t out_w, Activation a)
      : in(in_w), out(out_w), act(a),
        w(out_w * in_w, 0.0), b(out_w, 0.0),
        gw(out_w * in_w, 0.0), gb(out_w, 0.0) {}

  void init(Rng& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(in + out));
    for (double& v : w) v = s * rng.normal();
    for (double& v : b) v = 0.0;
  }

  void zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
  }

  void forward(const std::vector<double>& x, DenseCache& c) const {
    if (x.size() != in) throw std::invalid_argument("dense_forward: input width mismatch");
    c.x = x;
    c.pre.resize(out);
    c.y.resize(out);
    matvec(w, out, in, x.data(), c.pre.data());
    for (std::size_t i = 0; i < out; ++i) {
      c.pre[i] += b[i];
      c.y[i] = activate(act, c.pre[i]);
    }
  }

  // Accumulates parameter gradients; writes input gradient into dx (resized).
  void backward(const DenseCache& c, const std::vector<double>& dy,
                std::vector<double>& dx) {
    std::vector<double> dpre(out);
    for (std::size_t i = 0; i < out; ++i)
      dpre[i] = dy[i] * activate_grad(act, c.pre[i], c.y[i]);
    outer_acc(gw, out, in, dpre.data(), c.x.data());
    for (std::size_t i = 0; i < out; ++i) gb[i] += dpre[i];
    dx.assign(in, 0.0);
    matvec_t(w, out, in, dpre.data(), dx.data());
  }

  std::vector<ParamView> params(const std::string& prefix) {
    return {{prefix + ".w", &w, &gw}, {prefix + ".b", &b, &gb}};
  }
};

// Free-function spellings used by callers that want the operation names.
inline TensorBuffer dense_forward(const DenseLayer& layer, const TensorBuffer& x) {
  DenseCache c;
  layer.forward(x.data, c);
  return TensorBuffer({layer.out}, std::move(c.y));
}

struct ConcreteDropoutCache {
  std::vector<double> x;
  std::vector<double> noise;
  std::vector<double> z;
  bool stochastic = false;
};

// Dropout with a concrete (continuous) relaxation of the Bernoulli mask so
// the rate is trainable. Gate z_i = sigmoid((rate_logit + logit(u_i)) / temp),
// output_i = x_i * (1 - z_i) / (1 - p). Deterministic mode uses the gate
// expectation, which makes the layer the identity.
struct ConcreteDropoutLayer {
  std::size_t width = 0;
  std::vector<double> rate_logit;   // single scalar, kept as a block for the registry
  std::vector<double> g_rate_logit;
  double temperature = 0.1;
  double weight_reg = 0.0;  // coefficient on ||W||^2/(1-p), before /N
  double rate_reg = 0.0;    // coefficient on D*entropy(p), before /N

  ConcreteDropoutLayer() = default;
  ConcreteDropoutLayer(std::size_t w, double init_p, double temp,
                       double wreg, double rreg)
      : width(w), rate_logit{std::log(init_p / (1.0 - init_p))},
        g_rate_logit{0.0}, temperature(temp), weight_reg(wreg), rate_reg(rreg) {
    if (temp <= 0.0) throw std::invalid_argument("concrete dropout: temperature must be > 0");
  }

  // clamped away from the endpoints so (1-p) divisions stay finite even for
  // saturating logits
  double rate() const { return std::clamp(sigmoid(rate_logit[0]), 1e-12, 1.0 - 1e-12); }
  void zero_grad() { g_rate_logit[0] = 0.0; }

  void forward(const std::vector<double>& x, const std::vector<double>& noise,
               bool stochastic, ConcreteDropoutCache& c,
               std::vector<double>& y) const {
    if (x.size() != width) throw std::invalid_argument("concrete_dropout_forward: width mismatch");
    c.x = x;
    c.stochastic = stochastic;
    y.resize(width);
    if (!stochastic) {
      // gates at expectation: E[(1-z)] = 1-p, cancelled by the 1/(1-p) scale
      for (std::size_t i = 0; i < width; ++i) y[i] = x[i];
      return;
    }
    if (noise.size() != width) throw std::invalid_argument("concrete_dropout_forward: noise width mismatch");
    const double p = rate();
    c.noise = noise;
    c.z.resize(width);
    for (std::size_t i = 0; i < width; ++i) {
      const double u = noise[i];
      if (!(u > 0.0 && u < 1.0))
        throw std::invalid_argument("concrete_dropout_forward: noise must lie in the open interval (0,1)");
      const double z = sigmoid((rate_logit[0] + std::log(u / (1.0 - u))) / temperature);
      c.z[i] = z;
      y[i] = x[i] * (1.0 - z) / (1.0 - p);
    }
  }

  void backward(const ConcreteDropoutCache& c, const std::vector<double>& dy,
                std::vector<double>& dx) {
    dx.assign(width, 0.0);
    if (!c.stochastic) {
      for (std::size_t i = 0; i < width; ++i) dx[i] = dy[i];
      return;
    }
    const double p = rate();
    const double dp_drl = p * (1.0 - p);
    for (std::size_t i = 0; i < width; ++i) {
      const double z = c.z[i];
      dx[i] = dy[i] * (1.0 - z) / (1.0 - p);
      // y_i = x_i (1-z_i)/(1-p); z depends on rate_logit directly, p via sigmoid
      const double dz_drl = z * (1.0 - z) / temperature;
      const double dy_drl =
          c.x[i] * (-dz_drl / (1.0 - p) +
                    (1.0 - z) * dp_drl / ((1.0 - p) * (1.0 - p)));
      g_rate_logit[0] += dy[i] * dy_drl;
    }
  }

  std::vector<ParamView> params(const std::string& prefix) {
    return {{prefix + ".rate_logit", &rate_logit, &g_rate_logit}};
  }
};

inline TensorBuffer concrete_dropout_forward(const ConcreteDropoutLayer& layer,
                                             const TensorBuffer& x,
                                             const TensorBuffer& noise,
                                             bool training) {
  ConcreteDropoutCache c;
  std::vector<double> y;
  layer.forward(x.data, noise.data, training, c, y);
  return TensorBuffer({layer.width}, std::move(y));
}

// weight_reg * ||W||^2 / (1-p) + rate_reg * D * (p log p + (1-p) log(1-p)),
// scaled by 1/dataset_size. D is the input width of the attached dense layer.
inline double concrete_dropout_regularizer(const ConcreteDropoutLayer& layer,
                                           const DenseLayer& attached_dense,
                                           std::size_t dataset_size) {
  if (dataset_size == 0) throw std::invalid_argument("concrete_dropout_regularizer: dataset_size must be > 0");
  const double p = layer.rate();
  double wsq = 0.0;
  for (double v : attached_dense.w) wsq += v * v;
  const double entropy = p * std::log(p) + (1.0 - p) * std::log(1.0 - p);
  const double d = static_cast<double>(attached_dense.in);
  return (layer.weight_reg * wsq / (1.0 - p) + layer.rate_reg * d * entropy) /
         static_cast<double>(dataset_size);
}

// Adds the regularizer's gradients (dense weights and rate_logit).
inline void concrete_dropout_regularizer_backward(ConcreteDropoutLayer& layer,
                                                  DenseLayer& attached_dense,
                                                  std::size_t dataset_size,
                                                  double scale = 1.0) {
  const double n = static_cast<double>(dataset_size);
  const double p = layer.rate();
  const double dp_drl = p * (1.0 - p);
  double wsq = 0.0;
  for (double v : attached_dense.w) wsq += v * v;
  for (std::size_t i = 0; i < attached_dense.w.size(); ++i)
    attached_dense.gw[i] += scale * 2.0 * layer.weight_reg * attached_dense.w[i] / ((1.0 - p) * n);
  const double d = static_cast<double>(attached_dense.in);
  // d/dp of the entropy term is logit(p) = rate_logit
  layer.g_rate_logit[0] +=
      scale *
      (layer.weight_reg * wsq / ((1.0 - p) * (1.0 - p)) +
       layer.rate_reg * d * layer.rate_logit[0]) *
      dp_drl / n;
}

struct LstmCache {
  std::vector<double> x;
  std::vector<double> h_prev, c_prev;
  std::vector<double> gates;  // [4*h] post-nonlinearity, order i,f,g,o
  std::vector<double> c_new, h_new;
};

// Copyable recurrent state; save/restore must round-trip bit-exactly.
struct LstmMemory {
  std::vector<double> hidden;
  std::vector<double> cell;

  LstmMemory() = default;
  explicit LstmMemory(std::size_t width) : hidden(width, 0.0), cell(width, 0.0) {}

  bool operator==(const LstmMemory& o) const {
    return hidden == o.hidden && cell == o.cell;
  }
};

struct LstmCell {
  std::size_t in = 0, width = 0;
  std::vector<double> wx, wh, b;     // wx [4h x in], wh [4h x h], b [4h]
  std::vector<double> gwx, gwh, gb;

  LstmCell() = default;
  LstmCell(std::size_t in_w, std::size_t h)
      : in(in_w), width(h),
        wx(4 * h * in_w, 0.0), wh(4 * h * h, 0.0), b(4 * h, 0.0),
        gwx(4 * h * in_w, 0.0), gwh(4 * h * h, 0.0), gb(4 * h, 0.0) {}

  void init(Rng& rng) {
    const double sx = std::sqrt(1.0 / static_cast<double>(in));
    const double sh = std::sqrt(1.0 / static_cast<double>(width));
    for (double& v : wx) v = sx * rng.normal();
    for (double& v : wh) v = sh * rng.normal();
    for (double& v : b) v = 0.0;
    // forget-gate bias at 1 helps gradient flow over long unrolls
    for (std::size_t i = 0; i < width; ++i) b[width + i] = 1.0;
  }

  void zero_grad() {
    std::fill(gwx.begin(), gwx.end(), 0.0);
    std::fill(gwh.begin(), gwh.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
  }

  // Standard gate equations; the input memory is untouched (value semantics).
  void step(const std::vector<double>& x, const LstmMemory& mem,
            LstmCache& cache, LstmMemory& mem_out) const {
    if (x.size() != in) throw std::invalid_argument("lstm_step: input width mismatch");
    if (mem.hidden.size() != width || mem.cell.size() != width)
      throw std::invalid_argument("lstm_step: memory width mismatch");
    cache.x = x;
    cache.h_prev = mem.hidden;
    cache.c_prev = mem.cell;
    std::vector<double> pre(4 * width, 0.0);
    matvec(wx, 4 * width, in, x.data(), pre.data());
    std::vector<double> tmp(4 * width, 0.0);
    matvec(wh, 4 * width, width, mem.hidden.data(), tmp.data());
    for (std::size_t i = 0; i < 4 * width; ++i) pre[i] += tmp[i] + b[i];
    cache.gates.resize(4 * width);
    cache.c_new.resize(width);
    cache.h_new.resize(width);
    for (std::size_t i = 0; i < width; ++i) {
      const double ig = sigmoid(pre[i]);
      const double fg = sigmoid(pre[width + i]);
      const double gg = std::tanh(pre[2 * width + i]);
      const double og = sigmoid(pre[3 * width + i]);
      cache.gates[i] = ig;
      cache.gates[width + i] = fg;
      cache.gates[2 * width + i] = gg;
      cache.gates[3 * width + i] = og;
      cache.c_new[i] = fg * mem.cell[i] + ig * gg;
      cache.h_new[i] = og * std::tanh(cache.c_new[i]);
    }
    mem_out.hidden = cache.h_new;
    mem_out.cell = cache.c_new;
  }

  // dh/dc are gradients w.r.t. this step's outputs; on return dh_prev/dc_prev
  // hold the gradients to pass to the previous step, dx the input gradient.
  void backward(const LstmCache& cache, const std::vector<double>& dh,
                const std::vector<double>& dc, std::vector<double>& dx,
                std::vector<double>& dh_prev, std::vector<double>& dc_prev) {
    std::vector<double> dpre(4 * width);
    dh_prev.assign(width, 0.0);
    dc_prev.assign(width, 0.0);
    dx.assign(in, 0.0);
    for (std::size_t i = 0; i < width; ++i) {
      const double ig = cache.gates[i];
      const double fg = cache.gates[width + i];
      const double gg = cache.gates[2 * width + i];
      const double og = cache.gates[3 * width + i];
      const double tc = std::tanh(cache.c_new[i]);
      const double dcd = dc[i] + dh[i] * og * (1.0 - tc * tc);
      dpre[i] = dcd * gg * ig * (1.0 - ig);
      dpre[width + i] = dcd * cache.c_prev[i] * fg * (1.0 - fg);
      dpre[2 * width + i] = dcd * ig * (1.0 - gg * gg);
      dpre[3 * width + i] = dh[i] * tc * og * (1.0 - og);
      dc_prev[i] = dcd * fg;
    }
    outer_acc(gwx, 4 * width, in, dpre.data(), cache.x.data());
    outer_acc(gwh, 4 * width, width, dpre.data(), cache.h_prev.data());
    for (std::size_t i = 0; i < 4 * width; ++i) gb[i] += dpre[i];
    matvec_t(wx, 4 * width, in, dpre.data(), dx.data());
    matvec_t(wh, 4 * width, width, dpre.data(), dh_prev.data());
  }

  std::vector<ParamView> params(const std::string& prefix) {
    return {{prefix + ".wx", &wx, &gwx},
            {prefix + ".wh", &wh, &gwh},
            {prefix + ".b", &b, &gb}};
  }
};

inline std::pair<TensorBuffer, LstmMemory> lstm_step(const LstmCell& cell,
                                                     const TensorBuffer& x,
                                                     const LstmMemory& mem) {
  LstmCache cache;
  LstmMemory out;
  cell.step(x.data, mem, cache, out);
  return {TensorBuffer({cell.width}, cache.h_new), out};
}

struct Conv2dCache {
  std::vector<double> x;  // [cin x h x w]
  std::vector<double> pre;
};

// 3x3 stride-2 pad-1 convolution, the only flavour the grid encoder needs.
struct Conv2dLayer {
  std::size_t cin = 0, cout = 0, hin = 0, win = 0;
  std::size_t hout = 0, wout = 0;
  Activation act = Activation::Relu;
  std::vector<double> w, b;  // w [cout x cin x 3 x 3]
  std::vector<double> gw, gb;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t ci, std::size_t co, std::size_t h, std::size_t wdt,
              Activation a)
      : cin(ci), cout(co), hin(h), win(wdt),
        hout((h + 2 - 3) / 2 + 1), wout((wdt + 2 - 3) / 2 + 1), act(a),
        w(co * ci * 9, 0.0), b(co, 0.0), gw(co * ci * 9, 0.0), gb(co, 0.0) {}

  void init(Rng& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(cin * 9));
    for (double& v : w) v = s * rng.normal();
  }

  void zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
  }

  std::size_t out_size() const { return cout * hout * wout; }

  void forward(const std::vector<double>& x, Conv2dCache& c,
               std::vector<double>& y) const {
    if (x.size() != cin * hin * win)
      throw std::invalid_argument("conv2d: input size mismatch");
    c.x = x;
    c.pre.assign(out_size(), 0.0);
    y.resize(out_size());
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t oy = 0; oy < hout; ++oy) {
        for (std::size_t ox = 0; ox < wout; ++ox) {
          double acc = b[oc];
          const long iy0 = static_cast<long>(2 * oy) - 1;
          const long ix0 = static_cast<long>(2 * ox) - 1;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* xp = x.data() + ic * hin * win;
            const double* wp = w.data() + (oc * cin + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              const long iy = iy0 + ky;
              if (iy < 0 || iy >= static_cast<long>(hin)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long ix = ix0 + kx;
                if (ix < 0 || ix >= static_cast<long>(win)) continue;
                acc += wp[ky * 3 + kx] * xp[iy * win + ix];
              }
            }
          }
          const std::size_t oi = (oc * hout + oy) * wout + ox;
          c.pre[oi] = acc;
          y[oi] = activate(act, acc);
        }
      }
    }
  }

  void backward(const Conv2dCache& c, const std::vector<double>& dy,
                std::vector<double>& dx) {
    dx.assign(cin * hin * win, 0.0);
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t oy = 0; oy < hout; ++oy) {
        for (std::size_t ox = 0; ox < wout; ++ox) {
          const std::size_t oi = (oc * hout + oy) * wout + ox;
          const double post = activate(act, c.pre[oi]);
          const double dpre = dy[oi] * activate_grad(act, c.pre[oi], post);
          if (dpre == 0.0) continue;
          gb[oc] += dpre;
          const long iy0 = static_cast<long>(2 * oy) - 1;
          const long ix0 = static_cast<long>(2 * ox) - 1;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* xp = c.x.data() + ic * hin * win;
            double* dxp = dx.data() + ic * hin * win;
            const double* wp = w.data() + (oc * cin + ic) * 9;
            double* gwp = gw.data() + (oc * cin + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              const long iy = iy0 + ky;
              if (iy < 0 || iy >= static_cast<long>(hin)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long ix = ix0 + kx;
                if (ix < 0 || ix >= static_cast<long>(win)) continue;
                gwp[ky * 3 + kx] += dpre * xp[iy * win + ix];
                dxp[iy * win + ix] += dpre * wp[ky * 3 + kx];
              }
            }
          }
        }
      }
    }
  }

  std::vector<ParamView> params(const std::string& prefix) {
    return {{prefix + ".w", &w, &gw}, {prefix + ".b", &b, &gb}};
  }
};

}  // namespace ivmc::nn
