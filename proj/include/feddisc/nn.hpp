#pragma once

// Dense feedforward networks with hand-written backpropagation. Used both for
// the reconstruction autoencoder and for the optional softmax head that sits
// on its latent code.
//
// Parameter layout: for each layer in declared order, the weight matrix
// (out_dim x in_dim, row-major) followed by the bias vector (out_dim).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "feddisc/error.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

enum class Activation : std::uint8_t { ReLU = 0, Identity = 1, Softmax = 2 };

enum class Label : std::uint8_t { Natural = 0, Attack = 1 };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::ReLU;

  bool operator==(const LayerSpec&) const = default;
};

struct Sample {
  std::vector<double> features;
  Label label = Label::Natural;
  /// Index of the source file the row came from (0 when unknown).
  std::uint16_t source = 0;
};

using Rows = std::vector<std::vector<double>>;

inline void validate_spec(std::span<const LayerSpec> spec) {
  if (spec.empty()) throw DataError("network spec has no layers");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (spec[i].in_dim == 0 || spec[i].out_dim == 0)
      throw DataError("layer " + std::to_string(i) + " has a zero dimension");
    if (i + 1 < spec.size() && spec[i].out_dim != spec[i + 1].in_dim)
      throw DataError("layer " + std::to_string(i) + " output " +
                      std::to_string(spec[i].out_dim) + " does not chain into layer " +
                      std::to_string(i + 1) + " input " + std::to_string(spec[i + 1].in_dim));
    if (spec[i].activation == Activation::Softmax && i + 1 != spec.size())
      throw DataError("softmax is only allowed on the final layer");
  }
}

inline std::size_t param_count(std::span<const LayerSpec> spec) {
  std::size_t m = 0;
  for (const auto& l : spec) m += l.in_dim * l.out_dim + l.out_dim;
  return m;
}

/// Symmetric autoencoder spec: `widths` lists the encoder sizes from input to
/// latent, the decoder mirrors them back.
inline std::vector<LayerSpec> autoencoder_spec(std::span<const std::size_t> widths,
                                               Activation hidden = Activation::ReLU,
                                               Activation output = Activation::ReLU) {
  if (widths.size() < 2) throw DataError("autoencoder needs at least input and latent widths");
  std::vector<LayerSpec> spec;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    spec.push_back({widths[i], widths[i + 1], hidden});
  for (std::size_t i = widths.size() - 1; i > 0; --i)
    spec.push_back({widths[i], widths[i - 1], hidden});
  spec.back().activation = output;
  return spec;
}

/// Encoder 100-64-48-32-24-16, mirrored decoder.
inline std::vector<std::size_t> default_encoder_widths(std::size_t input_dim = 100) {
  return {input_dim, 64, 48, 32, 24, 16};
}

struct ModelParams {
  std::vector<LayerSpec> spec;
  std::vector<double> flat;

  ModelParams() = default;
  ModelParams(std::vector<LayerSpec> s, std::vector<double> f)
      : spec(std::move(s)), flat(std::move(f)) {
    validate_spec(spec);
    if (flat.size() != param_count(spec))
      throw DataError("parameter vector has " + std::to_string(flat.size()) +
                      " entries, spec needs " + std::to_string(param_count(spec)));
  }

  std::size_t size() const { return flat.size(); }
  std::size_t input_dim() const { return spec.front().in_dim; }
  std::size_t output_dim() const { return spec.back().out_dim; }
  bool has_softmax_head() const { return spec.back().activation == Activation::Softmax; }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < layer; ++i)
      off += spec[i].in_dim * spec[i].out_dim + spec[i].out_dim;
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + spec[layer].in_dim * spec[layer].out_dim;
  }

  /// Layer whose output is the bottleneck code: the first layer of minimal width.
  std::size_t latent_layer() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < spec.size(); ++i)
      if (spec[i].out_dim < spec[best].out_dim) best = i;
    return best;
  }

  bool operator==(const ModelParams&) const = default;
};

struct ForwardTrace {
  std::vector<std::vector<double>> pre;          ///< pre-activation per layer
  std::vector<std::vector<double>> activations;  ///< [0] is the input, [i+1] is layer i output
  std::size_t latent_layer = 0;

  std::span<const double> latent() const { return activations[latent_layer + 1]; }
  /// Reconstruction for an autoencoder, class probabilities for a softmax head.
  std::span<const double> output() const { return activations.back(); }
};

namespace detail {

inline void check_finite(std::span<const double> v, std::size_t layer, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite ") + what + " in layer " + std::to_string(layer));
}

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace detail

inline ForwardTrace forward(const ModelParams& params, std::span<const double> x) {
  if (x.size() != params.input_dim())
    throw DataError("input has " + std::to_string(x.size()) + " features, network expects " +
                    std::to_string(params.input_dim()));
  ForwardTrace t;
  t.latent_layer = params.latent_layer();
  t.pre.resize(params.spec.size());
  t.activations.resize(params.spec.size() + 1);
  t.activations[0].assign(x.begin(), x.end());
  for (std::size_t li = 0; li < params.spec.size(); ++li) {
    const auto& l = params.spec[li];
    const double* w = params.flat.data() + params.weight_offset(li);
    const double* b = params.flat.data() + params.bias_offset(li);
    const auto& in = t.activations[li];
    auto& z = t.pre[li];
    z.resize(l.out_dim);
    for (std::size_t o = 0; o < l.out_dim; ++o) {
      double acc = b[o];
      const double* row = w + o * l.in_dim;
      for (std::size_t i = 0; i < l.in_dim; ++i) acc += row[i] * in[i];
      z[o] = acc;
    }
    detail::check_finite(z, li, "pre-activation");
    auto& a = t.activations[li + 1];
    a = z;
    switch (l.activation) {
      case Activation::ReLU:
        for (double& v : a) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::Identity:
        break;
      case Activation::Softmax:
        detail::softmax_inplace(a);
        break;
    }
  }
  return t;
}

inline double mse(std::span<const double> x, std::span<const double> xhat) {
  if (x.size() != xhat.size())
    throw DataError("mse: length mismatch " + std::to_string(x.size()) + " vs " +
                    std::to_string(xhat.size()));
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - xhat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

enum class Loss : std::uint8_t { Reconstruction = 0, CrossEntropy = 1 };

namespace detail {

inline void check_loss_shape(const ModelParams& params, Loss loss) {
  if (loss == Loss::Reconstruction) {
    if (params.has_softmax_head())
      throw DataError("reconstruction loss on a network with a softmax head");
    if (params.output_dim() != params.input_dim())
      throw DataError("reconstruction loss needs output dim == input dim");
  } else {
    if (!params.has_softmax_head())
      throw DataError("cross-entropy loss needs a softmax final layer");
    if (params.output_dim() < 2) throw DataError("softmax head needs at least 2 classes");
  }
}

inline double sample_loss(const ForwardTrace& t, const Sample& s, Loss loss) {
  if (loss == Loss::Reconstruction) return mse(s.features, t.output());
  const auto& logits = t.pre.back();
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const auto y = static_cast<std::size_t>(s.label);
  return -(logits[y] - mx - std::log(sum));
}

}  // namespace detail

/// Mean loss over a set of samples.
inline double mean_loss(const ModelParams& params, std::span<const Sample> samples, Loss loss) {
  detail::check_loss_shape(params, loss);
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : samples) acc += detail::sample_loss(forward(params, s.features), s, loss);
  return acc / static_cast<double>(samples.size());
}

/// Average gradient of the loss over `batch`. ReLU'(0) is taken as 0.
inline std::vector<double> backward(const ModelParams& params, std::span<const Sample> batch,
                                    Loss loss) {
  if (batch.empty()) throw DataError("backward: empty batch");
  detail::check_loss_shape(params, loss);
  const std::size_t n_layers = params.spec.size();
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> delta, prev;

  for (const auto& s : batch) {
    if (s.features.size() != params.input_dim())
      throw DataError("backward: sample has " + std::to_string(s.features.size()) +
                      " features, network expects " + std::to_string(params.input_dim()));
    const ForwardTrace t = forward(params, s.features);

    const auto& out = t.activations.back();
    delta.assign(out.size(), 0.0);
    if (loss == Loss::Reconstruction) {
      const double scale = 2.0 / static_cast<double>(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) delta[i] = scale * (out[i] - s.features[i]);
    } else {
      const auto y = static_cast<std::size_t>(s.label);
      if (y >= out.size()) throw DataError("label index outside softmax head");
      for (std::size_t i = 0; i < out.size(); ++i) delta[i] = out[i] - (i == y ? 1.0 : 0.0);
    }

    for (std::size_t li = n_layers; li-- > 0;) {
      const auto& l = params.spec[li];
      // Softmax + cross-entropy already folded into delta.
      if (l.activation == Activation::ReLU)
        for (std::size_t o = 0; o < l.out_dim; ++o)
          if (!(t.pre[li][o] > 0.0)) delta[o] = 0.0;
      detail::check_finite(delta, li, "gradient");

      const auto& in = t.activations[li];
      double* gw = grad.data() + params.weight_offset(li);
      double* gb = grad.data() + params.bias_offset(li);
      for (std::size_t o = 0; o < l.out_dim; ++o) {
        const double d = delta[o];
        gb[o] += d;
        if (d == 0.0) continue;
        double* row = gw + o * l.in_dim;
        for (std::size_t i = 0; i < l.in_dim; ++i) row[i] += d * in[i];
      }
      if (li == 0) break;
      const double* w = params.flat.data() + params.weight_offset(li);
      prev.assign(l.in_dim, 0.0);
      for (std::size_t o = 0; o < l.out_dim; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = w + o * l.in_dim;
        for (std::size_t i = 0; i < l.in_dim; ++i) prev[i] += row[i] * d;
      }
      delta.swap(prev);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return grad;
}

/// One plain SGD step, in place.
inline void sgd_step(ModelParams& params, std::span<const Sample> batch, Loss loss, double lr) {
  const auto g = backward(params, batch, loss);
  for (std::size_t i = 0; i < g.size(); ++i) params.flat[i] -= lr * g[i];
}

// --- Restricted Boltzmann machine pretraining -------------------------------

struct RbmLayer {
  std::size_t visible = 0;
  std::size_t hidden = 0;
  std::vector<double> weights;  ///< hidden x visible, row-major
  std::vector<double> hidden_bias;
  std::vector<double> visible_bias;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void rbm_hidden(const RbmLayer& r, std::span<const double> v, std::vector<double>& h) {
  h.resize(r.hidden);
  for (std::size_t j = 0; j < r.hidden; ++j) {
    double acc = r.hidden_bias[j];
    const double* row = r.weights.data() + j * r.visible;
    for (std::size_t i = 0; i < r.visible; ++i) acc += row[i] * v[i];
    h[j] = sigmoid(acc);
  }
}

inline void rbm_visible(const RbmLayer& r, std::span<const double> h, std::vector<double>& v) {
  v.assign(r.visible_bias.begin(), r.visible_bias.end());
  for (std::size_t j = 0; j < r.hidden; ++j) {
    const double* row = r.weights.data() + j * r.visible;
    for (std::size_t i = 0; i < r.visible; ++i) v[i] += row[i] * h[j];
  }
  for (double& x : v) x = sigmoid(x);
}

}  // namespace detail

/// Visible reconstruction probabilities after one up-down pass (mean field).
inline std::vector<double> rbm_reconstruct(const RbmLayer& r, std::span<const double> v) {
  std::vector<double> h, out;
  detail::rbm_hidden(r, v, h);
  detail::rbm_visible(r, h, out);
  return out;
}

/// Full-batch CD-1. Weights start at N(0, 0.01^2), biases at zero. Visible
/// units are Bernoulli with the data values as probabilities.
inline RbmLayer cd1_pretrain(const LayerSpec& layer, const Rows& data, int epochs, double lr,
                             std::uint64_t seed) {
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (data[r].size() != layer.in_dim)
      throw DataError("cd1_pretrain: row " + std::to_string(r) + " has wrong width");
    for (double v : data[r])
      if (!(v >= 0.0 && v <= 1.0))
        throw DataError("cd1_pretrain: row " + std::to_string(r) + " has a value outside [0,1]");
  }
  RbmLayer rbm;
  rbm.visible = layer.in_dim;
  rbm.hidden = layer.out_dim;
  rbm.weights.resize(rbm.visible * rbm.hidden);
  rbm.hidden_bias.assign(rbm.hidden, 0.0);
  rbm.visible_bias.assign(rbm.visible, 0.0);
  Engine eng(seed);
  std::normal_distribution<double> init(0.0, 0.01);
  for (double& w : rbm.weights) w = init(eng);
  if (data.empty()) return rbm;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> dw(rbm.weights.size()), dvb(rbm.visible), dhb(rbm.hidden);
  std::vector<double> h0, h0s(rbm.hidden), v1, h1;
  const double scale = lr / static_cast<double>(data.size());
  for (int e = 0; e < epochs; ++e) {
    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(dvb.begin(), dvb.end(), 0.0);
    std::fill(dhb.begin(), dhb.end(), 0.0);
    for (const auto& v0 : data) {
      detail::rbm_hidden(rbm, v0, h0);
      for (std::size_t j = 0; j < rbm.hidden; ++j) h0s[j] = unif(eng) < h0[j] ? 1.0 : 0.0;
      detail::rbm_visible(rbm, h0s, v1);
      detail::rbm_hidden(rbm, v1, h1);
      for (std::size_t j = 0; j < rbm.hidden; ++j) {
        double* row = dw.data() + j * rbm.visible;
        for (std::size_t i = 0; i < rbm.visible; ++i) row[i] += h0[j] * v0[i] - h1[j] * v1[i];
        dhb[j] += h0[j] - h1[j];
      }
      for (std::size_t i = 0; i < rbm.visible; ++i) dvb[i] += v0[i] - v1[i];
    }
    for (std::size_t k = 0; k < dw.size(); ++k) rbm.weights[k] += scale * dw[k];
    for (std::size_t j = 0; j < rbm.hidden; ++j) rbm.hidden_bias[j] += scale * dhb[j];
    for (std::size_t i = 0; i < rbm.visible; ++i) rbm.visible_bias[i] += scale * dvb[i];
  }
  return rbm;
}

// --- Initialization ---------------------------------------------------------

enum class InitScheme : std::uint8_t { UniformHe = 0, Cd1Pretrained = 1 };

struct Cd1Options {
  int epochs = 10;
  double lr = 0.1;
};

/// Weights ~ U(-sqrt(6/in), sqrt(6/in)), biases zero. With Cd1Pretrained and
/// non-empty `data`, encoder layers up to the latent code are replaced by
/// greedily stacked CD-1 RBMs; decoder layers that mirror an encoder layer get
/// its transposed weights and visible biases.
inline ModelParams init_params(const std::vector<LayerSpec>& spec, std::uint64_t seed,
                               InitScheme scheme = InitScheme::UniformHe, const Rows& data = {},
                               Cd1Options cd1 = {}) {
  validate_spec(spec);
  ModelParams p(spec, std::vector<double>(param_count(spec), 0.0));
  Engine eng(seed);
  for (std::size_t li = 0; li < spec.size(); ++li) {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec[li].in_dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    double* w = p.flat.data() + p.weight_offset(li);
    for (std::size_t k = 0; k < spec[li].in_dim * spec[li].out_dim; ++k) w[k] = u(eng);
  }
  if (scheme != InitScheme::Cd1Pretrained || data.empty()) return p;

  Rows level = data;
  const std::size_t latent = p.latent_layer();
  const std::size_t n = spec.size();
  for (std::size_t li = 0; li <= latent; ++li) {
    const RbmLayer rbm = cd1_pretrain(spec[li], level, cd1.epochs, cd1.lr, hash64({seed, li}));
    std::copy(rbm.weights.begin(), rbm.weights.end(), p.flat.begin() + p.weight_offset(li));
    std::copy(rbm.hidden_bias.begin(), rbm.hidden_bias.end(), p.flat.begin() + p.bias_offset(li));
    const std::size_t mirror = n - 1 - li;
    if (mirror > latent && spec[mirror].in_dim == spec[li].out_dim &&
        spec[mirror].out_dim == spec[li].in_dim) {
      double* w = p.flat.data() + p.weight_offset(mirror);
      for (std::size_t j = 0; j < rbm.hidden; ++j)
        for (std::size_t i = 0; i < rbm.visible; ++i)
          w[i * rbm.hidden + j] = rbm.weights[j * rbm.visible + i];
      std::copy(rbm.visible_bias.begin(), rbm.visible_bias.end(),
                p.flat.begin() + p.bias_offset(mirror));
    }
    for (auto& row : level) {
      std::vector<double> h;
      detail::rbm_hidden(rbm, row, h);
      row = std::move(h);
    }
  }
  return p;
}

}  // namespace feddisc
