#pragma once

// One-bit gradient quantization with majority-vote aggregation.
//
// Client side: centre the local gradient on its scalar mean, optionally clip
// and perturb each coordinate with Gaussian noise, keep only the sign, pack
// one bit per coordinate. Control-centre side: coordinate-wise sign of the
// summed votes, then a fixed-size step along it.
//
// Conventions: sign(0) = +1 everywhere, so even-K ties vote +1. Coordinate
// 8j+i lives in bit i of byte j; a set bit means +1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "feddisc/bytes.hpp"
#include "feddisc/error.hpp"
#include "feddisc/nn.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

inline constexpr std::size_t kWireHeaderBytes = 16;
inline constexpr std::uint32_t kBroadcastClient = 0xffffffffu;

constexpr std::int8_t sign_of(double v) noexcept { return v >= 0.0 ? 1 : -1; }

constexpr std::size_t packed_bytes(std::uint64_t dim) noexcept {
  return static_cast<std::size_t>((dim + 7) / 8);
}

struct SignGradient {
  std::vector<std::uint8_t> bits;
  std::uint64_t dim = 0;
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;

  bool operator==(const SignGradient&) const = default;
};

/// Full-precision vector message: an unquantized gradient on the uplink or
/// the model parameters on the downlink.
struct DenseVector {
  std::vector<double> values;
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;

  bool operator==(const DenseVector&) const = default;
};

struct DpConfig {
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip = 1.0;  ///< per-coordinate bound C
  bool enabled = false;

  /// Classical Gaussian-mechanism scale C*sqrt(2 ln(1.25/delta))/epsilon.
  double sigma() const { return clip * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon; }

  void validate() const {
    if (!(epsilon > 0.0)) throw UsageError("dp epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw UsageError("dp delta must lie in (0,1)");
    if (!(clip > 0.0 && std::isfinite(clip))) throw UsageError("dp clip norm must be finite and > 0");
    if (!std::isfinite(sigma())) throw UsageError("dp noise scale is not finite");
  }
};

struct Normalized {
  std::vector<double> centered;
  double mean = 0.0;
};

inline Normalized normalize(std::span<const double> g) {
  if (g.empty()) throw DataError("normalize: empty gradient");
  // Kahan summation.
  double sum = 0.0, comp = 0.0;
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericError("normalize: non-finite gradient entry");
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  Normalized out;
  out.mean = sum / static_cast<double>(g.size());
  out.centered.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out.centered[i] = g[i] - out.mean;
  return out;
}

inline SignGradient pack(std::span<const std::int8_t> signs, std::uint32_t client_id = 0,
                         std::uint32_t round = 0) {
  SignGradient out;
  out.dim = signs.size();
  out.client_id = client_id;
  out.round = round;
  out.bits.assign(packed_bytes(out.dim), 0);
  for (std::size_t i = 0; i < signs.size(); ++i) {
    if (signs[i] == 1)
      out.bits[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    else if (signs[i] != -1)
      throw DataError("pack: entry " + std::to_string(i) + " is not +1 or -1");
  }
  return out;
}

inline std::vector<std::int8_t> unpack(const SignGradient& g) {
  if (g.bits.size() != packed_bytes(g.dim)) throw DataError("unpack: payload length mismatch");
  std::vector<std::int8_t> out(g.dim);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (g.bits[i >> 3] >> (i & 7)) & 1u ? 1 : -1;
  return out;
}

/// Sign quantizer. With dp disabled this is the plain sign; with dp enabled
/// each coordinate is clipped to [-C, C] and gets N(0, sigma^2) noise first.
inline SignGradient dpsign(std::span<const double> g, const DpConfig& dp, std::uint64_t seed,
                           std::uint32_t client_id = 0, std::uint32_t round = 0) {
  std::vector<std::int8_t> s(g.size());
  if (!dp.enabled) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("dpsign: non-finite entry");
      s[i] = sign_of(g[i]);
    }
    return pack(s, client_id, round);
  }
  dp.validate();
  const double sigma = dp.sigma();
  Engine eng(seed);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) throw NumericError("dpsign: non-finite entry");
    double v = std::clamp(g[i], -dp.clip, dp.clip);
    if (sigma > 0.0) v += noise(eng);
    s[i] = sign_of(v);
  }
  return pack(s, client_id, round);
}

// --- Wire images -----------------------------------------------------------
// 16-byte header: round u32, client_id u32, dim u64 (little-endian), then the
// payload: ceil(dim/8) packed bytes or 8*dim bytes of IEEE-754 doubles.

inline std::vector<std::uint8_t> encode(const SignGradient& g) {
  std::vector<std::uint8_t> out;
  out.reserve(kWireHeaderBytes + g.bits.size());
  bytes::put<std::uint32_t>(out, g.round);
  bytes::put<std::uint32_t>(out, g.client_id);
  bytes::put<std::uint64_t>(out, g.dim);
  out.insert(out.end(), g.bits.begin(), g.bits.end());
  return out;
}

inline std::vector<std::uint8_t> encode(const DenseVector& v) {
  std::vector<std::uint8_t> out;
  out.reserve(kWireHeaderBytes + 8 * v.values.size());
  bytes::put<std::uint32_t>(out, v.round);
  bytes::put<std::uint32_t>(out, v.client_id);
  bytes::put<std::uint64_t>(out, v.values.size());
  for (double x : v.values) bytes::put<double>(out, x);
  return out;
}

inline SignGradient decode_sign_gradient(std::span<const std::uint8_t> wire) {
  bytes::Reader r(wire, "sign gradient");
  SignGradient g;
  g.round = r.get<std::uint32_t>();
  g.client_id = r.get<std::uint32_t>();
  g.dim = r.get<std::uint64_t>();
  if (r.remaining() != packed_bytes(g.dim)) throw DataError("sign gradient: payload length mismatch");
  auto payload = r.take(packed_bytes(g.dim));
  g.bits.assign(payload.begin(), payload.end());
  if (g.dim % 8 != 0 && (g.bits.back() >> (g.dim % 8)) != 0)
    throw DataError("sign gradient: trailing bits are not zero");
  return g;
}

inline DenseVector decode_dense(std::span<const std::uint8_t> wire) {
  bytes::Reader r(wire, "dense vector");
  DenseVector v;
  v.round = r.get<std::uint32_t>();
  v.client_id = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint64_t>();
  if (r.remaining() != 8 * dim) throw DataError("dense vector: payload length mismatch");
  v.values.resize(dim);
  for (auto& x : v.values) x = r.get<double>();
  return v;
}

// --- Aggregation -----------------------------------------------------------

struct AggregateUpdate {
  std::vector<std::int8_t> direction;  ///< majority sign per coordinate
  double eta = 0.0;
};

inline AggregateUpdate majority_vote(std::span<const SignGradient> updates, double eta) {
  if (updates.empty()) throw DataError("majority_vote: no updates");
  const auto dim = updates.front().dim;
  const auto round = updates.front().round;
  std::vector<std::int32_t> votes(dim, 0);
  for (const auto& u : updates) {
    if (u.dim != dim)
      throw DataError("majority_vote: client " + std::to_string(u.client_id) + " sent dim " +
                      std::to_string(u.dim) + ", expected " + std::to_string(dim));
    if (u.round != round)
      throw DataError("majority_vote: client " + std::to_string(u.client_id) + " sent round " +
                      std::to_string(u.round) + ", expected " + std::to_string(round));
    if (u.bits.size() != packed_bytes(dim)) throw DataError("majority_vote: payload length mismatch");
    for (std::size_t i = 0; i < dim; ++i) votes[i] += (u.bits[i >> 3] >> (i & 7)) & 1u ? 1 : -1;
  }
  AggregateUpdate agg;
  agg.eta = eta;
  agg.direction.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) agg.direction[i] = votes[i] >= 0 ? 1 : -1;
  return agg;
}

/// Unquantized counterpart: sign of the summed full-precision gradients.
inline AggregateUpdate sign_of_sum(std::span<const DenseVector> updates, double eta) {
  if (updates.empty()) throw DataError("sign_of_sum: no updates");
  const auto dim = updates.front().values.size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& u : updates) {
    if (u.values.size() != dim) throw DataError("sign_of_sum: dimension mismatch");
    if (u.round != updates.front().round) throw DataError("sign_of_sum: round mismatch");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += u.values[i];
  }
  AggregateUpdate agg;
  agg.eta = eta;
  agg.direction.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) agg.direction[i] = sign_of(sum[i]);
  return agg;
}

/// z - eta * direction.
inline std::vector<double> apply_update(std::span<const double> z, const AggregateUpdate& agg) {
  if (z.size() != agg.direction.size())
    throw DataError("apply_update: model has " + std::to_string(z.size()) +
                    " parameters, update has " + std::to_string(agg.direction.size()));
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - agg.eta * agg.direction[i];
  return out;
}

inline ModelParams apply_update(const ModelParams& z, const AggregateUpdate& agg) {
  ModelParams out = z;
  out.flat = apply_update(std::span<const double>(z.flat), agg);
  return out;
}

}  // namespace feddisc
