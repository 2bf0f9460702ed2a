#pragma once

// Round loop between a control centre and K simulated SCADA sub-system
// clients. Every round: broadcast Z^t (full precision), each client computes
// its local gradient on freshly drawn mini-batches, centres and sign-quantizes
// it, the control centre decodes the uplink messages, takes the majority vote
// and steps Z^{t+1} = Z^t - eta^t * vote.
//
// Client randomness is derived from hash64(global_seed, zone_id, t), so the
// result does not depend on how clients are scheduled across threads.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "feddisc/error.hpp"
#include "feddisc/nn.hpp"
#include "feddisc/quantizer.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

struct EtaSchedule {
  enum class Kind : std::uint8_t { Constant = 0, InverseSqrt = 1 };
  Kind kind = Kind::Constant;
  double eta0 = 1e-3;

  /// Step size for zero-based round t; InverseSqrt gives eta0 / sqrt(t + 1).
  double at(std::uint32_t t) const {
    if (kind == Kind::Constant) return eta0;
    return eta0 / std::sqrt(static_cast<double>(t) + 1.0);
  }
};

struct FederationConfig {
  std::size_t clients = 4;
  std::uint32_t rounds = 300;
  std::size_t local_batches_per_round = 1;
  std::size_t batch_size = 100;
  EtaSchedule eta;
  DpConfig dp;
  bool quantization_enabled = true;
  /// Subtract the scalar gradient mean before quantizing.
  bool zero_mean_normalization = true;
  std::uint64_t global_seed = 1;
  Loss loss = Loss::Reconstruction;
  /// Worker threads for the client phase; 0 picks the hardware count.
  /// FEDDISC_THREADS caps either choice.
  unsigned threads = 0;

  void validate() const {
    if (clients == 0) throw UsageError("federation needs at least one client");
    if (local_batches_per_round == 0) throw UsageError("local_batches_per_round must be >= 1");
    if (batch_size == 0) throw UsageError("batch_size must be >= 1");
    if (!(eta.eta0 > 0.0 && eta.eta0 < 1.0)) throw UsageError("learning rate must lie in (0,1)");
    if (dp.enabled) dp.validate();
  }
};

struct ZoneDataset {
  std::uint32_t zone_id = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// Batches are drawn with replacement when the zone is smaller than a batch.
  bool samples_with_replacement(std::size_t batch_size) const { return samples.size() < batch_size; }
};

struct RoundRecord {
  std::uint32_t t = 0;
  double global_loss = 0.0;  ///< F(Z^t) = sum_k (N_k / N) f_k(Z^t)
  std::vector<double> local_loss;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double eta = 0.0;

  bool operator==(const RoundRecord&) const = default;
};

using ClientUpdate = std::variant<SignGradient, DenseVector>;

inline std::vector<std::uint8_t> encode(const ClientUpdate& u) {
  return std::visit([](const auto& m) { return encode(m); }, u);
}

inline std::uint64_t client_round_seed(std::uint64_t global_seed, std::uint32_t zone_id,
                                       std::uint32_t t) {
  return hash64({global_seed, zone_id, t});
}

/// Seed for the dpsign noise stream, kept separate from batch sampling.
inline std::uint64_t noise_seed(std::uint64_t client_seed) { return hash64({client_seed, 0x6470ULL}); }

/// Uplink bytes per round in closed form.
inline std::uint64_t expected_uplink_bytes(std::size_t clients, std::size_t dim, bool quantized) {
  return clients * (kWireHeaderBytes + (quantized ? packed_bytes(dim) : 8 * dim));
}

inline std::uint64_t expected_downlink_bytes(std::size_t clients, std::size_t dim) {
  return clients * (kWireHeaderBytes + 8 * dim);
}

/// Something a client can optimize: its local objective f_k and gradient.
template <class T>
concept LocalObjective = requires(const T& o, std::span<const double> z, std::uint64_t seed) {
  { o.zone_id() } -> std::convertible_to<std::uint32_t>;
  { o.sample_count() } -> std::convertible_to<std::size_t>;
  { o.gradient(z, seed) } -> std::same_as<std::vector<double>>;
  { o.loss(z) } -> std::convertible_to<double>;
};

/// Mini-batch index sets for one client round.
inline std::vector<std::vector<std::size_t>> draw_batches(std::size_t n, std::size_t batch_size,
                                                          std::size_t batches, std::uint64_t seed) {
  if (n == 0) throw DataError("cannot draw batches from an empty zone");
  Engine eng(seed);
  std::vector<std::vector<std::size_t>> out(batches);
  std::vector<std::size_t> perm(n);
  for (auto& b : out) {
    if (n >= batch_size) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < batch_size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(perm[i], perm[pick(eng)]);
      }
      b.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(batch_size));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      b.resize(batch_size);
      for (auto& i : b) i = pick(eng);
    }
  }
  return out;
}

/// Autoencoder (or softmax head) client over one zone's samples.
class NetworkClient {
 public:
  NetworkClient(const ZoneDataset& zone, std::vector<LayerSpec> spec, std::size_t batch_size,
                std::size_t batches, Loss loss)
      : zone_(&zone), spec_(std::move(spec)), batch_size_(batch_size), batches_(batches), loss_(loss) {}

  std::uint32_t zone_id() const { return zone_->zone_id; }
  std::size_t sample_count() const { return zone_->size(); }
  const ZoneDataset& zone() const { return *zone_; }

  std::vector<double> gradient(std::span<const double> z, std::uint64_t seed) const {
    if (zone_->samples.empty())
      throw DataError("zone " + std::to_string(zone_->zone_id) + " has no samples");
    const ModelParams params(spec_, {z.begin(), z.end()});
    const auto batches = draw_batches(zone_->size(), batch_size_, batches_, seed);
    std::vector<double> acc(z.size(), 0.0);
    std::vector<Sample> batch;
    for (const auto& idx : batches) {
      batch.clear();
      for (auto i : idx) batch.push_back(zone_->samples[i]);
      const auto g = backward(params, batch, loss_);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    for (double& v : acc) v *= inv;
    return acc;
  }

  double loss(std::span<const double> z) const {
    return mean_loss(ModelParams(spec_, {z.begin(), z.end()}), zone_->samples, loss_);
  }

 private:
  const ZoneDataset* zone_;
  std::vector<LayerSpec> spec_;
  std::size_t batch_size_;
  std::size_t batches_;
  Loss loss_;
};

static_assert(LocalObjective<NetworkClient>);

/// Client block of one round: local gradient, centring, quantization. With
/// quantization disabled the raw gradient goes out unchanged.
template <LocalObjective Client>
ClientUpdate local_round(const Client& client, std::span<const double> z,
                         const FederationConfig& cfg, std::uint32_t t) {
  const auto seed = client_round_seed(cfg.global_seed, client.zone_id(), t);
  auto g = client.gradient(z, seed);
  if (!cfg.quantization_enabled) return DenseVector{std::move(g), client.zone_id(), t};
  if (cfg.zero_mean_normalization) g = normalize(g).centered;
  return dpsign(g, cfg.dp, noise_seed(seed), client.zone_id(), t);
}

inline unsigned resolve_threads(unsigned requested) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FEDDISC_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, n);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Rethrows the
/// exception of the lowest failing index.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct FederationResult {
  std::vector<double> final_params;
  std::vector<RoundRecord> log;
};

/// F(Z) over all clients, weighted by sample count.
template <LocalObjective Client>
double global_loss(std::span<const Client> clients, std::span<const double> z) {
  std::size_t total = 0;
  for (const auto& c : clients) total += c.sample_count();
  if (total == 0) return 0.0;
  double f = 0.0;
  for (const auto& c : clients)
    f += static_cast<double>(c.sample_count()) / static_cast<double>(total) * c.loss(z);
  return f;
}

template <LocalObjective Client>
FederationResult run_federation(const FederationConfig& cfg, std::span<const Client> clients,
                                std::vector<double> z) {
  cfg.validate();
  if (clients.size() != cfg.clients)
    throw DataError("federation configured for " + std::to_string(cfg.clients) + " clients, got " +
                    std::to_string(clients.size()));
  const std::size_t k = clients.size();
  std::size_t total = 0;
  for (const auto& c : clients) total += c.sample_count();
  const unsigned threads = resolve_threads(cfg.threads);

  FederationResult out;
  out.log.reserve(cfg.rounds);
  std::vector<std::vector<std::uint8_t>> uplink(k);
  std::vector<double> local_loss(k);
  for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
    // Downlink: every client receives the same full-precision image of Z^t.
    const auto broadcast = encode(DenseVector{z, kBroadcastClient, t});
    const auto received = decode_dense(broadcast).values;

    parallel_for(k, threads, [&](std::size_t i) {
      local_loss[i] = clients[i].loss(received);
      uplink[i] = encode(local_round(clients[i], received, cfg, t));
    });

    RoundRecord rec;
    rec.t = t;
    rec.eta = cfg.eta.at(t);
    rec.local_loss = local_loss;
    rec.downlink_bytes = k * broadcast.size();
    for (std::size_t i = 0; i < k; ++i) {
      rec.uplink_bytes += uplink[i].size();
      if (total > 0)
        rec.global_loss +=
            static_cast<double>(clients[i].sample_count()) / static_cast<double>(total) * local_loss[i];
    }

    AggregateUpdate agg;
    if (cfg.quantization_enabled) {
      std::vector<SignGradient> msgs;
      msgs.reserve(k);
      for (const auto& w : uplink) msgs.push_back(decode_sign_gradient(w));
      agg = majority_vote(msgs, rec.eta);
    } else {
      std::vector<DenseVector> msgs;
      msgs.reserve(k);
      for (const auto& w : uplink) msgs.push_back(decode_dense(w));
      agg = sign_of_sum(msgs, rec.eta);
    }
    z = apply_update(std::span<const double>(z), agg);
    for (double v : z)
      if (!std::isfinite(v)) throw NumericError("non-finite global parameters after round " + std::to_string(t));
    out.log.push_back(std::move(rec));
  }
  out.final_params = std::move(z);
  return out;
}

struct ModelFederationResult {
  ModelParams final_model;
  std::vector<RoundRecord> log;
};

inline std::vector<NetworkClient> make_clients(std::span<const ZoneDataset> zones,
                                               const std::vector<LayerSpec>& spec,
                                               const FederationConfig& cfg) {
  std::vector<NetworkClient> clients;
  clients.reserve(zones.size());
  for (const auto& zd : zones) {
    for (const auto& s : zd.samples)
      if (s.features.size() != spec.front().in_dim)
        throw DataError("zone " + std::to_string(zd.zone_id) + " holds samples of width " +
                        std::to_string(s.features.size()) + ", model expects " +
                        std::to_string(spec.front().in_dim));
    clients.emplace_back(zd, spec, cfg.batch_size, cfg.local_batches_per_round, cfg.loss);
  }
  return clients;
}

inline ModelFederationResult run_federation(const FederationConfig& cfg,
                                            std::span<const ZoneDataset> zones,
                                            const ModelParams& initial) {
  const auto clients = make_clients(zones, initial.spec, cfg);
  auto r = run_federation<NetworkClient>(cfg, clients, initial.flat);
  return {ModelParams(initial.spec, std::move(r.final_params)), std::move(r.log)};
}

// --- Zone partitioning -----------------------------------------------------

struct PartitionScheme {
  enum class Kind : std::uint8_t { Iid = 0, Dirichlet = 1, ByScenarioFile = 2 };
  Kind kind = Kind::Iid;
  double alpha = 0.5;  ///< Dirichlet concentration
};

/// Splits `dataset` into K disjoint zones whose union is the input.
///
/// Iid deals a seeded shuffle into K near-equal chunks. Dirichlet draws, for
/// each class, zone proportions from Dirichlet(alpha) and hands out that
/// class's shuffled rows accordingly; draws that would leave a zone empty are
/// rejected and redrawn. ByScenarioFile assigns whole source files to zones
/// round-robin in ascending source order.
inline std::vector<ZoneDataset> partition_zones(std::span<const Sample> dataset, std::size_t k,
                                                PartitionScheme scheme, std::uint64_t seed) {
  if (k == 0) throw UsageError("partition_zones: K must be >= 1");
  if (k > dataset.size())
    throw DataError("partition_zones: " + std::to_string(k) + " zones for " +
                    std::to_string(dataset.size()) + " samples");
  std::vector<std::vector<std::size_t>> assign(k);
  Engine eng(seed);

  switch (scheme.kind) {
    case PartitionScheme::Kind::Iid: {
      std::vector<std::size_t> idx(dataset.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), eng);
      const std::size_t base = idx.size() / k, extra = idx.size() % k;
      std::size_t pos = 0;
      for (std::size_t z = 0; z < k; ++z) {
        const std::size_t take = base + (z < extra ? 1 : 0);
        assign[z].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                         idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
      }
      break;
    }
    case PartitionScheme::Kind::Dirichlet: {
      if (!(scheme.alpha > 0.0)) throw UsageError("Dirichlet alpha must be > 0");
      std::array<std::vector<std::size_t>, 2> by_class;
      for (std::size_t i = 0; i < dataset.size(); ++i)
        by_class[static_cast<std::size_t>(dataset[i].label)].push_back(i);
      std::gamma_distribution<double> gamma(scheme.alpha, 1.0);
      constexpr int kMaxAttempts = 1000;
      for (int attempt = 0;; ++attempt) {
        for (auto& a : assign) a.clear();
        for (auto& members : by_class) {
          if (members.empty()) continue;
          std::vector<std::size_t> idx = members;
          std::shuffle(idx.begin(), idx.end(), eng);
          std::vector<double> p(k);
          double sum = 0.0;
          for (auto& v : p) sum += (v = gamma(eng));
          double cum = 0.0;
          std::size_t start = 0;
          for (std::size_t z = 0; z < k; ++z) {
            cum += p[z] / sum;
            const std::size_t end =
                z + 1 == k ? idx.size()
                           : std::min(idx.size(), static_cast<std::size_t>(std::llround(cum * idx.size())));
            for (std::size_t i = start; i < end; ++i) assign[z].push_back(idx[i]);
            start = std::max(start, end);
          }
        }
        const bool all_filled =
            std::all_of(assign.begin(), assign.end(), [](const auto& a) { return !a.empty(); });
        if (all_filled) break;
        if (attempt + 1 >= kMaxAttempts)
          throw DataError("Dirichlet partition left a zone empty after " +
                          std::to_string(kMaxAttempts) + " draws");
      }
      for (auto& a : assign) std::sort(a.begin(), a.end());
      break;
    }
    case PartitionScheme::Kind::ByScenarioFile: {
      std::map<std::uint16_t, std::size_t> zone_of;
      for (const auto& s : dataset) zone_of.emplace(s.source, 0);
      std::size_t next = 0;
      for (auto& [src, z] : zone_of) z = next++ % k;
      for (std::size_t i = 0; i < dataset.size(); ++i) assign[zone_of[dataset[i].source]].push_back(i);
      break;
    }
  }

  std::vector<ZoneDataset> zones(k);
  for (std::size_t z = 0; z < k; ++z) {
    zones[z].zone_id = static_cast<std::uint32_t>(z);
    zones[z].samples.reserve(assign[z].size());
    for (auto i : assign[z]) zones[z].samples.push_back(dataset[i]);
  }
  return zones;
}

}  // namespace feddisc
