// Four clients minimizing a shared quadratic with one-bit majority votes.
// Prints the sup-norm distance to the optimum as training proceeds.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <span>
#include <vector>

#include "feddisc/federation.hpp"

namespace {

struct Quadratic {
  std::uint32_t id;
  std::vector<double> target;

  std::uint32_t zone_id() const { return id; }
  std::size_t sample_count() const { return 1; }
  std::vector<double> gradient(std::span<const double> z, std::uint64_t) const {
    std::vector<double> g(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) g[i] = 2.0 * (z[i] - target[i]);
    return g;
  }
  double loss(std::span<const double> z) const {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += (z[i] - target[i]) * (z[i] - target[i]);
    return s;
  }
};

}  // namespace

int main() {
  constexpr std::size_t dim = 16;
  feddisc::Engine eng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> optimum(dim);
  for (auto& v : optimum) v = u(eng);
  std::vector<Quadratic> clients;
  for (std::uint32_t k = 0; k < 4; ++k) clients.push_back({k, optimum});

  feddisc::FederationConfig cfg;
  cfg.clients = clients.size();
  cfg.eta.eta0 = 0.01;
  cfg.zero_mean_normalization = false;
  std::vector<double> z(dim, 0.0);
  for (std::uint32_t step = 0; step < 5; ++step) {
    cfg.rounds = 100;
    cfg.global_seed = step;
    z = feddisc::run_federation<Quadratic>(cfg, clients, z).final_params;
    double err = 0.0;
    for (std::size_t i = 0; i < dim; ++i) err = std::max(err, std::abs(z[i] - optimum[i]));
    std::printf("round %3u  |z - z*|_inf = %.4f\n", (step + 1) * 100, err);
  }
  return 0;
}
