#pragma once

// Synthetic grid-measurement data: natural rows from a Gaussian mixture,
// attack rows are natural rows with a random subset of features shifted by a
// multiple of sigma (random sign per feature).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "feddisc/bytes.hpp"
#include "feddisc/detector.hpp"
#include "feddisc/error.hpp"
#include "feddisc/nn.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

struct SyntheticSpec {
  std::size_t dim = 32;
  std::size_t components = 3;
  double mean_scale = 2.0;  ///< component means ~ N(0, mean_scale^2)
  double sigma = 1.0;
  double attack_fraction = 0.3;
  std::size_t shifted_dims = 10;
  double shift_sigmas = 4.0;
  double missing_rate = 0.0;  ///< CSV output only
};

struct SyntheticModel {
  SyntheticSpec spec;
  Rows means;

  static SyntheticModel make(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.dim == 0 || spec.components == 0) throw UsageError("synthetic: empty model");
    if (spec.shifted_dims > spec.dim) throw UsageError("synthetic: more shifted dims than features");
    if (!(spec.attack_fraction >= 0.0 && spec.attack_fraction <= 1.0))
      throw UsageError("synthetic: attack fraction must lie in [0,1]");
    SyntheticModel m{spec, {}};
    Engine eng(hash64({seed, 0x6d65616eULL}));
    std::normal_distribution<double> n01(0.0, spec.mean_scale);
    m.means.assign(spec.components, std::vector<double>(spec.dim));
    for (auto& mu : m.means)
      for (auto& v : mu) v = n01(eng);
    return m;
  }

  /// `n` rows; exactly round(n * attack_fraction) of them are attacks, in
  /// shuffled positions.
  std::vector<Sample> draw(std::size_t n, std::uint64_t seed, std::uint16_t source = 0) const {
    Engine eng(seed);
    std::normal_distribution<double> noise(0.0, spec.sigma);
    std::uniform_int_distribution<std::size_t> comp(0, spec.components - 1);
    std::bernoulli_distribution coin(0.5);
    const auto attacks = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.attack_fraction));
    std::vector<std::uint8_t> is_attack(n, 0);
    std::fill(is_attack.begin(), is_attack.begin() + static_cast<std::ptrdiff_t>(attacks), 1);
    std::shuffle(is_attack.begin(), is_attack.end(), eng);

    std::vector<std::size_t> dims(spec.dim);
    std::vector<Sample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = out[i];
      const auto& mu = means[comp(eng)];
      s.features.resize(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j) s.features[j] = mu[j] + noise(eng);
      s.source = source;
      if (is_attack[i]) {
        s.label = Label::Attack;
        std::iota(dims.begin(), dims.end(), std::size_t{0});
        // partial Fisher-Yates for the shifted subset
        for (std::size_t j = 0; j < spec.shifted_dims; ++j) {
          std::uniform_int_distribution<std::size_t> pick(j, spec.dim - 1);
          std::swap(dims[j], dims[pick(eng)]);
          s.features[dims[j]] += (coin(eng) ? 1.0 : -1.0) * spec.shift_sigmas * spec.sigma;
        }
      }
    }
    return out;
  }
};

/// CSV in the scenario-file schema: feature columns f0..f{d-1}, then `marker`
/// holding Natural or Attack. Missing cells are written as NaN.
inline std::string synthetic_csv(const SyntheticModel& model, std::size_t rows, std::uint64_t seed,
                                 std::uint16_t source = 0) {
  const auto samples = model.draw(rows, seed, source);
  Engine eng(hash64({seed, 0x6d697373ULL}));
  std::bernoulli_distribution miss(model.spec.missing_rate);
  std::ostringstream os;
  for (std::size_t j = 0; j < model.spec.dim; ++j) os << 'f' << j << ',';
  os << "marker\n";
  for (const auto& s : samples) {
    std::size_t missing_in_row = 0;
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      // keep at least one observed value per row
      if (model.spec.missing_rate > 0.0 && miss(eng) && missing_in_row + 1 < s.features.size()) {
        os << "NaN,";
        ++missing_in_row;
      } else {
        os << format_double(s.features[j]) << ',';
      }
    }
    os << (s.label == Label::Attack ? "Attack" : "Natural") << '\n';
  }
  return os.str();
}

/// Writes `files` scenario CSVs (scenario01.csv, ...) sharing one mixture.
inline std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir,
                                                                 std::size_t files, std::size_t rows,
                                                                 const SyntheticSpec& spec,
                                                                 std::uint64_t seed) {
  if (files == 0 || rows == 0) throw UsageError("synthetic corpus needs files and rows");
  std::filesystem::create_directories(dir);
  const auto model = SyntheticModel::make(spec, seed);
  std::vector<std::filesystem::path> out;
  for (std::size_t f = 0; f < files; ++f) {
    std::ostringstream name;
    name << "scenario" << (f + 1 < 10 ? "0" : "") << f + 1 << ".csv";
    out.push_back(dir / name.str());
    bytes::write_file_atomic(out.back(), synthetic_csv(model, rows, hash64({seed, f}),
                                                       static_cast<std::uint16_t>(f)));
  }
  return out;
}

}  // namespace feddisc
