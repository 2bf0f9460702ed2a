#pragma once

// Turning a trained autoencoder into an attack/disturbance discriminator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "feddisc/error.hpp"
#include "feddisc/nn.hpp"

namespace feddisc {

struct ErrorCurve {
  std::vector<double> sorted_errors;

  static ErrorCurve from(std::span<const double> errors) {
    ErrorCurve c{{errors.begin(), errors.end()}};
    for (double e : c.sorted_errors)
      if (!(e >= 0.0) || !std::isfinite(e)) throw DataError("error curve: errors must be finite and >= 0");
    std::sort(c.sorted_errors.begin(), c.sorted_errors.end());
    return c;
  }
};

struct ThresholdMethod {
  enum class Kind : std::uint8_t { Knee = 0, Percentile = 1 };
  Kind kind = Kind::Knee;
  double q = 95.0;  ///< percentile in [0, 100], Percentile only

  static ThresholdMethod knee() { return {}; }
  static ThresholdMethod percentile(double q) { return {Kind::Percentile, q}; }
};

struct Threshold {
  double tau = 0.0;
  ThresholdMethod method;
  std::size_t index = 0;    ///< knee position in the sorted curve
  bool degenerate = false;  ///< curve had a single distinct value
};

/// Knee: normalize (index, error) to the unit square and take the point
/// farthest below the chord joining the endpoints; first index wins ties.
/// Percentile: linear interpolation between closest ranks.
inline Threshold select_threshold(const ErrorCurve& curve, ThresholdMethod method = {}) {
  const auto& e = curve.sorted_errors;
  Threshold th;
  th.method = method;
  if (method.kind == ThresholdMethod::Kind::Percentile) {
    if (e.empty()) throw DataError("select_threshold: empty curve");
    if (!(method.q >= 0.0 && method.q <= 100.0)) throw UsageError("percentile must lie in [0,100]");
    const double pos = method.q / 100.0 * static_cast<double>(e.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, e.size() - 1);
    th.index = lo;
    th.tau = e[lo] + (pos - static_cast<double>(lo)) * (e[hi] - e[lo]);
    th.degenerate = e.front() == e.back();
    return th;
  }
  if (e.size() < 3) throw DataError("select_threshold: knee needs at least 3 points");
  const double lo = e.front(), hi = e.back();
  if (lo == hi) {
    th.tau = lo;
    th.index = e.size() - 1;
    th.degenerate = true;
    return th;
  }
  const double nx = static_cast<double>(e.size() - 1);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < e.size(); ++i) {
    // Distance to the y = x chord is (x - y) / sqrt(2); the constant is dropped.
    const double dist = static_cast<double>(i) / nx - (e[i] - lo) / (hi - lo);
    if (dist > best) {
      best = dist;
      th.index = i;
    }
  }
  th.tau = e[th.index];
  return th;
}

inline double reconstruction_error(const ModelParams& params, std::span<const double> x) {
  const double r = mse(x, forward(params, x).output());
  if (!std::isfinite(r)) throw NumericError("reconstruction error overflowed");
  return r;
}

/// Attack iff the reconstruction error strictly exceeds tau.
inline Label classify(const ModelParams& params, std::span<const double> x, double tau) {
  return reconstruction_error(params, x) > tau ? Label::Attack : Label::Natural;
}

struct SampleOutcome {
  double score = 0.0;  ///< reconstruction error, or P(Attack) on the softmax path
  Label predicted = Label::Natural;
  Label truth = Label::Natural;
};

struct DetectionReport {
  double tau = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f_score = 0.0;
  bool precision_undefined = false, recall_undefined = false, f_score_undefined = false;
  std::vector<SampleOutcome> per_sample;

  std::size_t count() const { return tp + fp + tn + fn; }
};

/// Attack is the positive class. Zero denominators give 0 and set the flag.
inline DetectionReport summarize(std::vector<SampleOutcome> outcomes, double tau) {
  if (outcomes.empty()) throw DataError("evaluate: empty test set");
  DetectionReport r;
  r.tau = tau;
  for (const auto& o : outcomes) {
    const bool pred = o.predicted == Label::Attack, truth = o.truth == Label::Attack;
    if (pred && truth) ++r.tp;
    else if (pred) ++r.fp;
    else if (truth) ++r.fn;
    else ++r.tn;
  }
  const auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(outcomes.size());
  r.precision = ratio(r.tp, r.tp + r.fp, r.precision_undefined);
  r.recall = ratio(r.tp, r.tp + r.fn, r.recall_undefined);
  r.f_score_undefined = r.precision + r.recall == 0.0;
  r.f_score = r.f_score_undefined ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.per_sample = std::move(outcomes);
  return r;
}

inline DetectionReport evaluate(const ModelParams& params, std::span<const Sample> test, double tau) {
  std::vector<SampleOutcome> out;
  out.reserve(test.size());
  for (const auto& s : test) {
    const double r = reconstruction_error(params, s.features);
    out.push_back({r, r > tau ? Label::Attack : Label::Natural, s.label});
  }
  return summarize(std::move(out), tau);
}

// --- Softmax head -----------------------------------------------------------

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) sum += (v = std::exp(v - mx));
  for (double& v : p) v /= sum;
  return p;
}

struct SoftmaxPrediction {
  Label label = Label::Natural;
  std::vector<double> probabilities;
};

/// Argmax of the head's class probabilities; ties go to Natural (index 0).
inline SoftmaxPrediction predict_from_logits(std::span<const double> logits) {
  SoftmaxPrediction p;
  p.probabilities = softmax(logits);
  p.label = p.probabilities.size() > 1 && p.probabilities[1] > p.probabilities[0] ? Label::Attack
                                                                                    : Label::Natural;
  return p;
}

/// Runs the autoencoder's encoder to the latent code and classifies it with
/// `head`, a network whose final layer is a 2-way softmax.
inline SoftmaxPrediction softmax_classify(const ModelParams& autoencoder, const ModelParams& head,
                                          std::span<const double> x) {
  if (head.spec.empty() || !head.has_softmax_head() || head.output_dim() != 2)
    throw DataError("softmax_classify: model has no 2-class softmax head");
  const auto trace = forward(autoencoder, x);
  const auto head_trace = forward(head, trace.latent());
  return predict_from_logits(head_trace.pre.back());
}

inline DetectionReport evaluate_head(const ModelParams& autoencoder, const ModelParams& head,
                                     std::span<const Sample> test) {
  std::vector<SampleOutcome> out;
  out.reserve(test.size());
  for (const auto& s : test) {
    const auto p = softmax_classify(autoencoder, head, s.features);
    out.push_back({p.probabilities[1], p.label, s.label});
  }
  return summarize(std::move(out), 0.5);
}

// --- Serialization ----------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// key=value record; field names are stable.
inline std::string to_text(const DetectionReport& r) {
  std::ostringstream os;
  os << "tau=" << format_double(r.tau) << '\n'
     << "samples=" << r.count() << '\n'
     << "tp=" << r.tp << '\n'
     << "fp=" << r.fp << '\n'
     << "tn=" << r.tn << '\n'
     << "fn=" << r.fn << '\n'
     << "accuracy=" << format_double(r.accuracy) << '\n'
     << "precision=" << format_double(r.precision) << '\n'
     << "recall=" << format_double(r.recall) << '\n'
     << "f_score=" << format_double(r.f_score) << '\n'
     << "precision_undefined=" << r.precision_undefined << '\n'
     << "recall_undefined=" << r.recall_undefined << '\n'
     << "f_score_undefined=" << r.f_score_undefined << '\n';
  return os.str();
}

inline std::string to_csv(const DetectionReport& r) {
  std::ostringstream os;
  os << "index,score,predicted,truth\n";
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    const auto& s = r.per_sample[i];
    os << i << ',' << format_double(s.score) << ',' << static_cast<int>(s.predicted) << ','
       << static_cast<int>(s.truth) << '\n';
  }
  return os.str();
}

}  // namespace feddisc
