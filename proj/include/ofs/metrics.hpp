#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>

namespace ofs {

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

struct LossValue {
  double loss;
  double dloss_dlogit;
};

/// -[w * t * log(sigmoid(z)) + (1 - t) * log(1 - sigmoid(z))] with the positive term weighted by w.
inline LossValue weighted_sigmoid_ce(double logit, int target, double positive_weight) {
  if (target != 0 && target != 1) {
    throw std::invalid_argument("weighted_sigmoid_ce: target must be 0 or 1");
  }
  if (target == 1) {
    return {positive_weight * softplus(-logit), -positive_weight * sigmoid(-logit)};
  }
  return {softplus(logit), sigmoid(logit)};
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline double f1_score(const Confusion& c) {
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp + c.fn);
  return denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
}

/// Area under the ROC curve by exact pair counting; ties count one half.
/// Absent when only one class is present.
inline std::optional<double> two_afc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("two_afc: scores and labels differ in length");
  }
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

struct Metrics {
  double f1 = 0.0;
  std::optional<double> two_afc;
  double accuracy = 0.0;
};

/// Positive prediction iff score >= threshold.
inline Metrics score_metrics(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("score_metrics: scores and labels differ in length");
  }
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  Metrics m;
  m.f1 = f1_score(c);
  m.two_afc = two_afc(scores, labels);
  m.accuracy = scores.empty() ? 0.0
                              : static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
  return m;
}

}  // namespace ofs
