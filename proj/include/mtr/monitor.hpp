#pragma once

#include "mtr/core.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtr {

// Ordered (name, value) pairs. The name set is fixed per feature family.
struct FeatureVector {
  std::vector<std::pair<std::string, double>> values;

  double at(const std::string& name) const {
    for (const auto& [key, value] : values) {
      if (key == name) return value;
    }
    throw std::out_of_range("no feature named '" + name + "'");
  }

  std::size_t size() const { return values.size(); }
};

// Mean squared parameter increment over whatever the buffer holds;
// absent (not zero) when nothing has been pushed yet.
inline std::optional<double> instability(const TrajectoryBuffer& buffer) {
  if (buffer.empty()) return std::nullopt;
  return buffer.mean_increment();
}

// S_t proper: only defined once the window is full.
inline std::optional<double> full_window_instability(const TrajectoryBuffer& buffer) {
  if (!buffer.full()) return std::nullopt;
  return buffer.mean_increment();
}

struct StepObservation {
  double loss = 0.0;
  double grad_norm = 0.0;
  double increment_sq = 0.0;
};

inline FeatureVector local_features(const StepObservation& step) {
  if (!std::isfinite(step.loss) || !std::isfinite(step.grad_norm) || !std::isfinite(step.increment_sq)) {
    throw std::invalid_argument("local_features: non-finite step record");
  }
  return {{{"loss", step.loss}, {"grad_norm", step.grad_norm}, {"one_step_increment", step.increment_sq}}};
}

namespace detail {

inline double cosine_or_zero(const Vector& a, const Vector& b) {
  if (a.size() == 0 || a.size() != b.size()) return 0.0;
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace detail

// Window-level descriptors: S_t, variance of the squared increments,
// mean cosine between consecutive increment vectors, and mean loss.
inline std::optional<FeatureVector> trajectory_features(const TrajectoryBuffer& buffer) {
  if (!buffer.full()) return std::nullopt;
  const auto& entries = buffer.entries();
  const double n = static_cast<double>(entries.size());
  const double s_t = buffer.mean_increment();
  double var = 0.0;
  double loss = 0.0;
  for (const auto& e : entries) {
    var += (e.increment_sq - s_t) * (e.increment_sq - s_t);
    loss += e.loss;
  }
  var /= n;
  loss /= n;
  double consistency = 0.0;
  if (entries.size() > 1) {
    for (std::size_t i = 1; i < entries.size(); ++i) {
      consistency += detail::cosine_or_zero(entries[i - 1].increment, entries[i].increment);
    }
    consistency /= static_cast<double>(entries.size() - 1);
  }
  return FeatureVector{{{"s_t", s_t},
                        {"increment_variance", var},
                        {"direction_consistency", consistency},
                        {"mean_loss", loss}}};
}

}  // namespace mtr
