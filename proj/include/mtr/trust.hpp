#pragma once

#include "mtr/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtr {

struct TrustParams {
  double beta = 0.01;     // EMA rate of tau; at most 0.05
  double lambda = 2.0;    // sharpness of the instability-to-target map
  double tau_min = 0.05;  // floor keeping the learner responsive
  double epsilon = 1e-12;
  double tau_initial = 1.0;
  // Calibration of s_ref: median of `calibration_samples` full-window S_t
  // values observed at steps >= calibration_start, unless
  // reference_instability > 0 fixes s_ref outright.
  std::int64_t calibration_start = 0;
  std::int64_t calibration_samples = 100;
  double reference_instability = 0.0;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 0.05)) {
      throw std::invalid_argument("trust beta " + std::to_string(beta) + " outside [0, 0.05]");
    }
    if (!(lambda > 0.0)) throw std::invalid_argument("trust lambda must be > 0");
    if (!(tau_min >= 0.0 && tau_min < 1.0)) throw std::invalid_argument("trust tau_min outside [0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("trust epsilon must be > 0");
    if (!(tau_initial >= tau_min && tau_initial <= 1.0)) {
      throw std::invalid_argument("trust tau_initial outside [tau_min, 1]");
    }
    if (calibration_start < 0) throw std::invalid_argument("trust calibration_start must be >= 0");
    if (calibration_samples < 10) throw std::invalid_argument("trust calibration_samples must be >= 10");
    if (!(reference_instability >= 0.0)) throw std::invalid_argument("trust reference_instability must be >= 0");
  }

  bool operator==(const TrustParams&) const = default;
};

struct TrustState {
  double tau = 1.0;
  double s_ref = 1.0;
  double beta = 0.01;
  double lambda = 2.0;
  double tau_min = 0.05;
  double epsilon = 1e-12;

  static TrustState from(const TrustParams& p, double s_ref) {
    return {p.tau_initial, s_ref, p.beta, p.lambda, p.tau_min, p.epsilon};
  }
};

// Median of clean-run S_t samples, floored at epsilon.
inline double calibrate_baseline(std::span<const double> samples, double epsilon = 1e-12) {
  if (samples.size() < 10) {
    throw std::invalid_argument("calibrate_baseline: need >= 10 samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> xs(samples.begin(), samples.end());
  for (double x : xs) {
    if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("calibrate_baseline: samples must be finite and >= 0");
  }
  const auto mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  double median = xs[mid];
  if (xs.size() % 2 == 0) {
    const double lower = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return std::max(median, epsilon);
}

// z = s_t / (s_ref + eps); target = exp(-lambda * max(0, z - 1));
// tau' = clip((1 - beta) tau + beta target, tau_min, 1). Absent s_t is a no-op.
inline TrustState update_trust(TrustState state, std::optional<double> s_t) {
  if (!s_t) return state;
  if (!(*s_t >= 0.0)) throw std::invalid_argument("update_trust: instability must be >= 0");
  const double z = *s_t / (state.s_ref + state.epsilon);
  const double target = std::exp(-state.lambda * std::max(0.0, z - 1.0));
  const double next = (1.0 - state.beta) * state.tau + state.beta * target;
  state.tau = std::clamp(next, state.tau_min, 1.0);
  return state;
}

inline double effective_gain(const TrustState& state, double base_rate) {
  if (!(base_rate > 0.0)) throw std::invalid_argument("effective_gain: base rate must be > 0");
  return state.tau * base_rate;
}

// Calibrates s_ref from the run's own early S_t values, then tracks tau.
class TrustEstimator {
 public:
  explicit TrustEstimator(const TrustParams& params) : params_(params) {
    params_.validate();
    state_ = TrustState::from(params_, params_.reference_instability > 0.0 ? params_.reference_instability : 1.0);
    calibrated_ = params_.reference_instability > 0.0;
  }

  // Feeds the full-window S_t available before the update at `step`.
  const TrustState& observe(std::int64_t step, std::optional<double> s_t) {
    if (!s_t) return state_;
    if (!calibrated_) {
      if (step >= params_.calibration_start) calibration_.push_back(*s_t);
      if (static_cast<std::int64_t>(calibration_.size()) >= params_.calibration_samples) {
        state_.s_ref = calibrate_baseline(calibration_, params_.epsilon);
        calibrated_ = true;
        calibration_.clear();
      }
      return state_;
    }
    state_ = update_trust(state_, s_t);
    return state_;
  }

  const TrustState& state() const { return state_; }
  double tau() const { return state_.tau; }
  bool calibrated() const { return calibrated_; }

 private:
  TrustParams params_;
  TrustState state_;
  bool calibrated_ = false;
  std::vector<double> calibration_;
};

}  // namespace mtr
