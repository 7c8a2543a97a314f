#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtr {

using Vector = Eigen::VectorXd;

enum class Phase { Clean, Corrupt, Recovery };

inline std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::Clean: return "Clean";
    case Phase::Corrupt: return "Corrupt";
    case Phase::Recovery: return "Recovery";
  }
  return "Clean";
}

inline Phase phase_from_string(std::string_view text) {
  if (text == "Clean") return Phase::Clean;
  if (text == "Corrupt") return Phase::Corrupt;
  if (text == "Recovery") return Phase::Recovery;
  throw std::invalid_argument("unknown phase label '" + std::string(text) + "'");
}

struct Segment {
  std::int64_t start = 0;
  std::int64_t length = 0;
  int rho = 0;
  Phase phase = Phase::Clean;

  bool operator==(const Segment&) const = default;
};

struct Regime {
  int rho = 0;
  Phase phase = Phase::Clean;

  bool operator==(const Regime&) const = default;
};

// Piecewise-constant map from step index to the latent reliability state.
// Segments tile [0, total_steps) and each lasts at least min_persistence steps.
class RegimeSchedule {
 public:
  RegimeSchedule() = default;

  explicit RegimeSchedule(std::vector<Segment> segments, std::int64_t min_persistence = 1)
      : segments_(std::move(segments)), min_persistence_(min_persistence) {
    if (segments_.empty()) throw std::invalid_argument("schedule needs at least one segment");
    if (min_persistence_ < 1) throw std::invalid_argument("min_persistence must be >= 1");
    std::int64_t expected_start = 0;
    for (const auto& seg : segments_) {
      if (seg.start != expected_start) {
        throw std::invalid_argument("schedule segments must be contiguous from step 0");
      }
      if (seg.length < min_persistence_) {
        throw std::invalid_argument("segment at step " + std::to_string(seg.start) + " has length " +
                                    std::to_string(seg.length) + " < min persistence " +
                                    std::to_string(min_persistence_));
      }
      if (seg.rho != 0 && seg.rho != 1) throw std::invalid_argument("rho must be 0 or 1");
      expected_start += seg.length;
    }
  }

  // Clean -> Corrupt -> Recovery.
  static RegimeSchedule staged(std::int64_t clean, std::int64_t corrupt, std::int64_t recovery,
                               std::int64_t min_persistence = 1) {
    return RegimeSchedule({{0, clean, 0, Phase::Clean},
                           {clean, corrupt, 1, Phase::Corrupt},
                           {clean + corrupt, recovery, 0, Phase::Recovery}},
                          min_persistence);
  }

  // Alternating rho = 0, 1, 0, ... segments, labelled Clean / Corrupt.
  static RegimeSchedule alternating(std::int64_t segment_length, std::int64_t count,
                                    std::int64_t min_persistence = 1) {
    if (count < 1) throw std::invalid_argument("alternating schedule needs count >= 1");
    std::vector<Segment> segs;
    for (std::int64_t i = 0; i < count; ++i) {
      const int rho = static_cast<int>(i % 2);
      segs.push_back({i * segment_length, segment_length, rho, rho ? Phase::Corrupt : Phase::Clean});
    }
    return RegimeSchedule(std::move(segs), min_persistence);
  }

  static RegimeSchedule constant(std::int64_t steps, int rho) {
    return RegimeSchedule({{0, steps, rho, rho ? Phase::Corrupt : Phase::Clean}}, 1);
  }

  const std::vector<Segment>& segments() const { return segments_; }
  std::int64_t min_persistence() const { return min_persistence_; }

  std::int64_t total_steps() const {
    return segments_.empty() ? 0 : segments_.back().start + segments_.back().length;
  }

  const Segment& segment_at(std::int64_t step) const {
    if (step < 0 || step >= total_steps()) {
      throw std::out_of_range("step " + std::to_string(step) + " outside schedule [0, " +
                              std::to_string(total_steps()) + ")");
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), step,
                               [](std::int64_t s, const Segment& seg) { return s < seg.start; });
    return *std::prev(it);
  }

  Regime phase_of(std::int64_t step) const {
    const auto& seg = segment_at(step);
    return {seg.rho, seg.phase};
  }

  // Steps elapsed since the start of the segment containing `step`.
  std::int64_t steps_into_segment(std::int64_t step) const { return step - segment_at(step).start; }

  bool operator==(const RegimeSchedule&) const = default;

 private:
  std::vector<Segment> segments_;
  std::int64_t min_persistence_ = 1;
};

inline Regime phase_of(std::int64_t step, const RegimeSchedule& schedule) {
  return schedule.phase_of(step);
}

// Sliding window over the most recent W learner steps.
class TrajectoryBuffer {
 public:
  struct Entry {
    double increment_sq = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    Vector increment;  // may be empty when directional features are not needed
  };

  explicit TrajectoryBuffer(std::size_t window = 1) : window_(window) {
    if (window_ < 1) throw std::invalid_argument("trajectory window must be >= 1");
  }

  void push(double increment_sq, double loss, double grad_norm, Vector increment = {}) {
    if (!(increment_sq >= 0.0)) {
      throw std::invalid_argument("squared increment must be >= 0, got " + std::to_string(increment_sq));
    }
    if (grad_norm < 0.0) throw std::invalid_argument("gradient norm must be >= 0");
    if (entries_.size() == window_) entries_.pop_front();
    entries_.push_back({increment_sq, loss, grad_norm, std::move(increment)});
  }

  std::size_t window() const { return window_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool full() const { return entries_.size() == window_; }
  const std::deque<Entry>& entries() const { return entries_; }

  std::vector<double> increments() const {
    std::vector<double> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.increment_sq);
    return out;
  }

  double mean_increment() const {
    if (entries_.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& e : entries_) sum += e.increment_sq;
    return sum / static_cast<double>(entries_.size());
  }

  void clear() { entries_.clear(); }

 private:
  std::size_t window_;
  std::deque<Entry> entries_;
};

inline TrajectoryBuffer& push_step(TrajectoryBuffer& buffer, double increment_sq, double loss,
                                   double grad_norm) {
  buffer.push(increment_sq, loss, grad_norm);
  return buffer;
}

struct RunRow {
  double theta_error = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> s_t;
  double tau = 1.0;
  int rho = 0;
  Phase phase = Phase::Clean;
  double return_or_reward = 0.0;
};

// Column-wise log of one learning run.
struct RunRecord {
  std::vector<double> theta_error;
  std::vector<double> loss;
  std::vector<double> grad_norm;
  std::vector<std::optional<double>> s_t;
  std::vector<double> tau;
  std::vector<int> rho;
  std::vector<Phase> phase;
  std::vector<double> return_or_reward;

  std::size_t size() const { return theta_error.size(); }
  bool empty() const { return theta_error.empty(); }

  void reserve(std::size_t n) {
    theta_error.reserve(n);
    loss.reserve(n);
    grad_norm.reserve(n);
    s_t.reserve(n);
    tau.reserve(n);
    rho.reserve(n);
    phase.reserve(n);
    return_or_reward.reserve(n);
  }

  void push_back(const RunRow& row) {
    theta_error.push_back(row.theta_error);
    loss.push_back(row.loss);
    grad_norm.push_back(row.grad_norm);
    s_t.push_back(row.s_t);
    tau.push_back(row.tau);
    rho.push_back(row.rho);
    phase.push_back(row.phase);
    return_or_reward.push_back(row.return_or_reward);
  }

  RunRow row(std::size_t i) const {
    return {theta_error.at(i), loss.at(i), grad_norm.at(i), s_t.at(i),
            tau.at(i),         rho.at(i),  phase.at(i),     return_or_reward.at(i)};
  }

  bool consistent() const {
    const auto n = theta_error.size();
    return loss.size() == n && grad_norm.size() == n && s_t.size() == n && tau.size() == n &&
           rho.size() == n && phase.size() == n && return_or_reward.size() == n;
  }

  bool operator==(const RunRecord&) const = default;
};

namespace detail {

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Linear-interpolated quantile (type 7).
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

}  // namespace detail

}  // namespace mtr
