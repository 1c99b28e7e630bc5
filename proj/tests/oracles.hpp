#pragma once
// Independent reference computations shared by the unit tests and the
// acceptance runner.
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Miss and false-alarm rates at threshold tau by direct counting (accept when score >= tau).
inline std::pair<double, double> rates(const ScoreSet& s, double tau) {
  double miss = 0, fa = 0, nt = 0, nn = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i]) {
      ++nt;
      miss += s.scores[i] < tau;
    } else {
      ++nn;
      fa += s.scores[i] >= tau;
    }
  }
  return {miss / nt, fa / nn};
}

/// -inf, every distinct score ascending, +inf.
inline std::vector<double> sweep_thresholds(const ScoreSet& s) {
  std::set<double> distinct(s.scores.begin(), s.scores.end());
  std::vector<double> t{-std::numeric_limits<double>::infinity()};
  t.insert(t.end(), distinct.begin(), distinct.end());
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

/// First sweep point with P_miss >= P_fa, linearly interpolated with the previous one.
inline double eer(const ScoreSet& s) {
  std::pair<double, double> prev{0.0, 1.0};
  for (double tau : sweep_thresholds(s)) {
    const auto cur = rates(s, tau);
    const double d = cur.first - cur.second;
    if (d >= 0.0) {
      if (d == 0.0) return cur.first;
      const double d_prev = prev.first - prev.second;
      const double a = -d_prev / (d - d_prev);
      return prev.first + a * (cur.first - prev.first);
    }
    prev = cur;
  }
  return 1.0;
}

inline double min_dcf(const ScoreSet& s, double p = 0.01, double cm = 1.0, double cf = 1.0) {
  double best = std::numeric_limits<double>::infinity();
  for (double tau : sweep_thresholds(s)) {
    const auto [pm, pf] = rates(s, tau);
    best = std::min(best, (cm * p * pm + cf * (1 - p) * pf) / std::min(cm * p, cf * (1 - p)));
  }
  return best;
}

inline double numeric_grad(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double orig = x;
  x = orig + h;
  const double up = f();
  x = orig - h;
  const double down = f();
  x = orig;
  return (up - down) / (2 * h);
}

inline std::vector<double> numeric_grads(const std::function<double()>& f, std::vector<double>& xs) {
  std::vector<double> out;
  for (double& x : xs) out.push_back(numeric_grad(f, x));
  return out;
}

/// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, 1e-12)
inline double tensor_rel_err(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(n[i])});
  }
  return diff / scale;
}

}  // namespace oracle
