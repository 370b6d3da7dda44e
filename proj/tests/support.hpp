#pragma once

// Reference implementations used by the unit and acceptance tests. Nothing
// here calls into the simulator's event machinery.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "vbsim/config.hpp"
#include "vbsim/particle.hpp"

namespace vbsim::oracle {

/// Config with one plant at the centre of the unit square and no vectors.
inline nlohmann::json base_config() {
  return {
      {"schema_version", 1},
      {"domain", {{"plants", {{{"x", 0.5}, {"y", 0.5}}}}}},
      {"rates",
       {{"birth", 1.0},
        {"natural_death", 1.0},
        {"competition", 0.0},
        {"load", {{"amplitude", 0.0}, {"radius", 0.1}}},
        {"unload", {{"amplitude", 0.0}, {"radius", 0.1}}}}},
      {"initial", {{"mode", "counts"}, {"viruses", {10}}}},
  };
}

/// Direct Gillespie for a single-plant, single-type logistic birth-death
/// chain: birth b n, death (d + c n) n.
inline std::int64_t gillespie_birth_death(std::int64_t n0, double b, double d, double c,
                                          double T, std::mt19937_64& eng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::int64_t n = n0;
  double t = 0.0;
  while (n > 0) {
    const double nb = b * static_cast<double>(n);
    const double nd = (d + c * static_cast<double>(n)) * static_cast<double>(n);
    const double total = nb + nd;
    t += -std::log(1.0 - U(eng)) / total;
    if (t > T) break;
    if (U(eng) * total < nb) {
      ++n;
    } else {
      --n;
    }
  }
  return n;
}

/// Two-sample chi-squared homogeneity test on integer samples. Categories
/// are merged from the tails until every expected count is >= 5. Returns
/// the p-value.
inline double chi2_two_sample(const std::vector<std::int64_t>& a,
                              const std::vector<std::int64_t>& b) {
  std::map<std::int64_t, std::pair<double, double>> counts;
  for (auto v : a) counts[v].first += 1.0;
  for (auto v : b) counts[v].second += 1.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double n = na + nb;
  // Pool adjacent values until both expected counts reach 5.
  std::vector<std::pair<double, double>> bins;
  std::pair<double, double> acc{0.0, 0.0};
  for (const auto& [v, c] : counts) {
    acc.first += c.first;
    acc.second += c.second;
    const double tot = acc.first + acc.second;
    if (tot * na / n >= 5.0 && tot * nb / n >= 5.0) {
      bins.push_back(acc);
      acc = {0.0, 0.0};
    }
  }
  if (acc.first + acc.second > 0.0) {
    if (bins.empty()) return 1.0;
    bins.back().first += acc.first;
    bins.back().second += acc.second;
  }
  if (bins.size() < 2) return 1.0;
  double stat = 0.0;
  for (const auto& [oa, ob] : bins) {
    const double tot = oa + ob;
    const double ea = tot * na / n, eb = tot * nb / n;
    stat += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
  }
  boost::math::chi_squared dist(static_cast<double>(bins.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

/// Closed-form logistic m' = r m - c m^2.
inline double logistic(double t, double m0, double r, double c) {
  const double e = std::exp(r * t);
  return r * m0 * e / (r + c * m0 * (e - 1.0));
}

/// Drift of the plant-virus count, read off the exact rate table: births
/// minus deaths minus loads plus unloads.
inline double virus_count_drift(const RateTable& t) {
  return t.totals[0] + t.totals[1] - t.totals[2] - t.totals[3] + t.totals[4];
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double s = 0.0, s2 = 0.0;
  for (double x : xs) s += x;
  const double m = s / n;
  for (double x : xs) s2 += (x - m) * (x - m);
  return {m, std::sqrt(s2 / (n - 1.0) / n)};
}

}  // namespace vbsim::oracle
