#pragma once

// Two-sided t-tests, Pearson correlation and Bonferroni correction, with the
// Student-t distribution computed from the regularized incomplete beta
// function.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clmr/error.hpp"

namespace clmr::stats {

/// Continued fraction for I_x(a, b), modified Lentz. Converges quickly for
/// x < (a + 1) / (a + b + 2).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw NumericError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw NumericError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for T ~ Student-t(df).
inline double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw NumericError("student t: df must be positive");
  if (std::isinf(t)) return 0.0;
  const double p = incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
  return std::clamp(p, 0.0, 1.0);
}

inline double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw NumericError("student t: df must be positive");
  if (t == 0.0) return 0.5;
  const double tail = 0.5 * student_t_two_sided(t, df);
  return t > 0.0 ? 1.0 - tail : tail;
}

struct TestResult {
  std::string test;
  double statistic = 0.0;  // t, or r for pearson
  double df = 0.0;
  double p_value = 1.0;
  bool two_sided = true;
  std::optional<double> corrected_p;
};

inline double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample variance with the n - 1 denominator.
inline double variance(std::span<const double> xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

/// Standard error of the mean.
inline double sem(std::span<const double> xs) {
  if (xs.size() < 2) throw NumericError("standard error needs at least two values");
  return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite df.
inline TestResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw NumericError("welch_t: each sample needs >= 2 values");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ra = variance(a) / na, rb = variance(b) / nb;
  if (ra == 0.0 && rb == 0.0) throw NumericError("degenerate samples");
  const double se = std::sqrt(ra + rb);
  const double t = (mean(a) - mean(b)) / se;
  const double df = (ra + rb) * (ra + rb) / (ra * ra / (na - 1.0) + rb * rb / (nb - 1.0));
  return {"welch", t, df, student_t_two_sided(t, df), true, std::nullopt};
}

inline TestResult one_sample_t(std::span<const double> xs, double mu0) {
  if (xs.size() < 2) throw NumericError("one_sample_t: sample needs >= 2 values");
  const double var = variance(xs);
  if (var == 0.0) throw NumericError("one_sample_t: zero variance");
  const double n = static_cast<double>(xs.size());
  const double t = (mean(xs) - mu0) / std::sqrt(var / n);
  const double df = n - 1.0;
  return {"onesample", t, df, student_t_two_sided(t, df), true, std::nullopt};
}

/// Sample correlation r with p from t = r sqrt((n-2)/(1-r^2)), df = n - 2.
inline TestResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw NumericError("pearson: length mismatch");
  if (xs.size() < 3) throw NumericError("pearson: need at least 3 pairs");
  const double mx = mean(xs), my = mean(ys);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: zero variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(xs.size()) - 2.0;
  double p = 0.0;
  if (std::fabs(r) < 1.0) {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    p = student_t_two_sided(t, df);
  }
  return {"pearson", r, df, p, true, std::nullopt};
}

inline double bonferroni(double p, std::size_t m) {
  if (m == 0) throw UsageError("bonferroni: comparison count must be >= 1");
  return std::min(1.0, p * static_cast<double>(m));
}

inline std::vector<double> bonferroni(const std::vector<double>& ps, std::size_t m) {
  std::vector<double> out;
  out.reserve(ps.size());
  for (double p : ps) out.push_back(bonferroni(p, m));
  return out;
}

}  // namespace clmr::stats
