#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fredholm {

// Precondition failures that callers are expected to branch on.  Plain
// std::invalid_argument / std::domain_error cover malformed inputs; the types
// below name conditions that are properties of the data, not of the call.

struct NotPositiveSemidefinite : std::runtime_error {
  explicit NotPositiveSemidefinite(const std::string& what)
      : std::runtime_error(what) {}
};

struct DegenerateModel : std::runtime_error {
  explicit DegenerateModel(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedModel : std::runtime_error {
  explicit UnsupportedModel(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateIntegrand : std::runtime_error {
  explicit DegenerateIntegrand(const std::string& what)
      : std::runtime_error(what) {}
};

struct UnsupportedOrder : std::runtime_error {
  explicit UnsupportedOrder(const std::string& what) : std::runtime_error(what) {}
};

struct GrowthConditionViolated : std::runtime_error {
  explicit GrowthConditionViolated(const std::string& what)
      : std::runtime_error(what) {}
};

struct DependentFunctionals : std::runtime_error {
  explicit DependentFunctionals(const std::string& what)
      : std::runtime_error(what) {}
};

struct InvalidBasis : std::runtime_error {
  explicit InvalidBasis(const std::string& what) : std::runtime_error(what) {}
};

// Summation order is part of the reproducibility contract for every Monte
// Carlo estimate in this library, so reductions go through this fixed-shape
// pairwise sum instead of an accumulation loop.
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) {
  return pairwise_sum(x.data(), x.size());
}

inline double factorial_as_double(unsigned n) {
  double f = 1.0;
  for (unsigned k = 2; k <= n; ++k) f *= k;
  return f;
}

inline double binomial_as_double(unsigned n, unsigned k) {
  if (k > n) return 0.0;
  if (k > n - k) k = n - k;
  double b = 1.0;
  for (unsigned j = 1; j <= k; ++j) b = b * double(n - k + j) / double(j);
  return b;
}

}  // namespace fredholm
