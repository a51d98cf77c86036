// Copyright 2026 The PARPO Toolkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace parpo {

// Population (divide-by-N) statistics. All callers in this toolkit use the
// population convention so single-element samples have zero spread.

inline double mean(std::span<const double> xs) {
  if (xs.empty()) {
    throw std::invalid_argument("mean of empty sample");
  }
  // Shifted by the first sample so a constant sample yields its value exactly.
  const double shift = xs.front();
  double sum = 0.0;
  for (double x : xs) sum += x - shift;
  return shift + sum / static_cast<double>(xs.size());
}

inline double population_variance(std::span<const double> xs) {
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size());
}

inline double population_std(std::span<const double> xs) {
  return std::sqrt(population_variance(xs));
}

/// Mean under normalized weights. Weights need not sum to one.
inline double weighted_mean(std::span<const double> xs,
                            std::span<const double> weights) {
  if (xs.empty() || xs.size() != weights.size()) {
    throw std::invalid_argument("weighted_mean: size mismatch or empty");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += weights[i] * xs[i];
    den += weights[i];
  }
  if (!(den > 0.0)) {
    throw std::invalid_argument("weighted_mean: weights sum to zero");
  }
  return num / den;
}

inline double weighted_std(std::span<const double> xs,
                           std::span<const double> weights) {
  const double m = weighted_mean(xs, weights);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += weights[i] * (xs[i] - m) * (xs[i] - m);
    den += weights[i];
  }
  return std::sqrt(num / den);
}

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace parpo
