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

// Central finite-difference check of hand-written gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace parpo::reward {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;  // index in for_each_tensor order
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double gradient_rel_error(double analytic, double numeric,
                                 double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares `analytic` (same layout as `params`) against central differences
/// of `loss(params)`. Every parameter entry is perturbed and restored in turn.
template <class Params, class LossFn>
GradCheckResult finite_difference_check(Params& params, LossFn&& loss,
                                        const Params& analytic, double h,
                                        double tol) {
  std::vector<std::pair<double*, std::size_t>> slots;
  std::vector<const double*> grads;
  params.for_each_tensor([&](auto& t) {
    slots.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  analytic.for_each_tensor([&](const auto& t) { grads.push_back(t.data()); });

  GradCheckResult result;
  for (std::size_t ti = 0; ti < slots.size(); ++ti) {
    auto [data, size] = slots[ti];
    for (std::size_t j = 0; j < size; ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double up = loss(params);
      data[j] = saved - h;
      const double down = loss(params);
      data[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = gradient_rel_error(grads[ti][j], numeric);
      ++result.entries_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = ti;
        result.worst_entry = j;
        result.worst_analytic = grads[ti][j];
        result.worst_numeric = numeric;
      }
    }
  }
  result.passed = result.max_rel_error <= tol;
  return result;
}

}  // namespace parpo::reward
