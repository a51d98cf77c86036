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

#include "parpo/advantage_engine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "parpo/common/stats.hpp"
#include "parpo/common/text_format.hpp"

namespace parpo::advantage {

namespace {

void require_group(std::span<const TrajectoryRecord> group) {
  if (group.empty()) {
    throw std::invalid_argument("empty group");
  }
  for (const auto& r : group) {
    if (r.group_id != group.front().group_id) {
      throw std::invalid_argument("records span more than one group: '" +
                                  group.front().group_id + "' and '" +
                                  r.group_id + "'");
    }
    if (!std::isfinite(r.reward_base) || !std::isfinite(r.reward_pers)) {
      throw std::invalid_argument("non-finite reward in trajectory '" +
                                  r.trajectory_id + "'");
    }
  }
}

std::vector<double> standardize(std::span<const double> xs, double epsilon) {
  const double m = mean(xs);
  const double s = population_std(xs);
  std::vector<double> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back((x - m) / (s + epsilon));
  return out;
}

std::vector<double> pers_rewards(std::span<const TrajectoryRecord> group) {
  std::vector<double> out;
  out.reserve(group.size());
  for (const auto& r : group) out.push_back(r.reward_pers);
  return out;
}

void check_ratios(std::span<const TrajectoryRecord> records,
                  std::span<const double> advantages) {
  if (records.size() != advantages.size()) {
    throw std::invalid_argument("records/advantages length mismatch");
  }
  if (records.empty()) {
    throw std::invalid_argument("empty batch");
  }
  for (const auto& r : records) {
    if (!r.ratio.has_value()) {
      throw std::invalid_argument("missing ratio for trajectory '" +
                                  r.trajectory_id + "'");
    }
    if (!(*r.ratio > 0.0) || !std::isfinite(*r.ratio)) {
      throw std::invalid_argument("ratio must be finite and positive");
    }
  }
}

}  // namespace

AnchorStore::AnchorStore(double decay, double margin_coeff)
    : decay_(decay), margin_coeff_(margin_coeff) {
  if (!(decay > 0.0 && decay < 1.0)) {
    throw std::invalid_argument("anchor decay must lie strictly in (0,1)");
  }
  if (!(margin_coeff >= 0.0)) {
    throw std::invalid_argument("anchor margin coefficient must be >= 0");
  }
}

std::optional<UserAnchor> AnchorStore::find(const std::string& user_id) const {
  auto it = anchors_.find(user_id);
  if (it == anchors_.end()) return std::nullopt;
  return it->second;
}

void AnchorStore::set(const std::string& user_id, const UserAnchor& anchor) {
  if (!(anchor.variance >= 0.0)) {
    throw std::invalid_argument("anchor variance must be >= 0");
  }
  anchors_[user_id] = anchor;
}

void AnchorStore::save(std::ostream& out) const {
  for (const auto& [user, a] : anchors_) {
    if (user.empty() || user.find_first_of("\t\n\r") != std::string::npos) {
      throw std::invalid_argument("user id not representable in record file");
    }
    out << user << '\t' << format_double(a.mean) << '\t'
        << format_double(a.variance) << '\t' << a.count << '\n';
  }
}

AnchorStore AnchorStore::load(std::istream& in, double decay,
                              double margin_coeff) {
  AnchorStore store(decay, margin_coeff);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4) {
      throw FormatError("anchor record line " + std::to_string(lineno) +
                        ": expected 4 tab-separated fields");
    }
    UserAnchor a;
    try {
      a.mean = parse_double(fields[1]);
      a.variance = parse_double(fields[2]);
      a.count = parse_uint(fields[3]);
    } catch (const FormatError& e) {
      throw FormatError("anchor record line " + std::to_string(lineno) +
                        ": " + e.what());
    }
    const std::string user(fields[0]);
    if (store.anchors_.count(user) != 0) {
      throw FormatError("anchor record line " + std::to_string(lineno) +
                        ": duplicate user '" + user + "'");
    }
    if (!(a.variance >= 0.0)) {
      throw FormatError("anchor record line " + std::to_string(lineno) +
                        ": negative variance");
    }
    store.anchors_.emplace(user, a);
  }
  return store;
}

void AdvantageConfig::validate() const {
  if (!(w_base >= 0.0) || !(w_pers >= 0.0) || !(w_base + w_pers > 0.0)) {
    throw std::invalid_argument(
        "advantage weights must be >= 0 with a positive sum");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("epsilon must be > 0");
  }
  if (!(clip > 0.0 && clip < 1.0)) {
    throw std::invalid_argument("clip must lie in (0,1)");
  }
}

std::vector<double> compute_base_advantages(
    std::span<const TrajectoryRecord> group, const AdvantageConfig& cfg) {
  require_group(group);
  std::vector<double> base;
  base.reserve(group.size());
  for (const auto& r : group) base.push_back(r.reward_base);
  return standardize(base, cfg.epsilon);
}

UserAnchor update_anchor(AnchorStore& store, const std::string& user_id,
                         std::span<const double> batch_pers_rewards) {
  if (batch_pers_rewards.empty()) {
    throw std::invalid_argument("empty anchor batch");
  }
  const double batch_mean = mean(batch_pers_rewards);
  const double batch_var = population_variance(batch_pers_rewards);
  UserAnchor& a = store.anchors_[user_id];
  if (a.count == 0) {
    a.mean = batch_mean;
    a.variance = std::max(batch_var, kAnchorVarianceFloor);
  } else {
    const double rho = store.decay_;
    a.mean = rho * a.mean + (1.0 - rho) * batch_mean;
    a.variance = rho * a.variance + (1.0 - rho) * batch_var;
  }
  ++a.count;
  return a;
}

double compute_user_baseline(double group_pers_mean, const UserAnchor& anchor,
                             double margin_coeff) {
  if (anchor.count == 0) {
    throw std::invalid_argument("uninitialized anchor");
  }
  return std::max(group_pers_mean,
                  anchor.mean - margin_coeff * std::sqrt(anchor.variance));
}

std::vector<double> compute_pers_advantages(
    std::span<const TrajectoryRecord> group, const AnchorStore& store,
    const AdvantageConfig& cfg) {
  require_group(group);
  const auto pers = pers_rewards(group);
  const double group_mean = mean(pers);
  const double group_std = population_std(pers);

  std::vector<double> out;
  out.reserve(group.size());
  for (const auto& r : group) {
    const auto anchor = store.find(r.user_id);
    double baseline = group_mean;
    double scale = group_std;
    if (anchor && anchor->count > 0) {
      baseline =
          compute_user_baseline(group_mean, *anchor, store.margin_coeff());
      scale = std::sqrt(anchor->variance);
    }
    out.push_back((r.reward_pers - baseline) / (scale + cfg.epsilon));
  }
  return out;
}

std::vector<double> fuse_advantages(std::span<const double> a_base,
                                    std::span<const double> a_pers,
                                    const AdvantageConfig& cfg) {
  if (a_base.size() != a_pers.size()) {
    throw std::invalid_argument("advantage length mismatch");
  }
  std::vector<double> out(a_base.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cfg.w_base * a_base[i] + cfg.w_pers * a_pers[i];
  }
  return out;
}

double clipped_policy_loss(std::span<const TrajectoryRecord> records,
                           std::span<const double> advantages,
                           const AdvantageConfig& cfg) {
  check_ratios(records, advantages);
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double r = *records[i].ratio;
    const double a = advantages[i];
    const double clipped = std::clamp(r, 1.0 - cfg.clip, 1.0 + cfg.clip);
    total += std::max(-r * a, -clipped * a);
  }
  return total / static_cast<double>(records.size());
}

std::vector<double> clipped_policy_loss_ratio_grad(
    std::span<const TrajectoryRecord> records,
    std::span<const double> advantages, const AdvantageConfig& cfg) {
  check_ratios(records, advantages);
  const double inv_b = 1.0 / static_cast<double>(records.size());
  std::vector<double> grad(records.size(), 0.0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double r = *records[i].ratio;
    const double a = advantages[i];
    const double lo = 1.0 - cfg.clip;
    const double hi = 1.0 + cfg.clip;
    const double clipped = std::clamp(r, lo, hi);
    // Inside the clip range both branches coincide; outside it only the
    // unclipped branch depends on r, and only when it attains the max.
    if ((r >= lo && r <= hi) || (-r * a > -clipped * a)) {
      grad[i] = -a * inv_b;
    }
  }
  return grad;
}

std::vector<double> compute_grpo_advantages(
    std::span<const TrajectoryRecord> records, double epsilon,
    double alpha_mix) {
  if (records.empty()) {
    throw std::invalid_argument("empty group");
  }
  std::vector<double> totals;
  totals.reserve(records.size());
  for (const auto& r : records) {
    totals.push_back(alpha_mix * r.reward_base +
                     (1.0 - alpha_mix) * r.reward_pers);
  }
  return standardize(totals, epsilon);
}

std::vector<double> compute_noanchor_advantages(
    std::span<const TrajectoryRecord> group, const AdvantageConfig& cfg) {
  const auto base = compute_base_advantages(group, cfg);
  const auto pers = standardize(pers_rewards(group), cfg.epsilon);
  return fuse_advantages(base, pers, cfg);
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kParpo:
      return "parpo";
    case EstimatorKind::kGrpo:
      return "grpo";
    case EstimatorKind::kNoAnchor:
      return "noanchor";
  }
  return "unknown";
}

std::optional<EstimatorKind> parse_estimator_kind(const std::string& name) {
  if (name == "parpo") return EstimatorKind::kParpo;
  if (name == "grpo") return EstimatorKind::kGrpo;
  if (name == "noanchor") return EstimatorKind::kNoAnchor;
  return std::nullopt;
}

BatchAdvantages compute_batch_advantages(
    std::span<const TrajectoryRecord> records, EstimatorKind kind,
    AnchorStore& store, const AdvantageConfig& cfg) {
  if (records.empty()) {
    throw std::invalid_argument("empty batch");
  }
  BatchAdvantages out;
  out.total.assign(records.size(), 0.0);
  out.base.assign(records.size(), 0.0);
  out.pers.assign(records.size(), 0.0);

  if (kind == EstimatorKind::kGrpo) {
    out.total = compute_grpo_advantages(records, cfg.epsilon);
    return out;
  }

  // Stable grouping: groups are processed in order of first appearance.
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = members.try_emplace(records[i].group_id);
    if (inserted) order.push_back(records[i].group_id);
    it->second.push_back(i);
  }

  for (const auto& gid : order) {
    const auto& idx = members[gid];
    std::vector<TrajectoryRecord> group;
    group.reserve(idx.size());
    for (std::size_t i : idx) group.push_back(records[i]);

    const auto base = compute_base_advantages(group, cfg);
    const auto pers = kind == EstimatorKind::kParpo
                          ? compute_pers_advantages(group, store, cfg)
                          : standardize(pers_rewards(group), cfg.epsilon);
    const auto total = fuse_advantages(base, pers, cfg);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.base[idx[k]] = base[k];
      out.pers[idx[k]] = pers[k];
      out.total[idx[k]] = total[k];
    }
  }

  if (kind == EstimatorKind::kParpo) {
    std::map<std::string, std::vector<double>> per_user;
    for (const auto& r : records) per_user[r.user_id].push_back(r.reward_pers);
    for (const auto& [user, batch] : per_user) {
      update_anchor(store, user, batch);
    }
  }
  return out;
}

}  // namespace parpo::advantage
