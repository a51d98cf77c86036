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

// Exhaustive ground truth for advantage estimation.
//
// A UserRewardTable enumerates every (user, query, trajectory) reward. From it
// the oracle computes exact per-user values V_u(q), spreads sigma_u(q), and
// normalized advantages, then measures how far the pooled (GRPO) and
// anchor-calibrated (PARPO) estimators land from the truth and whether the
// analytic error bounds hold. Expectations over users are weighted by the
// table's user weights (uniform unless set).

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parpo/advantage_engine.hpp"

namespace parpo::oracle {

struct RewardEntry {
  std::string trajectory_id;
  double base = 0.0;
  double pers = 0.0;
  double total = 0.0;  // alpha * base + (1 - alpha) * pers
};

class UserRewardTable {
 public:
  explicit UserRewardTable(double alpha_mix = 0.5);

  /// Appends one trajectory. New users and queries are registered in order
  /// of first appearance.
  void add(const std::string& user, const std::string& query,
           const std::string& trajectory, double base, double pers);

  double alpha_mix() const { return alpha_; }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& queries() const { return queries_; }
  std::size_t user_index(const std::string& user) const;
  std::size_t query_index(const std::string& query) const;

  /// Throws std::out_of_range on invalid indices.
  std::span<const RewardEntry> slice(std::size_t user, std::size_t query) const;

  /// Per-user weights used by every expectation over users.
  void set_user_weights(std::vector<double> weights);
  const std::vector<double>& user_weights() const { return weights_; }

  /// Throws FormatError unless every (user, query) slice is non-empty and
  /// every reward finite.
  void validate() const;

  /// Columnar text: header `user_id,query_id,trajectory_id,reward_base,
  /// reward_pers`, then one row per trajectory in insertion order.
  void save(std::ostream& out) const;
  static UserRewardTable load(std::istream& in, double alpha_mix);

 private:
  double alpha_;
  std::vector<std::string> users_;
  std::vector<std::string> queries_;
  std::map<std::string, std::size_t> user_ids_;
  std::map<std::string, std::size_t> query_ids_;
  std::vector<std::vector<std::vector<RewardEntry>>> cells_;  // [user][query]
  std::vector<double> weights_;
};

/// Which reward column a statistic is taken over.
enum class RewardKind { kTotal, kPers };

struct SliceStats {
  double mean = 0.0;
  double std = 0.0;
};

/// Exact mean / population std of one (user, query) slice.
SliceStats slice_stats(const UserRewardTable& table, std::size_t user,
                       std::size_t query, RewardKind kind);

/// Pooled statistics across users for one query (user-weighted mixture).
SliceStats pooled_stats(const UserRewardTable& table, std::size_t query,
                        RewardKind kind);

/// (R - V_u(q)) / (sigma_u(q) + epsilon) on the total reward.
double true_user_advantage(const UserRewardTable& table, std::size_t user,
                           std::size_t query, std::size_t trajectory,
                           double epsilon);

/// Same on the personalized reward alone.
double true_pers_advantage(const UserRewardTable& table, std::size_t user,
                           std::size_t query, std::size_t trajectory,
                           double epsilon);

struct GrpoBias {
  double baseline_term = 0.0;  // |V_u - V_pool| / (sigma_min + eps)
  double scale_term = 0.0;     // |R - V_u| |sigma_u - sigma_pool| / (.)^2
  double total_error = 0.0;    // |A_grpo - A*_u|
  double sigma_min = 0.0;
  bool holds = true;
};

/// Pooled-GRPO error against the exact user advantage and its two-term
/// upper bound. sigma_min is the smallest per-user or pooled std realized on
/// the query. Requires at least two users.
GrpoBias grpo_bias_terms(const UserRewardTable& table, std::size_t user,
                         std::size_t query, std::size_t trajectory,
                         double epsilon);

/// Per-user margins epsilon_u; users without an entry use
/// margin_coeff * sqrt(v_u) from their anchor.
using MarginMap = std::map<std::string, double>;

struct AnchorUserRow {
  std::string user;
  double delta = 0.0;           // |b_u - mu_u(q)|
  double margin = 0.0;          // epsilon_u
  double sigma = 0.0;           // sigma_u(q), personalized
  double observed_error = 0.0;  // max over trajectories |A_anchor - A*|
  double exact_error = 0.0;     // |mu_u - b_u + epsilon_u| / (sigma_u + eps)
  double bound = 0.0;           // (delta + margin) / (sigma_u + eps)
  bool holds = true;
};

struct AnchorBoundReport {
  std::string query;
  std::vector<AnchorUserRow> users;
  double expected_error = 0.0;  // E_u of observed_error
  double expected_bound = 0.0;  // (mean delta + mean margin) / (sigma_min+eps)
  double sigma_min = 0.0;
  bool expectation_holds = true;
  double max_slack = 0.0;  // max over users of bound - observed_error
  bool all_hold() const;
};

/// Anchor-only baseline b_u - epsilon_u checked against the exact
/// personalized advantage on one query. Every user needs an anchor.
AnchorBoundReport anchor_bound_check(const UserRewardTable& table,
                                     std::size_t query,
                                     const advantage::AnchorStore& anchors,
                                     const MarginMap& margins, double epsilon);

struct HeterogeneityReport {
  double h_global = 0.0;     // E_u (mu_u - mu_pool)^2
  double h_local = 0.0;      // E_u (mu_u - mu_G(u))^2
  double contraction = 1.0;  // h_local / h_global, 1 when h_global == 0
  double residual = 0.0;     // mean delta + mean margin, 0 without anchors
};

/// user id -> group id; every user of the table must be covered.
using Grouping = std::map<std::string, std::string>;

HeterogeneityReport heterogeneity(
    const UserRewardTable& table, std::size_t query, const Grouping& grouping,
    const advantage::AnchorStore* anchors = nullptr,
    const MarginMap& margins = {});

struct PersonalizationGap {
  double v_pers = 0.0;
  double v_avg = 0.0;
  double delta = 0.0;
};

/// Values of the user-aware and user-agnostic choice between two
/// trajectories given each user's preference probability z_u. Throws
/// std::logic_error if the closed-form gain disagrees with v_pers - v_avg.
PersonalizationGap personalization_gap(std::span<const double> z,
                                       std::span<const double> weights = {});

struct GroupUserRow {
  std::string user;
  double error = 0.0;  // |mu~_u - mu_u| / (sigma_u + eps)
  double bound = 0.0;  // (|mu_G - mu_u| + delta_u + eps_u) / (sigma_u + eps)
  bool holds = true;
};

struct GroupBoundReport {
  std::string query;
  std::vector<GroupUserRow> users;
  HeterogeneityReport heterogeneity;
  double sigma_min = 0.0;
  double expected_error = 0.0;
  double expected_bound = 0.0;  // (sqrt(H_G) + mean delta + mean margin)/(.)
  bool expectation_holds = true;
  // Contraction comparison against the pooled estimator's dominant term.
  bool contraction_condition = false;  // rho < 1 and eta <= (1-sqrt rho) sqrt H
  double grpo_dominant_bound = 0.0;  // sqrt(H) / (sigma_min + eps)
  bool contraction_holds = true;
  bool all_hold() const;
};

/// Group-augmented baseline max(mu_G(u), b_u - epsilon_u).
GroupBoundReport group_bound_check(const UserRewardTable& table,
                                   std::size_t query, const Grouping& grouping,
                                   const advantage::AnchorStore& anchors,
                                   const MarginMap& margins, double epsilon);

}  // namespace parpo::oracle
