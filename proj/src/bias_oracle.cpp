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

#include "parpo/bias_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "parpo/common/stats.hpp"
#include "parpo/common/text_format.hpp"

namespace parpo::oracle {

namespace {

// Bound checks compare quantities that can coincide exactly in theory;
// allow for last-bit rounding only.
bool within(double lhs, double rhs) {
  return lhs <= rhs + 1e-12 * (1.0 + std::abs(rhs));
}

double value_of(const RewardEntry& e, RewardKind kind) {
  return kind == RewardKind::kTotal ? e.total : e.pers;
}

double weighted_user_mean(const UserRewardTable& table,
                          std::span<const double> per_user) {
  return weighted_mean(per_user, table.user_weights());
}

double margin_for(const std::string& user, const advantage::UserAnchor& anchor,
                  const advantage::AnchorStore& anchors,
                  const MarginMap& margins) {
  auto it = margins.find(user);
  if (it != margins.end()) return it->second;
  return anchors.margin_coeff() * std::sqrt(anchor.variance);
}

advantage::UserAnchor require_anchor(const advantage::AnchorStore& anchors,
                                     const std::string& user) {
  auto a = anchors.find(user);
  if (!a || a->count == 0) {
    throw std::invalid_argument("missing anchor for user '" + user + "'");
  }
  return *a;
}

double pers_sigma_min(const UserRewardTable& table, std::size_t query) {
  double s = pooled_stats(table, query, RewardKind::kPers).std;
  for (std::size_t u = 0; u < table.users().size(); ++u) {
    s = std::min(s, slice_stats(table, u, query, RewardKind::kPers).std);
  }
  return s;
}

std::vector<double> user_means(const UserRewardTable& table, std::size_t query,
                               RewardKind kind) {
  std::vector<double> out;
  for (std::size_t u = 0; u < table.users().size(); ++u) {
    out.push_back(slice_stats(table, u, query, kind).mean);
  }
  return out;
}

// mu_G(u) for each user: user-weighted mean of mu over the user's group.
std::vector<double> group_means(const UserRewardTable& table,
                                std::span<const double> mu,
                                const Grouping& grouping) {
  const auto& users = table.users();
  const auto& w = table.user_weights();
  std::map<std::string, std::pair<double, double>> acc;
  std::vector<std::string> gid(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto it = grouping.find(users[u]);
    if (it == grouping.end()) {
      throw std::invalid_argument("grouping does not cover user '" + users[u] +
                                  "'");
    }
    gid[u] = it->second;
    auto& [num, den] = acc[gid[u]];
    num += w[u] * mu[u];
    den += w[u];
  }
  std::vector<double> out(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    const auto& [num, den] = acc[gid[u]];
    out[u] = num / den;
  }
  return out;
}

}  // namespace

UserRewardTable::UserRewardTable(double alpha_mix) : alpha_(alpha_mix) {
  if (!(alpha_mix >= 0.0 && alpha_mix <= 1.0)) {
    throw std::invalid_argument("alpha_mix must lie in [0,1]");
  }
}

void UserRewardTable::add(const std::string& user, const std::string& query,
                          const std::string& trajectory, double base,
                          double pers) {
  auto [uit, new_user] = user_ids_.try_emplace(user, users_.size());
  if (new_user) {
    users_.push_back(user);
    weights_.push_back(1.0);
    cells_.emplace_back(queries_.size());
  }
  auto [qit, new_query] = query_ids_.try_emplace(query, queries_.size());
  if (new_query) {
    queries_.push_back(query);
    for (auto& row : cells_) row.emplace_back();
  }
  cells_[uit->second][qit->second].push_back(
      RewardEntry{trajectory, base, pers, alpha_ * base + (1.0 - alpha_) * pers});
}

std::size_t UserRewardTable::user_index(const std::string& user) const {
  auto it = user_ids_.find(user);
  if (it == user_ids_.end()) {
    throw std::out_of_range("unknown user '" + user + "'");
  }
  return it->second;
}

std::size_t UserRewardTable::query_index(const std::string& query) const {
  auto it = query_ids_.find(query);
  if (it == query_ids_.end()) {
    throw std::out_of_range("unknown query '" + query + "'");
  }
  return it->second;
}

std::span<const RewardEntry> UserRewardTable::slice(std::size_t user,
                                                    std::size_t query) const {
  if (user >= users_.size() || query >= queries_.size()) {
    throw std::out_of_range("reward table index out of range");
  }
  return cells_[user][query];
}

void UserRewardTable::set_user_weights(std::vector<double> weights) {
  if (weights.size() != users_.size()) {
    throw std::invalid_argument("one weight per user required");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("user weights must be finite and >= 0");
    }
    sum += w;
  }
  if (!(sum > 0.0)) {
    throw std::invalid_argument("user weights sum to zero");
  }
  weights_ = std::move(weights);
}

void UserRewardTable::validate() const {
  if (users_.empty() || queries_.empty()) {
    throw FormatError("reward table is empty");
  }
  for (std::size_t u = 0; u < users_.size(); ++u) {
    for (std::size_t q = 0; q < queries_.size(); ++q) {
      if (cells_[u][q].empty()) {
        throw FormatError("no trajectories for user '" + users_[u] +
                          "' on query '" + queries_[q] + "'");
      }
      for (const auto& e : cells_[u][q]) {
        if (!std::isfinite(e.base) || !std::isfinite(e.pers)) {
          throw FormatError("non-finite reward for trajectory '" +
                            e.trajectory_id + "'");
        }
      }
    }
  }
}

void UserRewardTable::save(std::ostream& out) const {
  out << "user_id,query_id,trajectory_id,reward_base,reward_pers\n";
  for (std::size_t u = 0; u < users_.size(); ++u) {
    for (std::size_t q = 0; q < queries_.size(); ++q) {
      for (const auto& e : cells_[u][q]) {
        out << users_[u] << ',' << queries_[q] << ',' << e.trajectory_id << ','
            << format_double(e.base) << ',' << format_double(e.pers) << '\n';
      }
    }
  }
}

UserRewardTable UserRewardTable::load(std::istream& in, double alpha_mix) {
  UserRewardTable table(alpha_mix);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = split(body, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() == 5 && trim(fields[0]) == "user_id") continue;
    }
    if (fields.size() != 5) {
      throw FormatError("reward table line " + std::to_string(lineno) +
                        ": expected 5 comma-separated fields");
    }
    try {
      table.add(std::string(trim(fields[0])), std::string(trim(fields[1])),
                std::string(trim(fields[2])), parse_double(trim(fields[3])),
                parse_double(trim(fields[4])));
    } catch (const FormatError& e) {
      throw FormatError("reward table line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  table.validate();
  return table;
}

SliceStats slice_stats(const UserRewardTable& table, std::size_t user,
                       std::size_t query, RewardKind kind) {
  const auto cell = table.slice(user, query);
  if (cell.empty()) {
    throw std::invalid_argument("empty reward slice");
  }
  std::vector<double> xs;
  xs.reserve(cell.size());
  for (const auto& e : cell) xs.push_back(value_of(e, kind));
  return SliceStats{mean(xs), population_std(xs)};
}

SliceStats pooled_stats(const UserRewardTable& table, std::size_t query,
                        RewardKind kind) {
  const std::size_t n_users = table.users().size();
  if (n_users == 0) {
    throw std::invalid_argument("reward table has no users");
  }
  std::vector<double> means(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    means[u] = slice_stats(table, u, query, kind).mean;
  }
  const double pooled_mean = weighted_user_mean(table, means);
  std::vector<double> second(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    const auto cell = table.slice(u, query);
    double acc = 0.0;
    for (const auto& e : cell) {
      const double d = value_of(e, kind) - pooled_mean;
      acc += d * d;
    }
    second[u] = acc / static_cast<double>(cell.size());
  }
  return SliceStats{pooled_mean,
                    std::sqrt(weighted_user_mean(table, second))};
}

double true_user_advantage(const UserRewardTable& table, std::size_t user,
                           std::size_t query, std::size_t trajectory,
                           double epsilon) {
  const auto cell = table.slice(user, query);
  if (trajectory >= cell.size()) {
    throw std::out_of_range("trajectory index out of range");
  }
  const auto s = slice_stats(table, user, query, RewardKind::kTotal);
  return (cell[trajectory].total - s.mean) / (s.std + epsilon);
}

double true_pers_advantage(const UserRewardTable& table, std::size_t user,
                           std::size_t query, std::size_t trajectory,
                           double epsilon) {
  const auto cell = table.slice(user, query);
  if (trajectory >= cell.size()) {
    throw std::out_of_range("trajectory index out of range");
  }
  const auto s = slice_stats(table, user, query, RewardKind::kPers);
  return (cell[trajectory].pers - s.mean) / (s.std + epsilon);
}

GrpoBias grpo_bias_terms(const UserRewardTable& table, std::size_t user,
                         std::size_t query, std::size_t trajectory,
                         double epsilon) {
  if (table.users().size() < 2) {
    throw std::invalid_argument("pooling needs at least two users");
  }
  const auto cell = table.slice(user, query);
  if (trajectory >= cell.size()) {
    throw std::out_of_range("trajectory index out of range");
  }
  const auto own = slice_stats(table, user, query, RewardKind::kTotal);
  const auto pool = pooled_stats(table, query, RewardKind::kTotal);
  double sigma_min = pool.std;
  for (std::size_t u = 0; u < table.users().size(); ++u) {
    sigma_min =
        std::min(sigma_min, slice_stats(table, u, query, RewardKind::kTotal).std);
  }
  const double x = cell[trajectory].total;
  const double a_grpo = (x - pool.mean) / (pool.std + epsilon);
  const double a_true = (x - own.mean) / (own.std + epsilon);
  const double denom = sigma_min + epsilon;

  GrpoBias out;
  out.sigma_min = sigma_min;
  out.baseline_term = std::abs(own.mean - pool.mean) / denom;
  out.scale_term =
      std::abs(x - own.mean) * std::abs(own.std - pool.std) / (denom * denom);
  out.total_error = std::abs(a_grpo - a_true);
  out.holds = within(out.total_error, out.baseline_term + out.scale_term);
  return out;
}

bool AnchorBoundReport::all_hold() const {
  if (!expectation_holds) return false;
  return std::all_of(users.begin(), users.end(),
                     [](const AnchorUserRow& r) { return r.holds; });
}

AnchorBoundReport anchor_bound_check(const UserRewardTable& table,
                                     std::size_t query,
                                     const advantage::AnchorStore& anchors,
                                     const MarginMap& margins, double epsilon) {
  AnchorBoundReport report;
  report.query = table.queries().at(query);
  report.sigma_min = pers_sigma_min(table, query);
  report.max_slack = -std::numeric_limits<double>::infinity();

  std::vector<double> errors, deltas, eps_u;
  for (std::size_t u = 0; u < table.users().size(); ++u) {
    const auto& user = table.users()[u];
    const auto anchor = require_anchor(anchors, user);
    const auto s = slice_stats(table, u, query, RewardKind::kPers);

    AnchorUserRow row;
    row.user = user;
    row.margin = margin_for(user, anchor, anchors, margins);
    row.delta = std::abs(anchor.mean - s.mean);
    row.sigma = s.std;
    const double denom = s.std + epsilon;
    const double baseline = anchor.mean - row.margin;
    for (const auto& e : table.slice(u, query)) {
      const double a_anchor = (e.pers - baseline) / denom;
      const double a_true = (e.pers - s.mean) / denom;
      row.observed_error = std::max(row.observed_error, std::abs(a_anchor - a_true));
    }
    row.exact_error = std::abs(s.mean - anchor.mean + row.margin) / denom;
    row.bound = (row.delta + row.margin) / denom;
    row.holds = within(row.observed_error, row.bound);
    report.max_slack = std::max(report.max_slack, row.bound - row.observed_error);

    errors.push_back(row.observed_error);
    deltas.push_back(row.delta);
    eps_u.push_back(row.margin);
    report.users.push_back(std::move(row));
  }
  report.expected_error = weighted_user_mean(table, errors);
  report.expected_bound =
      (weighted_user_mean(table, deltas) + weighted_user_mean(table, eps_u)) /
      (report.sigma_min + epsilon);
  report.expectation_holds =
      within(report.expected_error, report.expected_bound);
  return report;
}

HeterogeneityReport heterogeneity(const UserRewardTable& table,
                                  std::size_t query, const Grouping& grouping,
                                  const advantage::AnchorStore* anchors,
                                  const MarginMap& margins) {
  const auto mu = user_means(table, query, RewardKind::kPers);
  const double mu_pool = weighted_user_mean(table, mu);
  const auto mu_group = group_means(table, mu, grouping);

  std::vector<double> global_sq(mu.size()), local_sq(mu.size());
  for (std::size_t u = 0; u < mu.size(); ++u) {
    global_sq[u] = (mu[u] - mu_pool) * (mu[u] - mu_pool);
    local_sq[u] = (mu[u] - mu_group[u]) * (mu[u] - mu_group[u]);
  }
  HeterogeneityReport r;
  r.h_global = weighted_user_mean(table, global_sq);
  r.h_local = weighted_user_mean(table, local_sq);
  r.contraction = r.h_global > 0.0 ? r.h_local / r.h_global : 1.0;
  if (anchors != nullptr) {
    std::vector<double> deltas(mu.size()), eps_u(mu.size());
    for (std::size_t u = 0; u < mu.size(); ++u) {
      const auto& user = table.users()[u];
      const auto anchor = require_anchor(*anchors, user);
      deltas[u] = std::abs(anchor.mean - mu[u]);
      eps_u[u] = margin_for(user, anchor, *anchors, margins);
    }
    r.residual =
        weighted_user_mean(table, deltas) + weighted_user_mean(table, eps_u);
  }
  return r;
}

PersonalizationGap personalization_gap(std::span<const double> z,
                                       std::span<const double> weights) {
  if (z.empty()) {
    throw std::invalid_argument("personalization_gap needs at least one user");
  }
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(z.size(), 1.0);
  if (w.size() != z.size()) {
    throw std::invalid_argument("one weight per preference value required");
  }
  std::vector<double> best(z.size()), dev(z.size());
  for (std::size_t u = 0; u < z.size(); ++u) {
    if (!(z[u] >= 0.0 && z[u] <= 1.0)) {
      throw std::invalid_argument("preference probability outside [0,1]");
    }
    best[u] = std::max(z[u], 1.0 - z[u]);
    dev[u] = std::abs(z[u] - 0.5);
  }
  const double ez = weighted_mean(z, w);
  PersonalizationGap g;
  g.v_avg = std::max(ez, 1.0 - ez);
  g.v_pers = weighted_mean(best, w);
  g.delta = weighted_mean(dev, w) - std::abs(ez - 0.5);
  if (g.delta < -1e-12 || std::abs(g.delta - (g.v_pers - g.v_avg)) > 1e-12) {
    throw std::logic_error("personalization gap identity violated");
  }
  return g;
}

bool GroupBoundReport::all_hold() const {
  if (!expectation_holds || !contraction_holds) return false;
  return std::all_of(users.begin(), users.end(),
                     [](const GroupUserRow& r) { return r.holds; });
}

GroupBoundReport group_bound_check(const UserRewardTable& table,
                                   std::size_t query, const Grouping& grouping,
                                   const advantage::AnchorStore& anchors,
                                   const MarginMap& margins, double epsilon) {
  GroupBoundReport report;
  report.query = table.queries().at(query);
  report.heterogeneity =
      heterogeneity(table, query, grouping, &anchors, margins);
  report.sigma_min = pers_sigma_min(table, query);

  const auto mu = user_means(table, query, RewardKind::kPers);
  const auto mu_group = group_means(table, mu, grouping);
  std::vector<double> errors;
  for (std::size_t u = 0; u < mu.size(); ++u) {
    const auto& user = table.users()[u];
    const auto anchor = require_anchor(anchors, user);
    const double margin = margin_for(user, anchor, anchors, margins);
    const double sigma = slice_stats(table, u, query, RewardKind::kPers).std;
    const double denom = sigma + epsilon;
    const double baseline = std::max(mu_group[u], anchor.mean - margin);

    // Largest per-trajectory deviation; identical across trajectories up to
    // rounding since the baseline shift is constant.
    double err = 0.0;
    for (const auto& e : table.slice(u, query)) {
      const double est = (e.pers - baseline) / denom;
      const double truth = (e.pers - mu[u]) / denom;
      err = std::max(err, std::abs(est - truth));
    }
    GroupUserRow row;
    row.user = user;
    row.error = err;
    row.bound = (std::abs(mu_group[u] - mu[u]) +
                 std::abs(anchor.mean - mu[u]) + margin) /
                denom;
    row.holds = within(row.error, row.bound);
    errors.push_back(err);
    report.users.push_back(std::move(row));
  }

  const auto& h = report.heterogeneity;
  const double denom_min = report.sigma_min + epsilon;
  report.expected_error = weighted_user_mean(table, errors);
  report.expected_bound = (std::sqrt(h.h_local) + h.residual) / denom_min;
  report.expectation_holds =
      within(report.expected_error, report.expected_bound);

  report.grpo_dominant_bound = std::sqrt(h.h_global) / denom_min;
  report.contraction_condition =
      h.contraction < 1.0 &&
      h.residual <= (1.0 - std::sqrt(h.contraction)) * std::sqrt(h.h_global);
  report.contraction_holds =
      !report.contraction_condition ||
      (within(report.expected_bound, report.grpo_dominant_bound) &&
       within(report.expected_error, report.grpo_dominant_bound));
  return report;
}

}  // namespace parpo::oracle
