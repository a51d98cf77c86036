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

// Dual-track group-relative advantage estimation with per-user anchors.
//
// Rewards are split into a user-independent base track and a personalized
// track. The base track is standardized within its prompt group. The
// personalized track is centered on max(group mean, m_u - gamma_p * sqrt(v_u))
// and scaled by the user's running spread sqrt(v_u), where (m_u, v_u) is an
// exponential moving average of the user's personalized rewards.
//
// Pooled GRPO and the group-only (no anchor) estimator are provided as
// comparators. All group statistics use the population convention.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace parpo::advantage {

struct TrajectoryRecord {
  std::string trajectory_id;
  std::string user_id;
  std::string group_id;
  double reward_base = 0.0;
  double reward_pers = 0.0;
  // Trajectory-level policy ratio pi_new / pi_old. Only the policy loss
  // needs it.
  std::optional<double> ratio;
};

struct UserAnchor {
  double mean = 0.0;
  double variance = 0.0;
  std::uint64_t count = 0;

  friend bool operator==(const UserAnchor&, const UserAnchor&) = default;
};

/// Floor applied to the variance of a freshly initialized anchor.
inline constexpr double kAnchorVarianceFloor = 1e-6;

class AnchorStore {
 public:
  explicit AnchorStore(double decay = 0.99, double margin_coeff = 1.0);

  double decay() const { return decay_; }
  double margin_coeff() const { return margin_coeff_; }

  /// std::nullopt for users that have never been updated.
  std::optional<UserAnchor> find(const std::string& user_id) const;

  /// Replaces (or creates) an anchor verbatim.
  void set(const std::string& user_id, const UserAnchor& anchor);

  const std::map<std::string, UserAnchor>& anchors() const { return anchors_; }
  std::size_t size() const { return anchors_.size(); }

  /// Line-delimited records `user_id<TAB>mean<TAB>variance<TAB>count`.
  /// Doubles are written in shortest round-trip form.
  void save(std::ostream& out) const;
  static AnchorStore load(std::istream& in, double decay = 0.99,
                          double margin_coeff = 1.0);

 private:
  friend UserAnchor update_anchor(AnchorStore&, const std::string&,
                                  std::span<const double>);

  double decay_;
  double margin_coeff_;
  std::map<std::string, UserAnchor> anchors_;
};

struct AdvantageConfig {
  double w_base = 0.5;
  double w_pers = 0.5;
  double epsilon = 1e-8;
  double clip = 0.2;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// (R_base - group mean) / (group std + epsilon), in input order.
std::vector<double> compute_base_advantages(
    std::span<const TrajectoryRecord> group, const AdvantageConfig& cfg);

/// EMA update of the user's anchor from one batch of personalized rewards.
/// The first update initializes from the batch directly (variance floored
/// at kAnchorVarianceFloor).
UserAnchor update_anchor(AnchorStore& store, const std::string& user_id,
                         std::span<const double> batch_pers_rewards);

/// max(group_pers_mean, m_u - margin_coeff * sqrt(v_u)).
double compute_user_baseline(double group_pers_mean, const UserAnchor& anchor,
                             double margin_coeff);

/// Personalized advantages (R_pers - b_{u,g}) / (sqrt(v_u) + epsilon).
///
/// A user with no anchor yet falls back to the within-group personalized
/// mean and std for this call; the anchor itself is only created by a later
/// update_anchor.
std::vector<double> compute_pers_advantages(
    std::span<const TrajectoryRecord> group, const AnchorStore& store,
    const AdvantageConfig& cfg);

/// w_base * a_base + w_pers * a_pers, element-wise.
std::vector<double> fuse_advantages(std::span<const double> a_base,
                                    std::span<const double> a_pers,
                                    const AdvantageConfig& cfg);

/// (1/B) * sum_i max(-r_i A_i, -clip(r_i, 1-eta, 1+eta) A_i).
double clipped_policy_loss(std::span<const TrajectoryRecord> records,
                           std::span<const double> advantages,
                           const AdvantageConfig& cfg);

/// d loss / d r_i for clipped_policy_loss. Zero wherever the clipped branch
/// is the active one.
std::vector<double> clipped_policy_loss_ratio_grad(
    std::span<const TrajectoryRecord> records,
    std::span<const double> advantages, const AdvantageConfig& cfg);

/// Pooled standardization of alpha * R_base + (1 - alpha) * R_pers across
/// every record, ignoring users.
std::vector<double> compute_grpo_advantages(
    std::span<const TrajectoryRecord> records, double epsilon,
    double alpha_mix = 0.5);

/// Base track as compute_base_advantages; personalized track standardized
/// within the group with no anchor. Fused by cfg weights.
std::vector<double> compute_noanchor_advantages(
    std::span<const TrajectoryRecord> group, const AdvantageConfig& cfg);

/// Which advantage estimator a training loop uses.
enum class EstimatorKind { kParpo, kGrpo, kNoAnchor };

std::string to_string(EstimatorKind kind);
/// Accepts "parpo", "grpo", "noanchor".
std::optional<EstimatorKind> parse_estimator_kind(const std::string& name);

struct BatchAdvantages {
  std::vector<double> total;
  std::vector<double> base;
  std::vector<double> pers;
};

/// Runs the PARPO (or no-anchor) estimator over a batch holding several
/// prompt groups. Records are grouped by group_id; the output is aligned
/// with the input. For kParpo every user's anchor is updated once from all
/// of that user's personalized rewards in the batch, after the advantages
/// are computed from the pre-update anchors.
BatchAdvantages compute_batch_advantages(
    std::span<const TrajectoryRecord> records, EstimatorKind kind,
    AnchorStore& store, const AdvantageConfig& cfg);

}  // namespace parpo::advantage
