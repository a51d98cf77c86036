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

// Synthetic user-conditioned bandit environment. Each query offers a fixed
// set of candidate trajectories; a user's personalized reward is linear in
// the candidate features with a per-user scale and offset. A tabular softmax
// policy is trained with the PARPO, pooled GRPO or no-anchor estimators.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "parpo/advantage_engine.hpp"
#include "parpo/bias_oracle.hpp"
#include "parpo/reward_model/cf_model.hpp"

namespace parpo::sim {

struct EnvConfig {
  double alpha_mix = 0.5;
  double noise_std = 0.1;
  double heterogeneity_level = 1.0;
  int population_size = 8;
  int query_count = 4;
  int candidate_count = 4;
  int feature_dim = 4;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SyntheticUser {
  std::string id;
  std::vector<double> preference;
  double conformity_weight = 0.0;
  double reward_scale = 1.0;
  double reward_offset = 0.0;
};

struct SyntheticQuery {
  std::string id;
  std::vector<std::vector<double>> candidates;  // feature vectors
  std::vector<double> base_quality;             // R_base per candidate
};

struct World {
  EnvConfig cfg;
  std::vector<SyntheticUser> users;
  std::vector<SyntheticQuery> queries;
  // Noiseless personalized reward per [user][query][candidate].
  std::vector<std::vector<std::vector<double>>> pers_mean;

  int num_users() const { return static_cast<int>(users.size()); }
  int num_queries() const { return static_cast<int>(queries.size()); }
  int num_candidates(int query) const {
    return static_cast<int>(queries[query].candidates.size());
  }
  double base_reward(int query, int cand) const {
    return queries[query].base_quality[cand];
  }
  double total_mean(int user, int query, int cand) const {
    return cfg.alpha_mix * base_reward(query, cand) +
           (1.0 - cfg.alpha_mix) * pers_mean[user][query][cand];
  }
  /// Noiseless ground truth as a reward table (trajectory id = candidate).
  oracle::UserRewardTable oracle_table() const;
  /// Writes oracle_table() in its columnar text format.
  void export_table(std::ostream& out) const;
};

/// Users share a base preference; each adds heterogeneity_level * N(0, I).
/// Scales are log-uniform in [1/(1+h), 1+h] and offsets h * N(0, 1), so
/// h = 0 gives identical users.
World generate_world(const EnvConfig& cfg);

/// Two users and one query with two candidates of features +1 and -1; the
/// users' preferences are +1 and -1, base quality is equal.
World opposed_world(double noise_std = 0.1, double alpha_mix = 0.5,
                    std::uint64_t seed = 0);

/// Hard preference probabilities for candidates (a, b) of a query:
/// z_u = 1 when u's noiseless reward favours a, 0 when b, 1/2 on a tie.
std::vector<double> preference_probabilities(const World& world, int query,
                                             int cand_a, int cand_b);

/// Softmax policy over candidates. A shared table ignores the user.
class PolicyTable {
 public:
  PolicyTable(const World& world, bool shared = false);

  bool shared() const { return shared_; }
  std::vector<double> probabilities(int user, int query) const;
  std::vector<double>& logits(int user, int query);
  const std::vector<double>& logits(int user, int query) const;
  bool operator==(const PolicyTable&) const = default;

 private:
  bool shared_ = false;
  std::vector<std::vector<std::vector<double>>> logits_;  // [row][query][cand]
};

struct Rollout {
  advantage::TrajectoryRecord record;
  int user = 0;
  int query = 0;
  int candidate = 0;
  double behaviour_prob = 0.0;  // sampling-time probability of candidate
  double reward_total = 0.0;
};

/// G i.i.d. samples from the policy with noisy personalized rewards.
/// Ratios are 1 at sampling time.
std::vector<Rollout> rollout_group(const PolicyTable& policy, const World& world,
                                   int user, int query, int group_size,
                                   std::mt19937_64& rng);

enum class Track { kTotal, kPers };

/// (R - V) / (sigma + eps) of a candidate's noiseless reward, where V and
/// sigma are the mean and std under the candidate distribution `probs`.
double true_advantage(const World& world, int user, int query, int cand,
                      std::span<const double> probs, Track track,
                      double epsilon);

struct TrainConfig {
  advantage::EstimatorKind kind = advantage::EstimatorKind::kParpo;
  int steps = 200;
  double step_size = 0.5;
  int group_size = 8;
  advantage::AdvantageConfig adv;
  double anchor_decay = 0.99;
  double margin_coeff = 1.0;
  void validate() const;
};

struct TraceRow {
  int step = 0;
  std::string optimizer;
  double mean_reward = 0.0;       // expected total reward under the policy
  double mean_pers_reward = 0.0;  // expected personalized reward
  double adv_error = 0.0;         // mean |estimate - truth| over the batch
};

/// Policy value averaged over users and queries.
struct PolicyValue {
  double total = 0.0;
  double pers = 0.0;
};
PolicyValue expected_reward(const World& world, const PolicyTable& policy);

/// Mean over users of the probability mass on the user's best candidate
/// (by personalized reward) for `query`.
double preferred_choice_rate(const World& world, const PolicyTable& policy,
                             int query);

/// Estimated advantages for one step's records, by estimator kind. Pooled
/// GRPO standardizes across every record (one query per step).
advantage::BatchAdvantages estimate_advantages(
    std::span<const Rollout> rollouts, advantage::EstimatorKind kind,
    advantage::AnchorStore& anchors, const advantage::AdvantageConfig& cfg,
    double alpha_mix);

/// Mean absolute estimation error of one step: GRPO on the total track
/// against the user's total advantage, the others on the personalized
/// track. Truths use the behaviour distribution of each group.
double estimation_error(const World& world, const PolicyTable& behaviour,
                        std::span<const Rollout> rollouts,
                        const advantage::BatchAdvantages& adv,
                        advantage::EstimatorKind kind, double epsilon);

struct TrainResult {
  PolicyTable policy;
  advantage::AnchorStore anchors;
  std::vector<TraceRow> trace;  // one row per step, values after the update
};

/// Each step samples one query; every user rolls out a group, advantages
/// are estimated, and the logits take one clipped-objective gradient step.
/// Throws std::runtime_error when the loss or logits stop being finite.
TrainResult train(const World& world, PolicyTable policy, const TrainConfig& cfg,
                  std::uint64_t seed);

struct EstimationComparison {
  double parpo = 0.0;
  double grpo = 0.0;
  double noanchor = 0.0;
};

/// Frozen uniform policy: PARPO anchors are warmed for `warm_batches`
/// batches, then every estimator is scored on the same `eval_batches`.
EstimationComparison compare_estimation_error(const World& world,
                                              const TrainConfig& cfg,
                                              int warm_batches, int eval_batches,
                                              std::uint64_t seed);

struct OptimizerSummary {
  std::string optimizer;
  double mean_adv_error = 0.0;
  double final_pers_reward = 0.0;
  double final_total_reward = 0.0;
  std::optional<double> anchor_drift;  // PARPO only
};

struct TrialReport {
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<OptimizerSummary> optimizers;
};

struct ComparisonReport {
  std::vector<TrialReport> trials;
  std::vector<OptimizerSummary> mean;  // averaged over trials
};

/// Trains every kind on matched worlds and seeds; trial t uses a world
/// generated from derive_seed(env.seed, "trial", t).
ComparisonReport compare_optimizers(const EnvConfig& env, const TrainConfig& train_cfg,
                                    const std::vector<advantage::EstimatorKind>& kinds,
                                    int trials);

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows);

/// Interactions for reward-model training: each user picks `per_user`
/// distinct (query, candidate) items, sampled with utility
/// (1 - w_conf) * R_pers + w_conf * R_base. Item id = "<query>:<cand>".
struct SampledInteraction {
  std::string user_id;
  std::string item_id;
};
std::vector<SampledInteraction> sample_interactions(const World& world,
                                                    int per_user,
                                                    std::uint64_t seed);

/// Replaces the personalized reward table with the reward model's fused
/// score: users are matched by id and candidate features act as action
/// text embeddings (feature_dim must equal the model dimension).
void use_reward_model_scores(World& world, const reward::CFModel& model,
                             const reward::MatrixXd& item_text, int k_nn = 5);

}  // namespace parpo::sim
