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

// Stage 2: LightGCN collaborative embeddings split into interest and
// conformity branches, branch-attention fusion, and inference-time action
// scoring.

#include <Eigen/SparseCore>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "parpo/reward_model/grad_check.hpp"
#include "parpo/reward_model/mlp.hpp"

namespace parpo::reward {

using SparseMatrixXd = Eigen::SparseMatrix<double>;

struct Interaction {
  std::string user_id;
  std::string item_id;
  double weight = 1.0;
};

/// Interaction log with dense user/item indices (ids sorted ascending).
struct InteractionData {
  struct Edge {
    int user = 0;
    int item = 0;
    double weight = 1.0;
  };
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<Edge> edges;  // in input order

  static InteractionData from_records(const std::vector<Interaction>& records);
  /// Rows of user_id, item_id, weight separated by commas or whitespace.
  /// Blank lines, '#' comments and a leading "user_id" header are skipped.
  static InteractionData load(std::istream& in);
  void save(std::ostream& out) const;

  int user_index(const std::string& id) const;
  int item_index(const std::string& id) const;
  int num_users() const { return static_cast<int>(user_ids.size()); }
  int num_items() const { return static_cast<int>(item_ids.size()); }
};

/// D^{-1/2} A D^{-1/2} over the (U+I) bipartite graph; users first.
/// Repeated interactions collapse to a single unit edge.
SparseMatrixXd normalized_adjacency(int num_users, int num_items,
                                    const std::vector<std::pair<int, int>>& edges);

/// Interaction counts min-max scaled to [0, 1]; 0.5 for every item when all
/// counts are equal.
VectorXd item_popularity(const InteractionData& data);

struct LossWeights {
  double interest = 0.2;
  double conformity = 0.2;
  double orth = 0.1;
  double user = 3.0;
  double reg = 1e-4;
  double align = 0.5;
  void validate() const;
};

struct CFModel {
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<std::pair<int, int>> edges;  // unique (user, item), sorted
  MatrixXd user_table;                     // U x d
  MatrixXd item_table;                     // I x d
  int layers = 2;
  SparseMatrixXd adjacency;                // rebuilt from edges
  TwoLayerMlp interest;                    // d -> d -> d
  TwoLayerMlp conformity;                  // d -> d -> d
  TwoLayerMlp branch_attn;                 // 2d -> d -> 2
  TwoLayerMlp action;                      // d -> d -> d
  VectorXd popularity;                     // I values in [0, 1]
  MatrixXd item_text;                      // I x d, or empty when unavailable
  LossWeights weights;
  double tau = 0.2;
  double branch_temperature = 1.0;
  double omega_eps = 1e-8;

  static CFModel create(const InteractionData& data, int dim, int layers,
                        std::uint64_t seed, double init_scale = 0.1);
  CFModel zeros_like() const;
  void rebuild_adjacency();
  void validate() const;

  int dim() const { return static_cast<int>(user_table.cols()); }
  int num_users() const { return static_cast<int>(user_table.rows()); }
  int num_items() const { return static_cast<int>(item_table.rows()); }
  int user_index(const std::string& id) const;

  void save(std::ostream& out) const;
  static CFModel load(std::istream& in);

  // Trainable tensors only.
  template <class F>
  void for_each_tensor(F&& f) {
    f(user_table);
    f(item_table);
    interest.for_each_tensor(f);
    conformity.for_each_tensor(f);
    branch_attn.for_each_tensor(f);
    action.for_each_tensor(f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(user_table);
    f(item_table);
    interest.for_each_tensor(f);
    conformity.for_each_tensor(f);
    branch_attn.for_each_tensor(f);
    action.for_each_tensor(f);
  }
};

struct Propagated {
  MatrixXd users;  // u_cf rows
  MatrixXd items;  // i_cf rows
};

/// Layer-averaged LightGCN propagation of the embedding tables.
Propagated lightgcn_propagate(const CFModel& model);

struct BranchFusion {
  VectorXd unit_interest;
  VectorXd unit_conformity;
  VectorXd fused;  // unit length
  double alpha_interest = 0.5;
  double alpha_conformity = 0.5;
};

/// Encodes u_cf with both branches, normalizes, and fuses by branch attention.
/// Throws "degenerate embedding" on a zero-norm branch.
BranchFusion fuse_branches(const CFModel& model, const VectorXd& u_cf);

/// Fuses two unit branch vectors with softmax(logits / temperature) weights.
BranchFusion fuse_unit_branches(const VectorXd& unit_interest,
                                const VectorXd& unit_conformity,
                                const VectorXd& logits, double temperature);

/// One popularity-weighted InfoNCE summand:
/// -log(omega + eps) - u.pool[pos]/tau + log sum_j exp(u.pool[j]/tau).
double weighted_infonce(const VectorXd& u, const MatrixXd& pool, int pos_row,
                        double omega, double tau, double eps);

struct Triple {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

struct BranchLosses {
  double interest = 0.0;
  double conformity = 0.0;
};

/// Mean interest and conformity InfoNCE over the batch positives. The
/// softmax pool is `negatives` plus each row's own positive.
BranchLosses branch_losses(const CFModel& model,
                           std::span<const std::pair<int, int>> positives,
                           std::span<const int> negatives);

enum Stage2Term : unsigned {
  kTermRec = 1u << 0,
  kTermInterest = 1u << 1,
  kTermConformity = 1u << 2,
  kTermOrth = 1u << 3,
  kTermUser = 1u << 4,
  kTermReg = 1u << 5,
  kTermAlign = 1u << 6,
  kStage2All = (1u << 7) - 1,
};

struct Stage2Terms {
  double rec = 0.0;
  double interest = 0.0;
  double conformity = 0.0;
  double orth = 0.0;
  double user = 0.0;
  double reg = 0.0;
  double align = 0.0;  // zero when the model has no item text
  double total = 0.0;  // weighted sum of the selected terms
};

/// Full stage-2 objective on (user, pos, neg) triples. The InfoNCE pool is
/// the set of distinct items in the batch. Every term is reported; `total`
/// and the gradients accumulated into `grad` cover the terms in `terms`.
Stage2Terms stage2_loss(const CFModel& model, std::span<const Triple> batch,
                        CFModel* grad = nullptr, unsigned terms = kStage2All);

/// Finite-difference check of the selected stage-2 terms. The alignment
/// target is held fixed at the unperturbed i_cf, matching its stop-gradient.
GradCheckResult check_stage2_gradients(const CFModel& model,
                                       std::span<const Triple> batch,
                                       unsigned terms, double h = 1e-5,
                                       double tol = 1e-4);

/// One negative per interaction, drawn uniformly from items the user never
/// touched. Users who touched every item contribute no triples.
std::vector<Triple> sample_triples(const CFModel& model, std::uint64_t seed);

struct Stage2Training {
  std::vector<double> trace;  // loss before each step, then the final loss
  std::vector<Stage2Terms> terms;  // per-term breakdown aligned with trace
  GradCheckResult probe_check;
};

/// Verifies gradients on a small probe model, then runs plain gradient
/// descent on the full triple batch (negatives fixed at the start).
Stage2Training train_stage2(CFModel& model, int steps, double step_size,
                            std::uint64_t seed);

struct ActionEmbedding {
  VectorXd embedding;        // 0.5 n(a_cf) + 0.5 n(a_proj)
  std::vector<int> neighbors;
  VectorXd weights;          // softmax weights over neighbors
};

ActionEmbedding infer_action_embedding(const CFModel& model,
                                       const Propagated& propagated,
                                       const VectorXd& action_vector,
                                       const MatrixXd& item_text, int k_nn = 5);

struct ActionScores {
  double interest = 0.0;
  double conformity = 0.0;
  double fused = 0.0;
};

/// Cosine of the user's branch and fused embeddings with the action.
ActionScores score_action(const BranchFusion& user, const VectorXd& action);

struct RewardStats {
  double mu_int = 0.0;
  double sigma_int = 1.0;
  double mu_conf = 0.0;
  double sigma_conf = 1.0;
  void validate() const;
  void save(std::ostream& out) const;
  static RewardStats load(std::istream& in);
};

/// Mean and std of branch scores over the model's observed interactions,
/// with the item's i_cf as the action. Sigmas are floored at 1e-6.
RewardStats compute_reward_stats(const CFModel& model,
                                 const Propagated& propagated);

struct NormalizedScores {
  double interest = 0.5;
  double conformity = 0.5;
};

NormalizedScores normalize_scores(const RewardStats& stats, double r_int,
                                  double r_conf);

}  // namespace parpo::reward
