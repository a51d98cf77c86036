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

// Stage 1: multi-view profile fusion.
//
// Each user arrives as K view embeddings. Views are pooled by additive
// attention, mapped by W_out and layer-normalized. Training combines a
// user-level InfoNCE term (positives built by view dropout) with per-view
// reconstruction from the fused profile.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "parpo/reward_model/mlp.hpp"

namespace parpo::reward {

struct ProfileViews {
  std::string user_id;
  std::vector<VectorXd> views;  // K vectors of dimension d
};

struct FusionParams {
  MatrixXd attn_weight;  // d_a x d
  VectorXd attn_bias;    // d_a
  VectorXd attn_vector;  // d_a
  MatrixXd out_matrix;   // d x d
  VectorXd ln_gain;      // d
  VectorXd ln_shift;     // d
  std::vector<MatrixXd> recon_weight;  // K of d x d
  std::vector<VectorXd> recon_bias;    // K of d
  double tau_c = 0.1;
  double ln_eps = 1e-5;

  static FusionParams random(int dim, int attn_dim, int num_views,
                             std::mt19937_64& rng);
  FusionParams zeros_like() const;
  int dim() const { return static_cast<int>(out_matrix.rows()); }
  int num_views() const { return static_cast<int>(recon_weight.size()); }

  template <class F>
  void for_each_tensor(F&& f) {
    f(attn_weight);
    f(attn_bias);
    f(attn_vector);
    f(out_matrix);
    f(ln_gain);
    f(ln_shift);
    for (auto& m : recon_weight) f(m);
    for (auto& b : recon_bias) f(b);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(attn_weight);
    f(attn_bias);
    f(attn_vector);
    f(out_matrix);
    f(ln_gain);
    f(ln_shift);
    for (const auto& m : recon_weight) f(m);
    for (const auto& b : recon_bias) f(b);
  }
};

struct FusedProfile {
  VectorXd embedding;
  VectorXd attention;  // one weight per view; zero for masked-out views
};

/// Attention pooling over the views selected by `mask` (all when empty),
/// then LayerNorm(W_out * pooled).
FusedProfile fuse_profile(const ProfileViews& views, const FusionParams& params,
                          const std::vector<bool>& mask = {});

struct Stage1Sample {
  ProfileViews views;
  std::vector<bool> positive_mask;  // views re-fused to form the positive
};

/// Keeps each view with probability keep_prob, always at least one.
std::vector<bool> view_dropout_mask(std::size_t num_views, double keep_prob,
                                    std::mt19937_64& rng);

enum Stage1Term : unsigned {
  kStage1InfoNce = 1u << 0,
  kStage1Recon = 1u << 1,
  kStage1All = kStage1InfoNce | kStage1Recon,
};

struct Stage1Loss {
  double info_nce = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

/// InfoNCE over cosine similarities between each user's full-view profile
/// and every batch user's positive profile, plus lambda_recon times the
/// summed squared reconstruction error. Both terms are always reported;
/// `total` and the gradients accumulated into `grad` cover only the terms
/// selected by `terms`. Needs at least two users.
Stage1Loss stage1_loss(std::span<const Stage1Sample> batch,
                       const FusionParams& params, double lambda_recon,
                       FusionParams* grad = nullptr,
                       unsigned terms = kStage1All);

/// Plain gradient descent on stage1_loss; returns the loss before each step
/// followed by the final loss.
std::vector<double> train_stage1(std::span<const Stage1Sample> batch,
                                 FusionParams& params, double lambda_recon,
                                 int steps, double step_size);

}  // namespace parpo::reward
