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

// Run configuration for the command-line front end. A config is a JSON
// document; every section is optional and unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "parpo/advantage_engine.hpp"
#include "parpo/reward_model/cf_model.hpp"
#include "parpo/sim_env.hpp"
#include "parpo/skill_graph.hpp"

namespace parpo::cli {

/// Bad command line or config. Maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompareSection {
  std::vector<advantage::EstimatorKind> optimizers = {
      advantage::EstimatorKind::kParpo, advantage::EstimatorKind::kNoAnchor,
      advantage::EstimatorKind::kGrpo};
  int trials = 20;
};

struct VerifySection {
  int warm_batches = 20;
  int groups = 2;                   // users are grouped round-robin
  double anchor_shift_sigma = 0.0;  // shifts every anchor mean by k * sqrt(v)
};

struct RewardModelSection {
  std::string interactions;  // empty: sample from the simulated world
  int interactions_per_user = 6;
  int dim = 4;
  int layers = 2;
  int steps = 100;
  double step_size = 0.002;
  double init_scale = 1.0;
  double tau = 0.2;
  reward::LossWeights weights;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "parpo_out";
  sim::EnvConfig env;  // env.seed is derived from `seed`
  sim::TrainConfig train;
  bool shared_policy = false;
  CompareSection compare;
  VerifySection verify;
  graph::RetrievalConfig retrieval;
  RewardModelSection reward_model;

  /// Throws UsageError naming the offending field.
  void validate() const;
};

/// Parses a config document. Syntax errors report line and column; bad
/// values report the dotted field path.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every field with its effective value, in a fixed key order.
std::string resolved_config_json(const RunConfig& cfg);

}  // namespace parpo::cli
