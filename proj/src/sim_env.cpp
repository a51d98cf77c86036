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

#include "parpo/sim_env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

#include "parpo/common/seeding.hpp"
#include "parpo/common/stats.hpp"
#include "parpo/common/text_format.hpp"

namespace parpo::sim {

using advantage::AdvantageConfig;
using advantage::AnchorStore;
using advantage::BatchAdvantages;
using advantage::EstimatorKind;
using advantage::TrajectoryRecord;

namespace {

std::string padded(char prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%03d", prefix, i);
  return buf;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

void fill_pers_means(World& w) {
  w.pers_mean.assign(w.users.size(), {});
  for (std::size_t u = 0; u < w.users.size(); ++u) {
    const auto& user = w.users[u];
    for (const auto& q : w.queries) {
      std::vector<double> row;
      for (const auto& phi : q.candidates) {
        row.push_back(user.reward_scale * dot(user.preference, phi) +
                      user.reward_offset);
      }
      w.pers_mean[u].push_back(std::move(row));
    }
  }
}

void check_indices(const World& w, int user, int query) {
  if (user < 0 || user >= w.num_users()) {
    throw std::out_of_range("unknown user index " + std::to_string(user));
  }
  if (query < 0 || query >= w.num_queries()) {
    throw std::out_of_range("unknown query index " + std::to_string(query));
  }
}

std::vector<TrajectoryRecord> records_of(std::span<const Rollout> rollouts) {
  std::vector<TrajectoryRecord> out;
  out.reserve(rollouts.size());
  for (const auto& r : rollouts) out.push_back(r.record);
  return out;
}

std::vector<Rollout> rollout_all_users(const PolicyTable& policy,
                                       const World& world, int query,
                                       int group_size, std::mt19937_64& rng) {
  std::vector<Rollout> out;
  for (int u = 0; u < world.num_users(); ++u) {
    auto g = rollout_group(policy, world, u, query, group_size, rng);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

// Mean personalized reward of a user under the policy, averaged over queries.
double user_policy_mean(const World& world, const PolicyTable& policy, int u) {
  double acc = 0.0;
  for (int q = 0; q < world.num_queries(); ++q) {
    const auto p = policy.probabilities(u, q);
    for (int c = 0; c < world.num_candidates(q); ++c) {
      acc += p[c] * world.pers_mean[u][q][c];
    }
  }
  return acc / world.num_queries();
}

}  // namespace

void EnvConfig::validate() const {
  if (!(alpha_mix >= 0.0 && alpha_mix <= 1.0)) {
    throw std::invalid_argument("alpha_mix must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw std::invalid_argument("noise_std must be >= 0");
  }
  if (!(heterogeneity_level >= 0.0) || !std::isfinite(heterogeneity_level)) {
    throw std::invalid_argument("heterogeneity_level must be >= 0");
  }
  if (population_size < 1 || query_count < 1 || feature_dim < 1) {
    throw std::invalid_argument(
        "population_size, query_count and feature_dim must be >= 1");
  }
  if (candidate_count < 2) {
    throw std::invalid_argument("candidate_count must be >= 2");
  }
}

oracle::UserRewardTable World::oracle_table() const {
  oracle::UserRewardTable t(cfg.alpha_mix);
  for (int u = 0; u < num_users(); ++u) {
    for (int q = 0; q < num_queries(); ++q) {
      for (int c = 0; c < num_candidates(q); ++c) {
        t.add(users[u].id, queries[q].id, "c" + std::to_string(c),
              base_reward(q, c), pers_mean[u][q][c]);
      }
    }
  }
  return t;
}

void World::export_table(std::ostream& out) const { oracle_table().save(out); }

World generate_world(const EnvConfig& cfg) {
  cfg.validate();
  const double h = cfg.heterogeneity_level;
  World w;
  w.cfg = cfg;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::mt19937_64 base_rng(derive_seed(cfg.seed, "base_preference"));
  std::vector<double> base_pref(cfg.feature_dim);
  for (double& x : base_pref) x = normal(base_rng);

  const double log_span = std::log1p(h);
  for (int u = 0; u < cfg.population_size; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "user", u));
    SyntheticUser user;
    user.id = padded('u', u);
    user.preference = base_pref;
    for (double& x : user.preference) x += h * normal(rng);
    std::uniform_real_distribution<double> log_scale(-log_span, log_span);
    user.reward_scale = h > 0.0 ? std::exp(log_scale(rng)) : 1.0;
    user.reward_offset = h * normal(rng);
    user.conformity_weight = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    w.users.push_back(std::move(user));
  }
  for (int q = 0; q < cfg.query_count; ++q) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "query", q));
    SyntheticQuery query;
    query.id = padded('q', q);
    for (int c = 0; c < cfg.candidate_count; ++c) {
      std::vector<double> phi(cfg.feature_dim);
      for (double& x : phi) x = normal(rng);
      query.candidates.push_back(std::move(phi));
      query.base_quality.push_back(normal(rng));
    }
    w.queries.push_back(std::move(query));
  }
  fill_pers_means(w);
  return w;
}

World opposed_world(double noise_std, double alpha_mix, std::uint64_t seed) {
  World w;
  w.cfg.alpha_mix = alpha_mix;
  w.cfg.noise_std = noise_std;
  w.cfg.heterogeneity_level = 1.0;
  w.cfg.population_size = 2;
  w.cfg.query_count = 1;
  w.cfg.candidate_count = 2;
  w.cfg.feature_dim = 1;
  w.cfg.seed = seed;
  w.cfg.validate();
  w.users = {{"u0", {1.0}, 0.0, 1.0, 0.0}, {"u1", {-1.0}, 0.0, 1.0, 0.0}};
  w.queries = {{"q0", {{1.0}, {-1.0}}, {0.0, 0.0}}};
  fill_pers_means(w);
  return w;
}

std::vector<double> preference_probabilities(const World& world, int query,
                                             int cand_a, int cand_b) {
  std::vector<double> z;
  for (int u = 0; u < world.num_users(); ++u) {
    check_indices(world, u, query);
    const double a = world.pers_mean[u][query].at(cand_a);
    const double b = world.pers_mean[u][query].at(cand_b);
    z.push_back(a > b ? 1.0 : (a < b ? 0.0 : 0.5));
  }
  return z;
}

PolicyTable::PolicyTable(const World& world, bool shared) : shared_(shared) {
  const int rows = shared ? 1 : world.num_users();
  logits_.assign(rows, {});
  for (auto& row : logits_) {
    for (int q = 0; q < world.num_queries(); ++q) {
      row.emplace_back(world.num_candidates(q), 0.0);
    }
  }
}

std::vector<double> PolicyTable::probabilities(int user, int query) const {
  return softmax(logits(user, query));
}

std::vector<double>& PolicyTable::logits(int user, int query) {
  return logits_.at(shared_ ? 0 : user).at(query);
}

const std::vector<double>& PolicyTable::logits(int user, int query) const {
  return logits_.at(shared_ ? 0 : user).at(query);
}

std::vector<Rollout> rollout_group(const PolicyTable& policy, const World& world,
                                   int user, int query, int group_size,
                                   std::mt19937_64& rng) {
  check_indices(world, user, query);
  if (group_size < 1) throw std::invalid_argument("group size must be >= 1");
  const auto probs = policy.probabilities(user, query);
  std::discrete_distribution<int> pick(probs.begin(), probs.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::string& uid = world.users[user].id;
  const std::string& qid = world.queries[query].id;
  std::vector<Rollout> out;
  for (int i = 0; i < group_size; ++i) {
    Rollout r;
    r.user = user;
    r.query = query;
    r.candidate = pick(rng);
    r.behaviour_prob = probs[r.candidate];
    const double pers = world.pers_mean[user][query][r.candidate] +
                        world.cfg.noise_std * noise(rng);
    r.record = {uid + "/" + qid + "/" + std::to_string(i), uid, uid + "/" + qid,
                world.base_reward(query, r.candidate), pers, 1.0};
    r.reward_total = world.cfg.alpha_mix * r.record.reward_base +
                     (1.0 - world.cfg.alpha_mix) * pers;
    out.push_back(std::move(r));
  }
  return out;
}

double true_advantage(const World& world, int user, int query, int cand,
                      std::span<const double> probs, Track track,
                      double epsilon) {
  check_indices(world, user, query);
  const int n = world.num_candidates(query);
  if (static_cast<int>(probs.size()) != n) {
    throw std::invalid_argument("probability vector size mismatch");
  }
  auto reward = [&](int c) {
    return track == Track::kTotal ? world.total_mean(user, query, c)
                                  : world.pers_mean[user][query][c];
  };
  double v = 0.0;
  for (int c = 0; c < n; ++c) v += probs[c] * reward(c);
  double var = 0.0;
  for (int c = 0; c < n; ++c) var += probs[c] * (reward(c) - v) * (reward(c) - v);
  return (reward(cand) - v) / (std::sqrt(var) + epsilon);
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("step_size must be >= 0");
  }
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  adv.validate();
  AnchorStore probe(anchor_decay, margin_coeff);  // validates both
}

PolicyValue expected_reward(const World& world, const PolicyTable& policy) {
  PolicyValue v;
  for (int u = 0; u < world.num_users(); ++u) {
    for (int q = 0; q < world.num_queries(); ++q) {
      const auto p = policy.probabilities(u, q);
      for (int c = 0; c < world.num_candidates(q); ++c) {
        v.total += p[c] * world.total_mean(u, q, c);
        v.pers += p[c] * world.pers_mean[u][q][c];
      }
    }
  }
  const double n = static_cast<double>(world.num_users()) * world.num_queries();
  v.total /= n;
  v.pers /= n;
  return v;
}

double preferred_choice_rate(const World& world, const PolicyTable& policy,
                             int query) {
  double acc = 0.0;
  for (int u = 0; u < world.num_users(); ++u) {
    check_indices(world, u, query);
    const auto& row = world.pers_mean[u][query];
    const int best = static_cast<int>(
        std::max_element(row.begin(), row.end()) - row.begin());
    acc += policy.probabilities(u, query)[best];
  }
  return acc / world.num_users();
}

BatchAdvantages estimate_advantages(std::span<const Rollout> rollouts,
                                    EstimatorKind kind, AnchorStore& anchors,
                                    const AdvantageConfig& cfg,
                                    double alpha_mix) {
  const auto records = records_of(rollouts);
  if (kind == EstimatorKind::kGrpo) {
    BatchAdvantages out;
    out.total = advantage::compute_grpo_advantages(records, cfg.epsilon, alpha_mix);
    out.base.assign(records.size(), 0.0);
    out.pers.assign(records.size(), 0.0);
    return out;
  }
  return advantage::compute_batch_advantages(records, kind, anchors, cfg);
}

double estimation_error(const World& world, const PolicyTable& behaviour,
                        std::span<const Rollout> rollouts,
                        const BatchAdvantages& adv, EstimatorKind kind,
                        double epsilon) {
  if (rollouts.empty()) return 0.0;
  const bool grpo = kind == EstimatorKind::kGrpo;
  double acc = 0.0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const auto& r = rollouts[i];
    const auto probs = behaviour.probabilities(r.user, r.query);
    const double truth = true_advantage(world, r.user, r.query, r.candidate,
                                        probs, grpo ? Track::kTotal : Track::kPers,
                                        epsilon);
    acc += std::abs((grpo ? adv.total[i] : adv.pers[i]) - truth);
  }
  return acc / static_cast<double>(rollouts.size());
}

TrainResult train(const World& world, PolicyTable policy, const TrainConfig& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  TrainResult result{std::move(policy), AnchorStore(cfg.anchor_decay, cfg.margin_coeff),
                     {}};
  PolicyTable& pol = result.policy;
  std::mt19937_64 rng(derive_seed(seed, "train"));
  std::uniform_int_distribution<int> pick_query(0, world.num_queries() - 1);
  const std::string name = advantage::to_string(cfg.kind);

  for (int step = 0; step < cfg.steps; ++step) {
    const int q = pick_query(rng);
    const auto rollouts = rollout_all_users(pol, world, q, cfg.group_size, rng);
    const auto adv = estimate_advantages(rollouts, cfg.kind, result.anchors,
                                         cfg.adv, world.cfg.alpha_mix);
    const double err = estimation_error(world, pol, rollouts, adv, cfg.kind,
                                        cfg.adv.epsilon);
    const auto records = records_of(rollouts);
    const double loss = advantage::clipped_policy_loss(records, adv.total, cfg.adv);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("policy loss is not finite at step " +
                               std::to_string(step));
    }
    const auto dl_dr =
        advantage::clipped_policy_loss_ratio_grad(records, adv.total, cfg.adv);

    // dr/dlogit_k = r (1[k = a] - pi_k) with r = 1 in the single epoch.
    std::map<int, std::vector<double>> grads;  // policy row -> gradient
    std::map<int, std::vector<double>> probs;
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
      const auto& r = rollouts[i];
      const int row = pol.shared() ? 0 : r.user;
      auto [pit, fresh] = probs.try_emplace(r.user);
      if (fresh) pit->second = pol.probabilities(r.user, q);
      auto& g = grads.try_emplace(row, world.num_candidates(q), 0.0).first->second;
      for (int k = 0; k < world.num_candidates(q); ++k) {
        g[k] += dl_dr[i] * ((k == r.candidate ? 1.0 : 0.0) - pit->second[k]);
      }
    }
    for (const auto& [row, g] : grads) {
      auto& logits = pol.logits(row, q);
      for (std::size_t k = 0; k < g.size(); ++k) {
        logits[k] -= cfg.step_size * g[k];
        if (!std::isfinite(logits[k])) {
          throw std::runtime_error("policy logits diverged at step " +
                                   std::to_string(step));
        }
      }
    }
    const auto value = expected_reward(world, pol);
    result.trace.push_back({step, name, value.total, value.pers, err});
  }
  return result;
}

EstimationComparison compare_estimation_error(const World& world,
                                              const TrainConfig& cfg,
                                              int warm_batches, int eval_batches,
                                              std::uint64_t seed) {
  cfg.validate();
  if (warm_batches < 0 || eval_batches < 1) {
    throw std::invalid_argument("need warm_batches >= 0 and eval_batches >= 1");
  }
  const PolicyTable uniform(world);
  AnchorStore anchors(cfg.anchor_decay, cfg.margin_coeff);
  AnchorStore unused(cfg.anchor_decay, cfg.margin_coeff);
  std::mt19937_64 rng(derive_seed(seed, "estimation"));
  std::uniform_int_distribution<int> pick_query(0, world.num_queries() - 1);
  const double alpha = world.cfg.alpha_mix;
  for (int b = 0; b < warm_batches; ++b) {
    const auto rollouts =
        rollout_all_users(uniform, world, pick_query(rng), cfg.group_size, rng);
    estimate_advantages(rollouts, EstimatorKind::kParpo, anchors, cfg.adv, alpha);
  }
  EstimationComparison out;
  const double eps = cfg.adv.epsilon;
  for (int b = 0; b < eval_batches; ++b) {
    const auto rollouts =
        rollout_all_users(uniform, world, pick_query(rng), cfg.group_size, rng);
    const auto parpo =
        estimate_advantages(rollouts, EstimatorKind::kParpo, anchors, cfg.adv, alpha);
    const auto grpo =
        estimate_advantages(rollouts, EstimatorKind::kGrpo, unused, cfg.adv, alpha);
    const auto noanchor = estimate_advantages(rollouts, EstimatorKind::kNoAnchor,
                                              unused, cfg.adv, alpha);
    out.parpo += estimation_error(world, uniform, rollouts, parpo,
                                  EstimatorKind::kParpo, eps);
    out.grpo += estimation_error(world, uniform, rollouts, grpo,
                                 EstimatorKind::kGrpo, eps);
    out.noanchor += estimation_error(world, uniform, rollouts, noanchor,
                                     EstimatorKind::kNoAnchor, eps);
  }
  out.parpo /= eval_batches;
  out.grpo /= eval_batches;
  out.noanchor /= eval_batches;
  return out;
}

ComparisonReport compare_optimizers(const EnvConfig& env,
                                    const TrainConfig& train_cfg,
                                    const std::vector<EstimatorKind>& kinds,
                                    int trials) {
  if (kinds.size() < 2) {
    throw std::invalid_argument("compare needs at least two optimizer kinds");
  }
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  ComparisonReport report;
  report.mean.resize(kinds.size());
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    report.mean[k].optimizer = advantage::to_string(kinds[k]);
  }
  std::vector<int> drift_count(kinds.size(), 0);
  for (int t = 0; t < trials; ++t) {
    EnvConfig trial_env = env;
    trial_env.seed = derive_seed(env.seed, "trial", t);
    const World world = generate_world(trial_env);
    TrialReport tr{t, trial_env.seed, {}};
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      TrainConfig cfg = train_cfg;
      cfg.kind = kinds[k];
      const auto run = train(world, PolicyTable(world), cfg,
                             derive_seed(trial_env.seed, "policy"));
      OptimizerSummary s;
      s.optimizer = advantage::to_string(kinds[k]);
      const auto final_value = expected_reward(world, run.policy);
      s.final_pers_reward = final_value.pers;
      s.final_total_reward = final_value.total;
      for (const auto& row : run.trace) s.mean_adv_error += row.adv_error;
      if (!run.trace.empty()) s.mean_adv_error /= run.trace.size();
      if (kinds[k] == EstimatorKind::kParpo && run.anchors.size() > 0) {
        double drift = 0.0;
        int n = 0;
        for (int u = 0; u < world.num_users(); ++u) {
          if (auto a = run.anchors.find(world.users[u].id)) {
            drift += std::abs(a->mean - user_policy_mean(world, run.policy, u));
            ++n;
          }
        }
        s.anchor_drift = n > 0 ? drift / n : 0.0;
      }
      auto& m = report.mean[k];
      m.mean_adv_error += s.mean_adv_error / trials;
      m.final_pers_reward += s.final_pers_reward / trials;
      m.final_total_reward += s.final_total_reward / trials;
      if (s.anchor_drift) {
        m.anchor_drift = m.anchor_drift.value_or(0.0) + *s.anchor_drift;
        ++drift_count[k];
      }
      tr.optimizers.push_back(std::move(s));
    }
    report.trials.push_back(std::move(tr));
  }
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    if (report.mean[k].anchor_drift) *report.mean[k].anchor_drift /= drift_count[k];
  }
  return report;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows) {
  out << "step,optimizer,mean_reward,mean_pers_reward,adv_error\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.optimizer << ',' << format_double(r.mean_reward)
        << ',' << format_double(r.mean_pers_reward) << ','
        << format_double(r.adv_error) << '\n';
  }
}

std::vector<SampledInteraction> sample_interactions(const World& world,
                                                    int per_user,
                                                    std::uint64_t seed) {
  int total_items = 0;
  for (int q = 0; q < world.num_queries(); ++q) total_items += world.num_candidates(q);
  if (per_user < 1 || per_user > total_items) {
    throw std::invalid_argument("per_user must lie in [1, number of items]");
  }
  std::vector<SampledInteraction> out;
  for (int u = 0; u < world.num_users(); ++u) {
    std::mt19937_64 rng(derive_seed(seed, "interactions", u));
    std::extreme_value_distribution<double> gumbel(0.0, 1.0);
    const double w = world.users[u].conformity_weight;
    std::vector<std::pair<double, std::string>> keyed;
    for (int q = 0; q < world.num_queries(); ++q) {
      for (int c = 0; c < world.num_candidates(q); ++c) {
        const double util =
            (1.0 - w) * world.pers_mean[u][q][c] + w * world.base_reward(q, c);
        keyed.emplace_back(util + gumbel(rng),
                           world.queries[q].id + ":" + std::to_string(c));
      }
    }
    // Gumbel top-k: a draw without replacement from softmax(util).
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int i = 0; i < per_user; ++i) {
      out.push_back({world.users[u].id, keyed[i].second});
    }
  }
  return out;
}

void use_reward_model_scores(World& world, const reward::CFModel& model,
                             const reward::MatrixXd& item_text, int k_nn) {
  if (world.cfg.feature_dim != model.dim()) {
    throw std::invalid_argument("feature_dim must equal the reward model dim");
  }
  const auto prop = reward::lightgcn_propagate(model);
  for (int u = 0; u < world.num_users(); ++u) {
    const int idx = model.user_index(world.users[u].id);
    const auto fusion =
        reward::fuse_branches(model, prop.users.row(idx).transpose());
    for (int q = 0; q < world.num_queries(); ++q) {
      for (int c = 0; c < world.num_candidates(q); ++c) {
        const auto& phi = world.queries[q].candidates[c];
        const reward::VectorXd action =
            Eigen::Map<const reward::VectorXd>(phi.data(), phi.size());
        const auto emb =
            reward::infer_action_embedding(model, prop, action, item_text, k_nn);
        world.pers_mean[u][q][c] = reward::score_action(fusion, emb.embedding).fused;
      }
    }
  }
}

}  // namespace parpo::sim
