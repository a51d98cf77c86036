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


// Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
// and exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "parpo/advantage_engine.hpp"
#include "parpo/bias_oracle.hpp"
#include "parpo/common/file_io.hpp"
#include "parpo/common/seeding.hpp"
#include "parpo/common/stats.hpp"
#include "parpo/reward_model/cf_model.hpp"
#include "parpo/reward_model/grad_check.hpp"
#include "parpo/reward_model/profile_fusion.hpp"
#include "parpo/sim_env.hpp"
#include "parpo/skill_graph.hpp"
#include "parpo_cli/commands.hpp"

namespace {

namespace fs = std::filesystem;
using namespace parpo;
using advantage::EstimatorKind;

constexpr std::uint64_t kSeed = 0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

// ---- 1: personalization gap identity --------------------------------------

Outcome personalization_gap_identity() {
  std::mt19937_64 rng(derive_seed(kSeed, "gap"));
  std::uniform_int_distribution<int> users(1, 64);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  int order_violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const int n = users(rng);
    std::vector<double> z(n), w(n);
    for (int u = 0; u < n; ++u) {
      // Mix hard preferences, ties and soft probabilities.
      const double r = unit(rng);
      z[u] = r < 0.3 ? (unit(rng) < 0.5 ? 0.0 : 1.0) : (r < 0.35 ? 0.5 : unit(rng));
      w[u] = t % 2 == 0 ? 1.0 : 0.05 + unit(rng);
    }
    double sw = 0.0, ez = 0.0, v_pers = 0.0, dev = 0.0;
    for (int u = 0; u < n; ++u) {
      sw += w[u];
      ez += w[u] * z[u];
      v_pers += w[u] * std::max(z[u], 1.0 - z[u]);
      dev += w[u] * std::abs(z[u] - 0.5);
    }
    ez /= sw;
    v_pers /= sw;
    dev /= sw;
    const double v_avg = std::max(ez, 1.0 - ez);
    const double closed = dev - std::abs(ez - 0.5);
    const auto gap = oracle::personalization_gap(z, w);
    if (v_pers < v_avg - 1e-12) ++order_violations;
    worst = std::max({worst, std::abs((v_pers - v_avg) - closed),
                      std::abs(gap.delta - closed), std::abs(gap.v_pers - v_pers),
                      std::abs(gap.v_avg - v_avg)});
  }
  return {worst <= 1e-12 && order_violations == 0,
          "10000 vectors, max deviation " + fmt(worst) + ", order violations " +
              std::to_string(order_violations)};
}

// ---- 2: pooled-estimator bias bound ----------------------------------------

struct RandomTable {
  oracle::UserRewardTable table;
  int users = 0;
  int trajectories = 0;
};

RandomTable random_table(std::mt19937_64& rng, int min_users, int max_users,
                         int max_traj) {
  std::uniform_int_distribution<int> nu(min_users, max_users), nt(2, max_traj);
  std::uniform_real_distribution<double> unit(0.0, 1.0), logs(std::log(0.2), std::log(5.0));
  std::normal_distribution<double> n(0.0, 1.0);
  RandomTable r{oracle::UserRewardTable(unit(rng)), nu(rng), nt(rng)};
  std::vector<double> base(r.trajectories);
  for (double& b : base) b = n(rng);
  for (int u = 0; u < r.users; ++u) {
    const double scale = std::exp(logs(rng));
    const double offset = 2.0 * n(rng);
    const bool flat = unit(rng) < 0.1;
    for (int t = 0; t < r.trajectories; ++t) {
      const double pers = flat ? offset : scale * n(rng) + offset;
      r.table.add("u" + std::to_string(u), "q0", "t" + std::to_string(t), base[t], pers);
    }
  }
  return r;
}

Outcome pooled_bias_bound() {
  std::mt19937_64 rng(derive_seed(kSeed, "pooled"));
  const double eps = 1e-8;
  int violations = 0, mismatches = 0, checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto r = random_table(rng, 2, 4, 6);
    // Independent pooled and per-user standardization of the total reward.
    std::vector<double> all;
    for (int u = 0; u < r.users; ++u) {
      for (const auto& e : r.table.slice(u, 0)) all.push_back(e.total);
    }
    const double pm = mean(all), ps = population_std(all);
    for (int u = 0; u < r.users; ++u) {
      std::vector<double> mine;
      for (const auto& e : r.table.slice(u, 0)) mine.push_back(e.total);
      const double um = mean(mine), us = population_std(mine);
      for (int t = 0; t < r.trajectories; ++t) {
        const auto terms = oracle::grpo_bias_terms(r.table, u, 0, t, eps);
        const double lhs = std::abs((mine[t] - pm) / (ps + eps) - (mine[t] - um) / (us + eps));
        const double rhs = terms.baseline_term + terms.scale_term;
        ++checked;
        if (std::abs(lhs - terms.total_error) > 1e-9 * (1.0 + lhs)) ++mismatches;
        if (lhs > rhs + 1e-12 * (1.0 + rhs) || !terms.holds) ++violations;
      }
    }
  }
  return {violations == 0 && mismatches == 0,
          "1000 tables, " + std::to_string(checked) + " trajectories, violations " +
              std::to_string(violations) + ", oracle mismatches " +
              std::to_string(mismatches)};
}

// ---- 3: anchor bias exactness and bounds ------------------------------------

Outcome anchor_bias_exactness() {
  std::mt19937_64 rng(derive_seed(kSeed, "anchor"));
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double eps = 1e-8;
  double worst_exact = 0.0;
  int bound_fail = 0, expectation_fail = 0, anchor_branch = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto r = random_table(rng, 1, 6, 6);
    advantage::AnchorStore store(0.99, 0.5 + unit(rng));
    oracle::MarginMap margins;
    for (int u = 0; u < r.users; ++u) {
      const std::string id = "u" + std::to_string(u);
      const auto s = oracle::slice_stats(r.table, u, 0, oracle::RewardKind::kPers);
      advantage::UserAnchor a;
      a.mean = s.mean + 3.0 * n(rng);
      a.variance = std::exp(3.0 * n(rng));
      a.count = 1 + static_cast<std::uint64_t>(unit(rng) * 50);
      store.set(id, a);
      if (k % 2 == 1) margins[id] = std::abs(n(rng));
    }
    const auto rep = oracle::anchor_bound_check(r.table, 0, store, margins, eps);
    for (int u = 0; u < r.users; ++u) {
      const auto& row = rep.users[u];
      if (!row.holds) ++bound_fail;
      const auto s = oracle::slice_stats(r.table, u, 0, oracle::RewardKind::kPers);
      const auto a = *store.find(row.user);
      // The engine's baseline picks the anchor branch when the floor exceeds
      // the group mean; only those cases are compared exactly.
      const double b = advantage::compute_user_baseline(s.mean, a, store.margin_coeff());
      const double floor = a.mean - store.margin_coeff() * std::sqrt(a.variance);
      if (!(floor > s.mean) || b != floor) continue;
      ++anchor_branch;
      const double margin = store.margin_coeff() * std::sqrt(a.variance);
      double observed = 0.0;
      for (const auto& e : r.table.slice(u, 0)) {
        observed = std::max(observed, std::abs((e.pers - b) / (s.std + eps) -
                                               (e.pers - s.mean) / (s.std + eps)));
      }
      const double exact = std::abs(s.mean - a.mean + margin) / (s.std + eps);
      worst_exact = std::max(worst_exact, std::abs(observed - exact) / std::max(1.0, exact));
    }
    if (!rep.expectation_holds) ++expectation_fail;
  }
  return {worst_exact <= 1e-10 && bound_fail == 0 && expectation_fail == 0 &&
              anchor_branch > 0,
          "1000 configs, " + std::to_string(anchor_branch) +
              " anchor-branch cases, max exactness error " + fmt(worst_exact) +
              ", per-user bound failures " + std::to_string(bound_fail) +
              ", expectation failures " + std::to_string(expectation_fail)};
}

// ---- 4: estimation error ordering -------------------------------------------

Outcome estimation_error_ordering() {
  int wins = 0;
  double parpo = 0.0, grpo = 0.0;
  for (int t = 0; t < 20; ++t) {
    sim::EnvConfig env;
    env.heterogeneity_level = 2.0;
    env.seed = derive_seed(kSeed, "estimation-world", t);
    const auto world = sim::generate_world(env);
    const auto r = sim::compare_estimation_error(world, sim::TrainConfig{}, 20, 50,
                                                 derive_seed(kSeed, "estimation", t));
    wins += r.parpo < r.grpo ? 1 : 0;
    parpo += r.parpo / 20;
    grpo += r.grpo / 20;
  }
  return {wins >= 18, "PARPO below GRPO in " + std::to_string(wins) +
                          "/20 trials (mean error " + fmt(parpo) + " vs " + fmt(grpo) + ")"};
}

// ---- 5: end-to-end personalization ------------------------------------------

Outcome end_to_end_personalization() {
  const auto world = sim::opposed_world(0.1, 0.5, kSeed);
  sim::TrainConfig cfg;
  cfg.steps = 2000;
  const auto personal = sim::train(world, sim::PolicyTable(world), cfg, kSeed);
  const double p0 = personal.policy.probabilities(0, 0)[0];
  const double p1 = personal.policy.probabilities(1, 0)[1];

  // Closed-form ceiling of a user-agnostic policy from the preference vector.
  const auto z = sim::preference_probabilities(world, 0, 0, 1);
  double ez = 0.0;
  for (double x : z) ez += x / z.size();
  const double ceiling = std::max(ez, 1.0 - ez);
  const auto gap = oracle::personalization_gap(z);
  const auto shared = sim::train(world, sim::PolicyTable(world, true), cfg, kSeed);
  const double shared_rate = sim::preferred_choice_rate(world, shared.policy, 0);

  const bool ok = p0 > 0.9 && p1 > 0.9 && std::abs(gap.v_avg - ceiling) <= 1e-12 &&
                  shared_rate <= ceiling + 1e-12;
  return {ok, "per-user best-candidate probability " + fmt(p0) + ", " + fmt(p1) +
                  "; shared policy " + fmt(shared_rate) + " <= ceiling " + fmt(ceiling)};
}

// ---- 6: optimizer ablation ordering -----------------------------------------

Outcome ablation_ordering() {
  sim::EnvConfig env;
  env.seed = derive_seed(kSeed, "ablation");
  const auto rep = sim::compare_optimizers(
      env, sim::TrainConfig{},
      {EstimatorKind::kParpo, EstimatorKind::kNoAnchor, EstimatorKind::kGrpo}, 20);
  int ordered = 0, p_n = 0, n_g = 0;
  for (const auto& t : rep.trials) {
    const double p = t.optimizers[0].final_pers_reward;
    const double n = t.optimizers[1].final_pers_reward;
    const double g = t.optimizers[2].final_pers_reward;
    ordered += (p >= n && n >= g) ? 1 : 0;
    p_n += p >= n ? 1 : 0;
    n_g += n >= g ? 1 : 0;
  }
  return {ordered >= 15,
          "parpo >= noanchor >= grpo in " + std::to_string(ordered) +
              "/20 trials (parpo >= noanchor " + std::to_string(p_n) +
              ", noanchor >= grpo " + std::to_string(n_g) + "; mean personalized reward " +
              fmt(rep.mean[0].final_pers_reward) + ", " + fmt(rep.mean[1].final_pers_reward) +
              ", " + fmt(rep.mean[2].final_pers_reward) + ")"};
}

// ---- 7: reward-model gradient suite -----------------------------------------

reward::CFModel toy_model(int users, int items, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.45);
  std::vector<reward::Interaction> recs;
  for (int u = 0; u < users; ++u) {
    recs.push_back({"u" + std::to_string(u), "i" + std::to_string(u % items)});
    for (int i = 0; i < items; ++i) {
      if (i != u % items && i != (u + 1) % items && coin(rng)) {
        recs.push_back({"u" + std::to_string(u), "i" + std::to_string(i)});
      }
    }
  }
  for (int i = 0; i < items; ++i) {
    recs.push_back({"u" + std::to_string(i % users), "i" + std::to_string(i)});
  }
  auto m = reward::CFModel::create(reward::InteractionData::from_records(recs), dim, 2,
                                   seed, 0.5);
  std::normal_distribution<double> n(0.0, 1.0);
  m.item_text.resize(m.num_items(), dim);
  for (int i = 0; i < m.item_text.size(); ++i) m.item_text.data()[i] = n(rng);
  return m;
}

Outcome reward_model_gradients() {
  double worst = 0.0;
  int failed = 0, checks = 0;
  double breakdown = 0.0;
  bool fixed_points = true;
  const double lambda = 0.5;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    auto params = reward::FusionParams::random(4, 3, 3, rng);
    std::vector<reward::Stage1Sample> batch;
    for (int u = 0; u < 3; ++u) {
      reward::Stage1Sample s;
      s.views.user_id = "u" + std::to_string(u);
      for (int k = 0; k < 3; ++k) {
        reward::VectorXd h(4);
        for (int j = 0; j < 4; ++j) h[j] = n(rng);
        s.views.views.push_back(h);
      }
      s.positive_mask = reward::view_dropout_mask(3, 0.5, rng);
      batch.push_back(std::move(s));
    }
    for (unsigned terms : {unsigned(reward::kStage1InfoNce), unsigned(reward::kStage1Recon)}) {
      auto g = params.zeros_like();
      reward::stage1_loss(batch, params, lambda, &g, terms);
      auto probe = params;
      const auto r = reward::finite_difference_check(
          probe,
          [&](const reward::FusionParams& q) {
            return reward::stage1_loss(batch, q, lambda, nullptr, terms).total;
          },
          g, 1e-5, 1e-4);
      ++checks;
      failed += r.passed ? 0 : 1;
      worst = std::max(worst, r.max_rel_error);
    }
    const auto l1 = reward::stage1_loss(batch, params, lambda);
    breakdown = std::max(breakdown, std::abs(l1.info_nce + lambda * l1.recon - l1.total));

    const auto m = toy_model(5 + static_cast<int>(seed % 3), 6, 3 + static_cast<int>(seed % 2),
                             seed + 30);
    const auto triples = reward::sample_triples(m, seed);
    for (unsigned bit = 1; bit < reward::kStage2All; bit <<= 1) {
      const auto r = reward::check_stage2_gradients(m, triples, bit);
      ++checks;
      failed += r.passed ? 0 : 1;
      worst = std::max(worst, r.max_rel_error);
    }
    const auto t = reward::stage2_loss(m, triples);
    const auto& w = m.weights;
    const double sum = t.rec + w.interest * t.interest + w.conformity * t.conformity +
                       w.orth * t.orth + w.user * t.user + w.reg * t.reg + w.align * t.align;
    breakdown = std::max(breakdown, std::abs(sum - t.total));

    auto fp = m;
    fp.layers = 0;
    auto prop = reward::lightgcn_propagate(fp);
    fixed_points = fixed_points && prop.users == fp.user_table && prop.items == fp.item_table;
    const int nodes = fp.num_users() + fp.num_items();
    reward::SparseMatrixXd eye(nodes, nodes);
    eye.setIdentity();
    fp.adjacency = eye;
    for (int layers : {1, 2, 3, 5}) {
      fp.layers = layers;
      prop = reward::lightgcn_propagate(fp);
      fixed_points = fixed_points && prop.users == fp.user_table && prop.items == fp.item_table;
    }
  }
  return {failed == 0 && fixed_points && breakdown <= 1e-9,
          std::to_string(checks) + " per-term checks, failures " + std::to_string(failed) +
              ", max rel error " + fmt(worst) + "; propagation fixed points " +
              (fixed_points ? "exact" : "NOT exact") + "; breakdown error " + fmt(breakdown)};
}

// ---- 8: graph suite ---------------------------------------------------------

graph::GraphNode gnode(const std::string& id, graph::NodeKind kind,
                       std::optional<std::vector<double>> emb = std::nullopt) {
  return {id, kind, std::move(emb), ""};
}

graph::SkillGraph random_skill_graph(std::mt19937_64& rng, int users, int skills, int dim) {
  using graph::EdgeKind;
  using graph::NodeKind;
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  auto vec = [&] {
    std::vector<double> v(dim);
    for (double& x : v) x = n(rng);
    return v;
  };
  graph::SkillGraph g;
  for (int u = 0; u < users; ++u) g.upsert_node(gnode("user" + std::to_string(u), NodeKind::kUser, vec()));
  for (int s = 0; s < skills; ++s) {
    // A few skills carry no embedding and must never be returned.
    g.upsert_node(gnode("skill" + std::to_string(s), NodeKind::kSkill,
                        w(rng) < 0.9 ? std::optional(vec()) : std::nullopt));
  }
  std::uniform_int_distribution<int> pick_u(0, users - 1), pick_s(0, skills - 1);
  for (int s = 0; s < skills; ++s) {
    if (w(rng) < 0.8) {
      g.upsert_edge({"user" + std::to_string(pick_u(rng)), "skill" + std::to_string(s),
                     EdgeKind::kOwns, w(rng)});
    }
  }
  const EdgeKind kinds[] = {EdgeKind::kComplement, EdgeKind::kConflict,
                            EdgeKind::kApplicability, EdgeKind::kExecutionHistory};
  for (int e = 0; e < 2 * skills; ++e) {
    const int a = pick_s(rng), b = pick_s(rng);
    if (a != b) {
      g.upsert_edge({"skill" + std::to_string(a), "skill" + std::to_string(b),
                     kinds[e % 4], w(rng)});
    }
  }
  return g;
}

double cosine(const std::vector<double>& a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Independent retrieval: cosine top-M, owner-sibling expansion, full scoring.
std::vector<graph::RankedSkill> brute_retrieve(const graph::SkillGraph& g,
                                               std::span<const double> q,
                                               const std::string& user,
                                               const graph::CommunityAssignment& ca,
                                               const graph::RetrievalConfig& cfg) {
  std::vector<std::pair<double, std::string>> sem;
  for (const auto& [id, nd] : g.nodes()) {
    if (nd.kind == graph::NodeKind::kSkill && nd.embedding) {
      sem.emplace_back(cosine(*nd.embedding, q), id);
    }
  }
  std::sort(sem.begin(), sem.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::set<std::string> cands;
  for (std::size_t i = 0; i < sem.size() && i < static_cast<std::size_t>(cfg.top_m); ++i) {
    cands.insert(sem[i].second);
  }
  std::set<std::string> expanded = cands;
  for (const auto& [key, e] : g.edges()) {
    (void)key;
    if (e.kind != graph::EdgeKind::kOwns || !cands.count(e.dst)) continue;
    for (const auto& [key2, e2] : g.edges()) {
      (void)key2;
      if (e2.kind == graph::EdgeKind::kOwns && e2.src == e.src) expanded.insert(e2.dst);
    }
  }
  std::vector<graph::RankedSkill> out;
  for (const auto& id : expanded) {
    if (!g.find_node(id)->embedding) continue;
    out.push_back({id, graph::score_skill(g, q, id, user, ca, cfg).score});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.skill < b.skill;
  });
  out.resize(std::min<std::size_t>(out.size(), cfg.top_k));
  return out;
}

Outcome graph_suite() {
  using graph::EdgeKind;
  using graph::NodeKind;
  std::vector<std::string> problems;

  graph::SkillGraph single;
  single.upsert_node(gnode("a", NodeKind::kTool));
  single.upsert_node(gnode("b", NodeKind::kTool));
  single.upsert_edge({"a", "b", EdgeKind::kComplement, 1.0});
  const double q_single = graph::modularity(single, {{"a", 0}, {"b", 0}});
  if (std::abs(q_single) > 1e-12) problems.push_back("single edge Q " + fmt(q_single));

  graph::SkillGraph triangles;
  for (int i = 0; i < 6; ++i) triangles.upsert_node(gnode("n" + std::to_string(i), NodeKind::kTool));
  for (int base : {0, 3}) {
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        triangles.upsert_edge({"n" + std::to_string(base + a), "n" + std::to_string(base + b),
                               EdgeKind::kComplement, 1.0});
      }
    }
  }
  graph::Partition halves;
  for (int i = 0; i < 6; ++i) halves["n" + std::to_string(i)] = i / 3;
  const double q_tri = graph::modularity(triangles, halves);
  if (std::abs(q_tri - 0.5) > 1e-12) problems.push_back("two triangles Q " + fmt(q_tri));

  graph::SkillGraph cliques;
  for (int i = 0; i < 8; ++i) cliques.upsert_node(gnode("n" + std::to_string(i), NodeKind::kTool));
  for (int base : {0, 4}) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        cliques.upsert_edge({"n" + std::to_string(base + a), "n" + std::to_string(base + b),
                             EdgeKind::kComplement, 1.0});
      }
    }
  }
  const auto ca = graph::detect_communities(cliques);
  std::set<int> labels;
  for (const auto& [id, c] : ca.levels[ca.selected_level]) labels.insert(c);
  if (labels.size() != 2) problems.push_back("two cliques gave " + std::to_string(labels.size()));

  int graphs = 0, mismatched = 0;
  std::mt19937_64 rng(derive_seed(kSeed, "graphs"));
  std::normal_distribution<double> n(0.0, 1.0);
  for (int skills = 1; skills <= 50; ++skills) {
    for (int rep = 0; rep < 2; ++rep) {
      auto g = random_skill_graph(rng, 1 + (skills + rep) % 6, skills, 4);
      graph::RetrievalConfig cfg;
      cfg.top_m = rep == 0 ? skills : 1 + skills % 10;
      cfg.top_k = 1 + (skills + rep) % 8;
      const std::vector<double> q{n(rng), n(rng), n(rng), n(rng)};
      const std::string user = "user" + std::to_string(skills % (1 + (skills + rep) % 6));
      const auto got = graph::retrieve(g, q, user, cfg);
      ++graphs;
      if (got != brute_retrieve(g, q, user, g.communities(), cfg)) ++mismatched;
    }
  }
  if (mismatched) problems.push_back(std::to_string(mismatched) + " retrieval mismatches");

  graph::SkillGraph fixture;
  const std::vector<double> e{0.3, -1.7, 2.2};
  fixture.upsert_node(gnode("u", NodeKind::kUser, e));
  fixture.upsert_node(gnode("s", NodeKind::kSkill, e));
  fixture.upsert_edge({"u", "s", EdgeKind::kOwns, 1.0});
  const auto score =
      graph::score_skill(fixture, e, "s", "u", fixture.communities(), graph::RetrievalConfig{});
  if (std::abs(score.score - 0.72) > 1e-12) problems.push_back("fixture score " + fmt(score.score));

  std::string detail = "Q(single edge) " + fmt(q_single) + ", Q(two triangles) " + fmt(q_tri) +
                       ", two-clique communities " + std::to_string(labels.size()) +
                       ", retrieval equal to brute force on " +
                       std::to_string(graphs - mismatched) + "/" + std::to_string(graphs) +
                       " graphs, fixture score " + fmt(score.score);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---- 9: determinism ---------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files[fs::relative(entry.path(), dir).string()] = read_file(entry.path());
    }
  }
  return files;
}

int cli(std::vector<std::string> args, std::string* stdout_text = nullptr) {
  args.insert(args.begin(), "parpo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (stdout_text) *stdout_text = out.str();
  return code;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "parpo_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path fixtures = PARPO_FIXTURE_DIR;
  const std::string config = (root / "run.json").string();
  write_file_atomic(config, R"({"train": {"steps": 60}, "compare": {"trials": 3},
 "reward_model": {"steps": 30}})");
  const std::string graph_json = (root / "graph" / "graph.json").string();
  const std::string fixture_json = (root / "fixture" / "graph.json").string();
  const std::vector<std::vector<std::string>> commands = {
      {"simulate", "--config", config, "--out", (root / "simulate").string()},
      {"compare", "--config", config, "--out", (root / "compare").string()},
      {"verify-bounds", "--config", config, "--out", (root / "verify").string()},
      {"train-rm", "--config", config, "--out", (root / "train_rm").string()},
      {"graph", "build", "--records", (fixtures / "two_clique.records").string(), "--out",
       (root / "graph").string()},
      {"graph", "communities", "--graph", graph_json, "--out", (root / "communities").string()},
      {"graph", "build", "--records", (fixtures / "score_fixture.records").string(),
       "--out", (root / "fixture").string()},
      {"graph", "query", "--graph", fixture_json, "--user", "u", "--embedding",
       "0.3,-1.7,2.2", "--out", (root / "query").string()},
  };
  std::vector<std::string> problems;
  std::map<std::string, std::string> first_files;
  std::vector<std::string> first_out;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < commands.size(); ++c) {
      std::string text;
      const int code = cli(commands[c], &text);
      if (code != 0) {
        problems.push_back(commands[c][0] + " exited " + std::to_string(code));
      }
      if (pass == 0) {
        first_out.push_back(text);
      } else if (text != first_out[c]) {
        problems.push_back(commands[c][0] + " stdout differs");
      }
    }
    if (pass == 0) first_files = snapshot(root);
  }
  const auto second = snapshot(root);
  int differing = 0;
  for (const auto& [name, bytes] : first_files) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
  }
  if (differing) problems.push_back(std::to_string(differing) + " artifacts differ");

  // Anchor store: save, load, save again.
  const auto world = sim::generate_world(sim::EnvConfig{});
  sim::TrainConfig tc;
  tc.steps = 40;
  const auto run = sim::train(world, sim::PolicyTable(world), tc, kSeed);
  std::stringstream a1;
  run.anchors.save(a1);
  const auto loaded = advantage::AnchorStore::load(a1, tc.anchor_decay, tc.margin_coeff);
  std::ostringstream a2;
  loaded.save(a2);
  const bool anchors_exact = loaded.anchors() == run.anchors.anchors() && a1.str() == a2.str();
  if (!anchors_exact) problems.push_back("anchor round trip not exact");

  // Graph: with and without cached communities.
  std::mt19937_64 rng(derive_seed(kSeed, "roundtrip"));
  bool graph_exact = true;
  for (int t = 0; t < 10; ++t) {
    auto g = random_skill_graph(rng, 3, 5 + 4 * t, 4);
    if (t % 2 == 0) g.communities();
    std::stringstream s1;
    g.save(s1);
    const auto back = graph::SkillGraph::load(s1);
    std::ostringstream s2;
    back.save(s2);
    graph_exact = graph_exact && back == g && s1.str() == s2.str();
  }
  if (!graph_exact) problems.push_back("graph round trip not exact");
  fs::remove_all(root);

  std::string detail = std::to_string(commands.size()) + " commands rerun, " +
                       std::to_string(first_files.size()) + " artifacts compared, " +
                       std::to_string(differing) + " differ; anchor round trip " +
                       (anchors_exact ? "exact" : "inexact") + "; graph round trip " +
                       (graph_exact ? "exact" : "inexact");
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
  double time_limit_s;  // <= 0: no limit
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "personalization gap identity", personalization_gap_identity, 5.0},
      {2, "pooled-estimator bias bound", pooled_bias_bound, 10.0},
      {3, "anchor bias exactness and bounds", anchor_bias_exactness, 0.0},
      {4, "estimation error ordering", estimation_error_ordering, 120.0},
      {5, "end-to-end personalization", end_to_end_personalization, 60.0},
      {6, "optimizer ablation ordering", ablation_ordering, 0.0},
      {7, "reward-model gradient suite", reward_model_gradients, 0.0},
      {8, "graph suite", graph_suite, 0.0},
      {9, "determinism", determinism, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0.0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.time_limit_s) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s [%d] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
