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

#include "parpo/skill_graph.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "parpo/common/text_format.hpp"

namespace parpo::graph {
namespace {

GraphNode node(const std::string& id, NodeKind kind,
               std::optional<std::vector<double>> emb = std::nullopt) {
  return {id, kind, std::move(emb), ""};
}

SkillGraph plain_graph(int n, const std::vector<std::pair<int, int>>& edges) {
  SkillGraph g;
  for (int i = 0; i < n; ++i) {
    g.upsert_node(node("n" + std::to_string(i), NodeKind::kTool));
  }
  for (auto [a, b] : edges) {
    g.upsert_edge({"n" + std::to_string(a), "n" + std::to_string(b),
                   EdgeKind::kApplicability, 1.0});
  }
  return g;
}

int community_count(const Partition& p) {
  std::set<int> ids;
  for (const auto& [id, c] : p) ids.insert(c);
  return static_cast<int>(ids.size());
}

// Random graph with users owning skills plus assorted typed edges.
SkillGraph random_graph(std::mt19937_64& rng, int users, int skills, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  auto vec = [&] {
    std::vector<double> v(dim);
    for (double& x : v) x = n(rng);
    return v;
  };
  SkillGraph g;
  for (int u = 0; u < users; ++u) {
    g.upsert_node(node("user" + std::to_string(u), NodeKind::kUser, vec()));
  }
  for (int s = 0; s < skills; ++s) {
    g.upsert_node(node("skill" + std::to_string(s), NodeKind::kSkill, vec()));
  }
  g.upsert_node(node("tool0", NodeKind::kTool));
  g.upsert_node(node("scen0", NodeKind::kScenario));
  std::uniform_int_distribution<int> pick_u(0, users - 1);
  std::uniform_int_distribution<int> pick_s(0, skills - 1);
  for (int s = 0; s < skills; ++s) {
    if (w(rng) < 0.8) {
      g.upsert_edge({"user" + std::to_string(pick_u(rng)),
                     "skill" + std::to_string(s), EdgeKind::kOwns, w(rng)});
    }
  }
  for (int e = 0; e < skills; ++e) {
    const int a = pick_s(rng), b = pick_s(rng);
    if (a == b) continue;
    const EdgeKind k = (e % 3 == 0)   ? EdgeKind::kComplement
                       : (e % 3 == 1) ? EdgeKind::kConflict
                                      : EdgeKind::kApplicability;
    g.upsert_edge({"skill" + std::to_string(a), "skill" + std::to_string(b), k,
                   w(rng)});
  }
  g.upsert_edge({"skill0", "tool0", EdgeKind::kApplicability, 0.5});
  g.upsert_edge({"scen0", "skill0", EdgeKind::kScenarioTrigger, 0.25});
  return g;
}

TEST(Upsert, IdempotentAndRevisioned) {
  SkillGraph g;
  const auto r1 = g.upsert_node(node("s1", NodeKind::kSkill, {{1.0, 0.0}}));
  const auto r2 = g.upsert_node(node("s1", NodeKind::kSkill, {{1.0, 0.0}}));
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(g.nodes().size(), 1u);
  const auto r3 = g.upsert_node(node("s1", NodeKind::kSkill, {{0.0, 1.0}}));
  EXPECT_GT(r3, r2);
}

TEST(Upsert, StaleFlagTracksChanges) {
  SkillGraph g;
  g.upsert_node(node("u", NodeKind::kUser));
  g.upsert_node(node("s", NodeKind::kSkill));
  g.communities();
  EXPECT_FALSE(g.stale());
  g.upsert_node(node("s", NodeKind::kSkill));  // unchanged
  EXPECT_FALSE(g.stale());
  g.upsert_edge({"u", "s", EdgeKind::kOwns, 1.0});
  EXPECT_TRUE(g.stale());
  g.communities();
  g.upsert_edge({"u", "s", EdgeKind::kOwns, 0.5});
  EXPECT_TRUE(g.stale());
}

TEST(Upsert, Errors) {
  SkillGraph g;
  EXPECT_THROW(g.upsert_edge({"a", "b", EdgeKind::kComplement, 1.0}),
               std::invalid_argument);
  g.upsert_node(node("a", NodeKind::kSkill, {{1.0, 2.0}}));
  g.upsert_node(node("b", NodeKind::kSkill));
  EXPECT_THROW(g.upsert_edge({"a", "a", EdgeKind::kComplement, 1.0}),
               std::invalid_argument);
  EXPECT_THROW(g.upsert_edge({"a", "b", EdgeKind::kComplement, 1.5}),
               std::invalid_argument);
  EXPECT_THROW(g.upsert_edge({"a", "b", EdgeKind::kOwns, 1.0}),
               std::invalid_argument);
  EXPECT_THROW(g.upsert_node(node("a", NodeKind::kUser)), std::invalid_argument);
  EXPECT_THROW(g.upsert_node(node("c", NodeKind::kSkill, {{1.0}})),
               std::invalid_argument);
  EXPECT_THROW(g.upsert_node(node("bad id", NodeKind::kSkill)),
               std::invalid_argument);
}

TEST(Modularity, Fixtures) {
  const SkillGraph edge = plain_graph(2, {{0, 1}});
  EXPECT_NEAR(modularity(edge, {{"n0", 0}, {"n1", 0}}), 0.0, 1e-12);

  const SkillGraph tri =
      plain_graph(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
  const Partition by_triangle{{"n0", 0}, {"n1", 0}, {"n2", 0},
                              {"n3", 1}, {"n4", 1}, {"n5", 1}};
  EXPECT_NEAR(modularity(tri, by_triangle), 0.5, 1e-12);

  EXPECT_EQ(modularity(plain_graph(3, {}), {{"n0", 0}, {"n1", 1}, {"n2", 2}}),
            0.0);
  EXPECT_THROW(modularity(edge, {{"n0", 0}}), std::invalid_argument);
}

TEST(Modularity, SingletonsReduceToDegreeTerm) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    SkillGraph g = random_graph(rng, 3, 8, 2);
    Partition singles;
    int i = 0;
    for (const auto& [id, n] : g.nodes()) singles[id] = i++;
    std::map<std::string, double> k;
    double two_m = 0.0;
    for (const auto& [key, e] : g.edges()) {
      k[e.src] += e.weight;
      k[e.dst] += e.weight;
      two_m += 2.0 * e.weight;
    }
    double expect = 0.0;
    for (const auto& [id, d] : k) expect -= d * d / (two_m * two_m);
    const double q = modularity(g, singles);
    EXPECT_NEAR(q, expect, 1e-12);
    EXPECT_LE(q, 0.0);
  }
}

// Every set partition of n labelled items as restricted growth strings.
void for_each_partition(int n, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> a(n, 0);
  std::function<void(int, int)> rec = [&](int i, int max_label) {
    if (i == n) {
      f(a);
      return;
    }
    for (int c = 0; c <= max_label + 1; ++c) {
      a[i] = c;
      rec(i + 1, std::max(max_label, c));
    }
  };
  a[0] = 0;
  rec(1, 0);
}

TEST(Communities, TwoCliquesMatchBruteForceOptimum) {
  std::vector<std::pair<int, int>> edges;
  for (int base : {0, 4}) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) edges.emplace_back(base + a, base + b);
    }
  }
  SkillGraph g = plain_graph(8, edges);
  const auto ca = detect_communities(g);
  const auto& top = ca.levels[ca.selected_level];
  EXPECT_EQ(community_count(ca.levels.back()), 2);
  EXPECT_EQ(community_count(top), 2);
  EXPECT_EQ(top.at("n0"), top.at("n3"));
  EXPECT_NE(top.at("n0"), top.at("n4"));

  double best = -2.0;
  int count = 0;
  for_each_partition(8, [&](const std::vector<int>& labels) {
    Partition p;
    for (int i = 0; i < 8; ++i) p["n" + std::to_string(i)] = labels[i];
    best = std::max(best, modularity(g, p));
    ++count;
  });
  EXPECT_EQ(count, 4140);  // Bell(8)
  EXPECT_NEAR(ca.modularity[ca.selected_level], best, 1e-12);
}

TEST(Communities, SingleNodeAndDeterminism) {
  SkillGraph one;
  one.upsert_node(node("only", NodeKind::kUser));
  const auto ca = detect_communities(one);
  ASSERT_EQ(ca.levels.size(), 1u);
  EXPECT_EQ(ca.levels[0].at("only"), 0);
  EXPECT_EQ(ca.modularity[0], 0.0);

  std::mt19937_64 rng(2);
  const SkillGraph g = random_graph(rng, 4, 20, 3);
  EXPECT_EQ(detect_communities(g), detect_communities(g));
}

TEST(Communities, HierarchyProperties) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 40; ++t) {
    const SkillGraph g = random_graph(rng, 2 + t % 5, 6 + t, 3);
    const auto ca = detect_communities(g);
    ASSERT_FALSE(ca.levels.empty());
    for (std::size_t l = 0; l < ca.levels.size(); ++l) {
      EXPECT_EQ(ca.levels[l].size(), g.nodes().size());
      EXPECT_NEAR(ca.modularity[l], modularity(g, ca.levels[l]), 1e-12);
      EXPECT_GE(ca.modularity[l], -1.0);
      EXPECT_LE(ca.modularity[l], 1.0);
      if (l == 0) continue;
      EXPECT_GE(ca.modularity[l], ca.modularity[l - 1] - 1e-12);
      // Nesting: nodes sharing a fine community share the coarse one.
      std::map<int, int> fine_to_coarse;
      for (const auto& [id, c] : ca.levels[l - 1]) {
        auto [it, fresh] = fine_to_coarse.emplace(c, ca.levels[l].at(id));
        EXPECT_EQ(it->second, ca.levels[l].at(id));
      }
    }
  }
}

TEST(SemanticTopM, OrderingAndTies) {
  SkillGraph g;
  g.upsert_node(node("b", NodeKind::kSkill, {{1.0, 1.0}}));
  g.upsert_node(node("a", NodeKind::kSkill, {{2.0, 2.0}}));
  g.upsert_node(node("c", NodeKind::kSkill, {{1.0, 0.0}}));
  g.upsert_node(node("d", NodeKind::kSkill, {{-1.0, 0.0}}));
  g.upsert_node(node("u", NodeKind::kUser, {{1.0, 1.0}}));
  RetrievalConfig cfg;
  const std::vector<double> q{1.0, 1.0};
  EXPECT_EQ(semantic_topm(g, q, cfg),
            (std::vector<std::string>{"a", "b", "c", "d"}));
  cfg.top_m = 1;
  EXPECT_EQ(semantic_topm(g, std::vector<double>{1.0, 0.0}, cfg),
            std::vector<std::string>{"c"});
  EXPECT_THROW(semantic_topm(g, std::vector<double>{1.0}, cfg),
               std::invalid_argument);
  EXPECT_TRUE(semantic_topm(SkillGraph{}, q, cfg).empty());
}

SkillGraph owner_toy() {
  SkillGraph g;
  g.upsert_node(node("u", NodeKind::kUser, {{1.0, 0.0}}));
  g.upsert_node(node("s1", NodeKind::kSkill, {{1.0, 0.0}}));
  g.upsert_node(node("s2", NodeKind::kSkill, {{0.0, 1.0}}));
  g.upsert_node(node("s3", NodeKind::kSkill, {{1.0, 1.0}}));
  g.upsert_node(node("lone", NodeKind::kSkill, {{1.0, -1.0}}));
  for (const char* s : {"s1", "s2", "s3"}) {
    g.upsert_edge({"u", s, EdgeKind::kOwns, 1.0});
  }
  return g;
}

TEST(ExpandTwoHop, Examples) {
  const SkillGraph g = owner_toy();
  EXPECT_EQ(expand_two_hop(g, {"lone"}), std::vector<std::string>{"lone"});
  EXPECT_EQ(expand_two_hop(g, {"s1"}),
            (std::vector<std::string>{"s1", "s2", "s3"}));
  EXPECT_EQ(expand_two_hop(g, {"s3", "s1"}),
            (std::vector<std::string>{"s3", "s1", "s2"}));
}

TEST(ExpandTwoHop, NoDuplicates) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const SkillGraph g = random_graph(rng, 3, 12, 2);
    std::vector<std::string> cands{"skill0", "skill3", "skill0", "skill7"};
    const auto out = expand_two_hop(g, cands);
    std::set<std::string> uniq(out.begin(), out.end());
    EXPECT_EQ(uniq.size(), out.size());
    EXPECT_EQ(out[0], "skill0");
    EXPECT_EQ(out[1], "skill3");
    EXPECT_EQ(out[2], "skill7");
  }
}

TEST(ScoreSkill, DefaultWeightsFixture) {
  SkillGraph g;
  const std::vector<double> e{0.3, -1.7, 2.2};
  g.upsert_node(node("u", NodeKind::kUser, e));
  g.upsert_node(node("s", NodeKind::kSkill, e));
  g.upsert_edge({"u", "s", EdgeKind::kOwns, 1.0});
  const auto& ca = g.communities();
  const auto b = score_skill(g, e, "s", "u", ca, RetrievalConfig{});
  EXPECT_EQ(b.f_comm, 1.0);
  EXPECT_NEAR(b.score, 0.72, 1e-12);
}

TEST(ScoreSkill, ConflictSaturatesAndSemanticGate) {
  SkillGraph g = owner_toy();
  g.upsert_node(node("x", NodeKind::kSkill, {{0.5, 0.5}}));
  g.upsert_node(node("y", NodeKind::kSkill, {{0.2, 0.5}}));
  g.upsert_edge({"s1", "x", EdgeKind::kConflict, 0.8});
  g.upsert_edge({"y", "s1", EdgeKind::kConflict, 0.9});
  const CommunityAssignment none;  // nothing assigned: f_comm = 0
  const std::vector<double> q{1.0, 0.0};
  const auto b = score_skill(g, q, "s1", "u", none, RetrievalConfig{});
  EXPECT_EQ(b.f_conf, 1.0);
  EXPECT_EQ(b.f_comm, 0.0);
  EXPECT_NEAR(b.score, 1.0 * (0.3 + 0.3 * 1.0) * 1.0 * 1.0 * 0.3, 1e-15);
  const std::vector<double> ortho{0.0, 1.0};
  EXPECT_EQ(score_skill(g, ortho, "s1", "u", none, RetrievalConfig{}).score,
            0.0);
  g.upsert_node(node("bare", NodeKind::kSkill));
  EXPECT_THROW(score_skill(g, q, "bare", "u", none, RetrievalConfig{}),
               std::invalid_argument);
}

TEST(ScoreSkill, MonotoneInEachFactor) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    SkillGraph g;
    const double angle = unif(rng) * 1.5;
    g.upsert_node(node("u", NodeKind::kUser, {{1.0, 0.0}}));
    g.upsert_node(node("s", NodeKind::kSkill, {{std::cos(angle), std::sin(angle)}}));
    g.upsert_node(node("o", NodeKind::kSkill, {{0.0, 1.0}}));
    const double comp = unif(rng), conf = unif(rng);
    g.upsert_edge({"s", "o", EdgeKind::kComplement, comp});
    g.upsert_edge({"o", "s", EdgeKind::kConflict, conf});
    const std::vector<double> q{1.0, 0.2};
    CommunityAssignment same{{{{"u", 0}, {"s", 0}, {"o", 1}}}, {0.0}, 0};
    CommunityAssignment diff{{{{"u", 0}, {"s", 1}, {"o", 1}}}, {0.0}, 0};
    const RetrievalConfig cfg;
    const double base = score_skill(g, q, "s", "u", diff, cfg).score;
    EXPECT_GE(score_skill(g, q, "s", "u", same, cfg).score, base);
    EXPECT_LE(score_skill(g, q, "s", "u", CommunityAssignment{}, cfg).score, base);

    SkillGraph more_comp = g, more_conf = g;
    more_comp.upsert_edge({"s", "o", EdgeKind::kComplement, std::min(1.0, comp + 0.1)});
    more_conf.upsert_edge({"o", "s", EdgeKind::kConflict, std::min(1.0, conf + 0.1)});
    EXPECT_GE(score_skill(more_comp, q, "s", "u", diff, cfg).score, base);
    EXPECT_LE(score_skill(more_conf, q, "s", "u", diff, cfg).score, base);

    // Closer user embedding raises f_user.
    SkillGraph closer = g;
    closer.upsert_node(node("u", NodeKind::kUser, {{std::cos(angle * 0.5),
                                                    std::sin(angle * 0.5)}}));
    EXPECT_GE(score_skill(closer, q, "s", "u", diff, cfg).score, base - 1e-15);
  }
}

TEST(Retrieve, EmptyAndSingle) {
  SkillGraph empty;
  EXPECT_TRUE(retrieve(empty, std::vector<double>{1.0}, "u", RetrievalConfig{})
                  .empty());
  SkillGraph g;
  g.upsert_node(node("u", NodeKind::kUser, {{1.0, 0.0}}));
  g.upsert_node(node("s", NodeKind::kSkill, {{1.0, 1.0}}));
  const std::vector<double> q{1.0, 0.0};
  const auto r = retrieve(g, q, "u", RetrievalConfig{});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].skill, "s");
  EXPECT_EQ(r[0].score,
            score_skill(g, q, "s", "u", g.communities(), RetrievalConfig{}).score);
  EXPECT_THROW(retrieve(g, q, "nobody", RetrievalConfig{}), std::out_of_range);
  EXPECT_THROW(retrieve(g, q, "s", RetrievalConfig{}), std::out_of_range);
}

TEST(Retrieve, SiblingOutranksSemanticCandidate) {
  SkillGraph g;
  g.upsert_node(node("me", NodeKind::kUser, {{0.0, 1.0, 0.0}}));
  g.upsert_node(node("other", NodeKind::kUser, {{0.0, 0.0, 1.0}}));
  g.upsert_node(node("s_query", NodeKind::kSkill, {{1.0, 0.0, 0.0}}));
  g.upsert_node(node("s_sib", NodeKind::kSkill, {{0.6, 0.8, 0.0}}));
  g.upsert_node(node("s_far", NodeKind::kSkill, {{0.0, 0.0, 1.0}}));
  g.upsert_node(node("s_b", NodeKind::kSkill, {{0.7, 0.0, 0.7}}));
  g.upsert_node(node("s_c", NodeKind::kSkill, {{0.5, -0.5, 0.5}}));
  g.upsert_node(node("s_d", NodeKind::kSkill, {{0.1, 0.0, -1.0}}));
  g.upsert_edge({"other", "s_query", EdgeKind::kOwns, 1.0});
  g.upsert_edge({"other", "s_sib", EdgeKind::kOwns, 1.0});
  g.upsert_edge({"me", "s_far", EdgeKind::kOwns, 1.0});
  RetrievalConfig cfg;
  cfg.top_m = 1;
  const std::vector<double> q{1.0, 0.0, 0.0};
  const auto r = retrieve(g, q, "me", cfg);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].skill, "s_sib");  // reached only through the owner
  EXPECT_EQ(r[1].skill, "s_query");

  // Brute force over every skill agrees on the relative order of the two.
  const auto& ca = g.communities();
  std::vector<RankedSkill> all;
  for (const auto& [id, n] : g.nodes()) {
    if (n.kind == NodeKind::kSkill) {
      all.push_back({id, score_skill(g, q, id, "me", ca, cfg).score});
    }
  }
  auto score_of = [&](const std::string& id) {
    return std::find_if(all.begin(), all.end(),
                        [&](const auto& x) { return x.skill == id; })
        ->score;
  };
  EXPECT_GT(score_of("s_sib"), score_of("s_query"));
  EXPECT_EQ(score_of("s_sib"), r[0].score);
}

TEST(Retrieve, EqualsBruteForceWhenTopMCoversAllSkills) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 60; ++t) {
    const int skills = 1 + t % 50;
    SkillGraph g = random_graph(rng, 1 + t % 6, skills, 4);
    RetrievalConfig cfg;
    cfg.top_m = skills;
    cfg.top_k = 1 + t % 8;
    const std::vector<double> q{n(rng), n(rng), n(rng), n(rng)};
    const std::string user = "user0";
    const auto got = retrieve(g, q, user, cfg);

    const auto& ca = g.communities();
    std::vector<RankedSkill> brute;
    for (const auto& [id, nd] : g.nodes()) {
      if (nd.kind == NodeKind::kSkill) {
        brute.push_back({id, score_skill(g, q, id, user, ca, cfg).score});
      }
    }
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      return a.score != b.score ? a.score > b.score : a.skill < b.skill;
    });
    brute.resize(std::min<std::size_t>(brute.size(), cfg.top_k));
    EXPECT_EQ(got, brute) << "trial " << t;
  }
}

TEST(Serialization, EmptyRoundTrip) {
  SkillGraph g;
  std::stringstream s;
  g.save(s);
  const SkillGraph back = SkillGraph::load(s);
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back, g);
}

SkillGraph all_kinds_graph() {
  SkillGraph g;
  g.upsert_node({"u", NodeKind::kUser, std::vector<double>{0.1, 1e-300}, "likes tea"});
  g.upsert_node({"s", NodeKind::kSkill, std::vector<double>{1.0 / 3.0, -2.5}, ""});
  g.upsert_node({"s2", NodeKind::kSkill, std::vector<double>{0.7, 0.2}, "x\"y"});
  g.upsert_node({"t", NodeKind::kTool, std::nullopt, "calc"});
  g.upsert_node({"sc", NodeKind::kScenario, std::nullopt, "travel"});
  g.upsert_node({"tr", NodeKind::kTrajectory, std::nullopt, "run 1"});
  g.upsert_edge({"u", "s", EdgeKind::kOwns, 1.0});
  g.upsert_edge({"s", "t", EdgeKind::kApplicability, 0.1});
  g.upsert_edge({"s", "s2", EdgeKind::kComplement, 0.3});
  g.upsert_edge({"s2", "s", EdgeKind::kConflict, 0.7});
  g.upsert_edge({"tr", "s", EdgeKind::kExecutionHistory, 0.123456789012345});
  g.upsert_edge({"sc", "s2", EdgeKind::kScenarioTrigger, 0.0});
  return g;
}

TEST(Serialization, AllKindsRoundTripExactly) {
  SkillGraph g = all_kinds_graph();
  g.communities();
  std::stringstream s;
  g.save(s);
  const std::string text = s.str();
  const SkillGraph back = SkillGraph::load(s);
  EXPECT_EQ(back, g);
  std::ostringstream again;
  back.save(again);
  EXPECT_EQ(again.str(), text);

  SkillGraph stale = all_kinds_graph();  // no cached communities
  std::stringstream s2;
  stale.save(s2);
  EXPECT_EQ(SkillGraph::load(s2), stale);
}

TEST(Serialization, TruncatedOrMalformedStreams) {
  SkillGraph g = all_kinds_graph();
  g.communities();
  std::ostringstream s;
  g.save(s);
  const std::string text = s.str();
  for (std::size_t cut : {std::size_t{0}, text.size() / 3, text.size() / 2,
                          text.size() - 3}) {
    std::istringstream in(text.substr(0, cut));
    EXPECT_THROW(SkillGraph::load(in), FormatError) << cut;
  }
  std::string dangling = text;
  dangling.replace(dangling.find("\"dst\": \"t\""), 10, "\"dst\": \"q\"");
  std::istringstream in(dangling);
  EXPECT_THROW(SkillGraph::load(in), FormatError);
}

TEST(Records, BuildGraphFromLines) {
  std::istringstream in(
      "# demo\n"
      "node alice user prefers short trips\n"
      "node s1 skill\n"
      "embedding alice 1 0\n"
      "embedding s1 0.5 0.5\n"
      "edge alice s1 owns 1\n");
  SkillGraph g;
  g.apply_records(in);
  EXPECT_EQ(g.find_node("alice")->payload, "prefers short trips");
  EXPECT_EQ(*g.find_node("s1")->embedding, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(g.owned_by("alice"), std::vector<std::string>{"s1"});

  std::istringstream bad("edge alice nobody owns 1\n");
  EXPECT_THROW(g.apply_records(bad), FormatError);
  std::istringstream bad_kind("node x robot\n");
  EXPECT_THROW(g.apply_records(bad_kind), FormatError);
}

}  // namespace
}  // namespace parpo::graph
