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

// Typed skill memory graph: users own skills, skills relate to tools,
// scenarios and trajectories. Provides hierarchical community detection and
// two-stage (semantic, then owner-sibling) retrieval with a multiplicative
// graph-aware score.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace parpo::graph {

enum class NodeKind { kUser, kSkill, kTool, kScenario, kTrajectory };
enum class EdgeKind {
  kOwns,
  kApplicability,
  kComplement,
  kConflict,
  kExecutionHistory,
  kScenarioTrigger,
};

std::string_view to_string(NodeKind kind);
std::string_view to_string(EdgeKind kind);
NodeKind parse_node_kind(std::string_view s);
EdgeKind parse_edge_kind(std::string_view s);

struct GraphNode {
  std::string id;
  NodeKind kind = NodeKind::kSkill;
  std::optional<std::vector<double>> embedding;
  std::string payload;
  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  std::string src;
  std::string dst;
  EdgeKind kind = EdgeKind::kOwns;
  double weight = 1.0;  // in [0, 1]
  bool operator==(const GraphEdge&) const = default;
};

using EdgeKey = std::tuple<std::string, std::string, EdgeKind>;
using Partition = std::map<std::string, int>;

struct CommunityAssignment {
  std::vector<Partition> levels;  // level 0 finest
  std::vector<double> modularity;  // Q per level
  int selected_level = 0;

  /// Community of `id` at the selected level.
  std::optional<int> community_of(const std::string& id) const;
  bool operator==(const CommunityAssignment&) const = default;
};

struct RetrievalConfig {
  int top_m = 10;
  double alpha = 0.3;
  double beta = 0.3;
  double gamma = 0.2;
  double delta = 0.7;
  double kappa = 0.1;
  int top_k = 5;
  void validate() const;
};

class SkillGraph {
 public:
  /// Insert or replace. Identical records leave the revision unchanged; any
  /// change bumps it and marks communities stale. A node's kind is fixed
  /// once inserted.
  std::uint64_t upsert_node(GraphNode node);
  /// Endpoints must exist; Owns edges run User -> Skill; no self-loops.
  std::uint64_t upsert_edge(GraphEdge edge);

  std::uint64_t revision() const { return revision_; }
  bool stale() const { return stale_; }
  std::optional<std::size_t> embedding_dim() const { return dim_; }

  const GraphNode* find_node(const std::string& id) const;
  const std::map<std::string, GraphNode>& nodes() const { return nodes_; }
  const std::map<EdgeKey, GraphEdge>& edges() const { return edges_; }
  bool empty() const { return nodes_.empty(); }

  /// Sources of the Owns edges pointing at `skill`, ascending.
  std::vector<std::string> owners_of(const std::string& skill) const;
  /// Targets of the Owns edges leaving `user`, ascending.
  std::vector<std::string> owned_by(const std::string& user) const;
  /// Summed weight of edges of `kind` touching `id` in either direction.
  double incident_weight(const std::string& id, EdgeKind kind) const;

  /// Cached assignment, recomputed when stale.
  const CommunityAssignment& communities();
  /// Cached assignment without recomputation (may be stale or absent).
  const std::optional<CommunityAssignment>& cached_communities() const {
    return communities_;
  }

  void save(std::ostream& out) const;
  /// Throws FormatError on malformed input; nothing is returned partially.
  static SkillGraph load(std::istream& in);

  /// Applies line records: "node <id> <kind> [payload...]",
  /// "embedding <id> <v1> ... <vd>", "edge <src> <dst> <kind> <weight>".
  /// Blank lines and '#' comments are ignored.
  void apply_records(std::istream& in);

  bool operator==(const SkillGraph& o) const;

 private:
  std::map<std::string, GraphNode> nodes_;
  std::map<EdgeKey, GraphEdge> edges_;
  std::optional<std::size_t> dim_;
  std::uint64_t revision_ = 0;
  bool stale_ = true;
  std::optional<CommunityAssignment> communities_;
};

/// Modularity on the undirected projection (all edge kinds, parallel edges
/// summed). The partition must cover every node. Zero when the graph has no
/// edge weight.
double modularity(const SkillGraph& graph, const Partition& partition);

/// Deterministic hierarchical Louvain over nodes in id order. The selected
/// level is the coarsest with at least two communities, else level 0.
CommunityAssignment detect_communities(const SkillGraph& graph);

/// Embedded skills ranked by cosine with the query (ties by id), first M.
std::vector<std::string> semantic_topm(const SkillGraph& graph,
                                       std::span<const double> query,
                                       const RetrievalConfig& cfg);

/// Candidates followed by their owners' other skills (ascending id), without
/// duplicates.
std::vector<std::string> expand_two_hop(const SkillGraph& graph,
                                        const std::vector<std::string>& candidates);

struct ScoreBreakdown {
  double f_sem = 0.0;
  double f_user = 0.0;
  double f_comm = 0.0;
  double f_comp = 1.0;
  double f_conf = 0.0;
  double score = 0.0;
};

ScoreBreakdown score_skill(const SkillGraph& graph, std::span<const double> query,
                           const std::string& skill, const std::string& user,
                           const CommunityAssignment& communities,
                           const RetrievalConfig& cfg);

struct RankedSkill {
  std::string skill;
  double score = 0.0;
  bool operator==(const RankedSkill&) const = default;
};

/// Read-only retrieval against a given community assignment. Candidates
/// without an embedding are skipped.
std::vector<RankedSkill> retrieve(const SkillGraph& graph,
                                  std::span<const double> query,
                                  const std::string& user,
                                  const CommunityAssignment& communities,
                                  const RetrievalConfig& cfg);

/// Recomputes communities first when stale.
std::vector<RankedSkill> retrieve(SkillGraph& graph, std::span<const double> query,
                                  const std::string& user,
                                  const RetrievalConfig& cfg);

}  // namespace parpo::graph
