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

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include "parpo/common/text_format.hpp"

namespace parpo::graph {

namespace {

constexpr const char* kFormatName = "parpo-skill-graph";
constexpr int kFormatVersion = 1;
constexpr double kGainTolerance = 1e-12;
constexpr int kMaxPasses = 1000;

constexpr std::string_view kNodeKindNames[] = {"user", "skill", "tool",
                                               "scenario", "trajectory"};
constexpr std::string_view kEdgeKindNames[] = {
    "owns",     "applicability",     "complement",
    "conflict", "execution_history", "scenario_trigger"};

// Undirected weighted projection indexed by sorted node id.
struct WeightedGraph {
  std::vector<std::string> ids;
  std::vector<std::vector<std::pair<int, double>>> adj;  // j != i
  std::vector<double> self;                              // A_ii
  std::vector<double> degree;
  double two_m = 0.0;

  int size() const { return static_cast<int>(adj.size()); }

  void finish() {
    degree.assign(adj.size(), 0.0);
    two_m = 0.0;
    for (std::size_t i = 0; i < adj.size(); ++i) {
      degree[i] = self[i];
      for (auto [j, a] : adj[i]) degree[i] += a;
      two_m += degree[i];
    }
  }
};

WeightedGraph project(const SkillGraph& g) {
  WeightedGraph w;
  std::map<std::string, int> index;
  for (const auto& [id, node] : g.nodes()) {
    index.emplace(id, static_cast<int>(w.ids.size()));
    w.ids.push_back(id);
  }
  std::map<std::pair<int, int>, double> summed;
  for (const auto& [key, e] : g.edges()) {
    int a = index.at(e.src);
    int b = index.at(e.dst);
    if (a > b) std::swap(a, b);
    summed[{a, b}] += e.weight;
  }
  w.adj.resize(w.ids.size());
  w.self.assign(w.ids.size(), 0.0);
  for (auto [ab, weight] : summed) {
    w.adj[ab.first].emplace_back(ab.second, weight);
    w.adj[ab.second].emplace_back(ab.first, weight);
  }
  w.finish();
  return w;
}

// Renumbers labels by first appearance.
int compact(std::vector<int>& labels) {
  std::map<int, int> remap;
  for (int& c : labels) {
    auto [it, inserted] = remap.emplace(c, static_cast<int>(remap.size()));
    c = it->second;
  }
  return static_cast<int>(remap.size());
}

// One local-moving phase. Returns true when any node changed community.
bool local_moves(const WeightedGraph& g, std::vector<int>& comm) {
  const int n = g.size();
  comm.resize(n);
  std::iota(comm.begin(), comm.end(), 0);
  if (g.two_m <= 0.0) return false;
  std::vector<double> tot = g.degree;
  bool any = false;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    bool moved = false;
    for (int i = 0; i < n; ++i) {
      const int ci = comm[i];
      const double ki = g.degree[i];
      std::map<int, double> links;
      for (auto [j, a] : g.adj[i]) links[comm[j]] += a;
      tot[ci] -= ki;
      int best = ci;
      double best_gain = links[ci] - tot[ci] * ki / g.two_m;
      for (auto [c, w] : links) {
        if (c == ci) continue;
        const double gain = w - tot[c] * ki / g.two_m;
        if (gain > best_gain + kGainTolerance) {
          best = c;
          best_gain = gain;
        }
      }
      tot[best] += ki;
      if (best != ci) {
        comm[i] = best;
        moved = true;
      }
    }
    if (!moved) break;
    any = true;
  }
  return any;
}

WeightedGraph aggregate(const WeightedGraph& g, const std::vector<int>& comm,
                        int n_comm) {
  WeightedGraph out;
  out.adj.resize(n_comm);
  out.self.assign(n_comm, 0.0);
  std::vector<std::map<int, double>> links(n_comm);
  for (int i = 0; i < g.size(); ++i) {
    const int ci = comm[i];
    out.self[ci] += g.self[i];
    for (auto [j, a] : g.adj[i]) {
      const int cj = comm[j];
      if (ci == cj) {
        out.self[ci] += a;
      } else {
        links[ci][cj] += a;
      }
    }
  }
  for (int c = 0; c < n_comm; ++c) {
    out.adj[c].assign(links[c].begin(), links[c].end());
  }
  out.finish();
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void check_query(const SkillGraph& g, std::span<const double> query) {
  const auto dim = g.embedding_dim();
  if (dim && query.size() != *dim) {
    throw std::invalid_argument("query dimension " +
                                std::to_string(query.size()) +
                                " does not match graph dimension " +
                                std::to_string(*dim));
  }
  for (double x : query) {
    if (!std::isfinite(x)) throw std::invalid_argument("query is not finite");
  }
}

const std::vector<double>& embedding_of(const SkillGraph& g,
                                        const std::string& id) {
  const GraphNode* n = g.find_node(id);
  if (n == nullptr) throw std::out_of_range("unknown node '" + id + "'");
  if (!n->embedding) {
    throw std::invalid_argument("node '" + id + "' has no embedding");
  }
  return *n->embedding;
}

}  // namespace

std::string_view to_string(NodeKind kind) {
  return kNodeKindNames[static_cast<int>(kind)];
}

std::string_view to_string(EdgeKind kind) {
  return kEdgeKindNames[static_cast<int>(kind)];
}

NodeKind parse_node_kind(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kNodeKindNames[i] == s) return static_cast<NodeKind>(i);
  }
  throw FormatError("unknown node kind '" + std::string(s) + "'");
}

EdgeKind parse_edge_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i) {
    if (kEdgeKindNames[i] == s) return static_cast<EdgeKind>(i);
  }
  throw FormatError("unknown edge kind '" + std::string(s) + "'");
}

std::optional<int> CommunityAssignment::community_of(
    const std::string& id) const {
  if (selected_level < 0 ||
      selected_level >= static_cast<int>(levels.size())) {
    return std::nullopt;
  }
  const auto& level = levels[selected_level];
  auto it = level.find(id);
  if (it == level.end()) return std::nullopt;
  return it->second;
}

void RetrievalConfig::validate() const {
  if (top_m < 1 || top_k < 1) {
    throw std::invalid_argument("top_m and top_k must be >= 1");
  }
  for (double x : {alpha, beta, gamma, kappa}) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument("retrieval weights must be finite");
    }
  }
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw std::invalid_argument("delta must lie in [0, 1]");
  }
  if (kappa < 0.0) throw std::invalid_argument("kappa must be >= 0");
}

std::uint64_t SkillGraph::upsert_node(GraphNode node) {
  if (node.id.empty() || node.id.find_first_of(" \t\r\n") != std::string::npos) {
    throw std::invalid_argument("node id must be non-empty without whitespace");
  }
  if (node.embedding) {
    if (node.embedding->empty()) {
      throw std::invalid_argument("embedding of '" + node.id + "' is empty");
    }
    for (double x : *node.embedding) {
      if (!std::isfinite(x)) {
        throw std::invalid_argument("embedding of '" + node.id +
                                    "' is not finite");
      }
    }
    if (dim_ && *dim_ != node.embedding->size()) {
      throw std::invalid_argument("embedding of '" + node.id + "' has dimension " +
                                  std::to_string(node.embedding->size()) +
                                  ", graph uses " + std::to_string(*dim_));
    }
  }
  auto it = nodes_.find(node.id);
  if (it != nodes_.end()) {
    if (it->second == node) return revision_;
    if (it->second.kind != node.kind) {
      throw std::invalid_argument("node '" + node.id + "' cannot change kind");
    }
  }
  if (node.embedding && !dim_) dim_ = node.embedding->size();
  nodes_[node.id] = std::move(node);
  stale_ = true;
  return ++revision_;
}

std::uint64_t SkillGraph::upsert_edge(GraphEdge edge) {
  const GraphNode* src = find_node(edge.src);
  const GraphNode* dst = find_node(edge.dst);
  if (src == nullptr || dst == nullptr) {
    throw std::invalid_argument("dangling edge endpoint: " + edge.src + " -> " +
                                edge.dst);
  }
  if (edge.src == edge.dst) {
    throw std::invalid_argument("self-loop edge on '" + edge.src + "'");
  }
  if (!(edge.weight >= 0.0 && edge.weight <= 1.0)) {
    throw std::invalid_argument("edge weight must lie in [0, 1]");
  }
  if (edge.kind == EdgeKind::kOwns &&
      (src->kind != NodeKind::kUser || dst->kind != NodeKind::kSkill)) {
    throw std::invalid_argument("owns edges must run from a user to a skill");
  }
  EdgeKey key{edge.src, edge.dst, edge.kind};
  auto it = edges_.find(key);
  if (it != edges_.end() && it->second == edge) return revision_;
  edges_[key] = std::move(edge);
  stale_ = true;
  return ++revision_;
}

const GraphNode* SkillGraph::find_node(const std::string& id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : &it->second;
}

std::vector<std::string> SkillGraph::owners_of(const std::string& skill) const {
  std::vector<std::string> out;
  for (const auto& [key, e] : edges_) {
    if (e.kind == EdgeKind::kOwns && e.dst == skill) out.push_back(e.src);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> SkillGraph::owned_by(const std::string& user) const {
  std::vector<std::string> out;
  auto it = edges_.lower_bound({user, std::string(), EdgeKind::kOwns});
  for (; it != edges_.end() && std::get<0>(it->first) == user; ++it) {
    if (it->second.kind == EdgeKind::kOwns) out.push_back(it->second.dst);
  }
  return out;
}

double SkillGraph::incident_weight(const std::string& id, EdgeKind kind) const {
  double sum = 0.0;
  for (const auto& [key, e] : edges_) {
    if (e.kind == kind && (e.src == id || e.dst == id)) sum += e.weight;
  }
  return sum;
}

const CommunityAssignment& SkillGraph::communities() {
  if (stale_ || !communities_) {
    communities_ = detect_communities(*this);
    stale_ = false;
  }
  return *communities_;
}

bool SkillGraph::operator==(const SkillGraph& o) const {
  return nodes_ == o.nodes_ && edges_ == o.edges_ && dim_ == o.dim_ &&
         revision_ == o.revision_ && stale_ == o.stale_ &&
         communities_ == o.communities_;
}

void SkillGraph::save(std::ostream& out) const {
  using nlohmann::json;
  json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["revision"] = revision_;
  j["stale"] = stale_;
  json nodes = json::array();
  json vectors = json::object();
  for (const auto& [id, n] : nodes_) {
    nodes.push_back({{"id", id},
                     {"kind", std::string(to_string(n.kind))},
                     {"payload", n.payload}});
    if (n.embedding) vectors[id] = *n.embedding;
  }
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& [key, e] : edges_) {
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"kind", std::string(to_string(e.kind))},
                     {"weight", e.weight}});
  }
  j["edges"] = std::move(edges);
  j["embeddings"] = {{"dim", dim_ ? json(*dim_) : json(nullptr)},
                     {"vectors", std::move(vectors)}};
  if (communities_) {
    json levels = json::array();
    for (const auto& level : communities_->levels) levels.push_back(level);
    j["communities"] = {{"levels", std::move(levels)},
                        {"modularity", communities_->modularity},
                        {"selected_level", communities_->selected_level}};
  } else {
    j["communities"] = nullptr;
  }
  out << j.dump(2) << '\n';
}

SkillGraph SkillGraph::load(std::istream& in) {
  using nlohmann::json;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != kFormatName ||
        j.at("version").get<int>() != kFormatVersion) {
      throw FormatError("not a skill graph file (format/version)");
    }
    SkillGraph g;
    const json& vectors = j.at("embeddings").at("vectors");
    for (const auto& n : j.at("nodes")) {
      GraphNode node;
      node.id = n.at("id").get<std::string>();
      node.kind = parse_node_kind(n.at("kind").get<std::string>());
      node.payload = n.at("payload").get<std::string>();
      if (vectors.contains(node.id)) {
        node.embedding = vectors.at(node.id).get<std::vector<double>>();
      }
      if (g.find_node(node.id) != nullptr) {
        throw FormatError("duplicate node '" + node.id + "'");
      }
      g.upsert_node(std::move(node));
    }
    for (const auto& [id, v] : vectors.items()) {
      if (g.find_node(id) == nullptr) {
        throw FormatError("embedding for unknown node '" + id + "'");
      }
    }
    const json& dim = j.at("embeddings").at("dim");
    if (!dim.is_null() && (!g.dim_ || dim.get<std::size_t>() != *g.dim_)) {
      throw FormatError("embedding dim does not match the vectors");
    }
    for (const auto& e : j.at("edges")) {
      GraphEdge edge;
      edge.src = e.at("src").get<std::string>();
      edge.dst = e.at("dst").get<std::string>();
      edge.kind = parse_edge_kind(e.at("kind").get<std::string>());
      edge.weight = e.at("weight").get<double>();
      if (g.edges_.count({edge.src, edge.dst, edge.kind})) {
        throw FormatError("duplicate edge " + edge.src + " -> " + edge.dst);
      }
      g.upsert_edge(std::move(edge));
    }
    const json& comm = j.at("communities");
    if (!comm.is_null()) {
      CommunityAssignment ca;
      for (const auto& level : comm.at("levels")) {
        Partition p = level.get<Partition>();
        if (p.size() != g.nodes_.size() ||
            !std::equal(p.begin(), p.end(), g.nodes_.begin(),
                        [](const auto& a, const auto& b) {
                          return a.first == b.first;
                        })) {
          throw FormatError("community level does not cover the node set");
        }
        ca.levels.push_back(std::move(p));
      }
      ca.modularity = comm.at("modularity").get<std::vector<double>>();
      ca.selected_level = comm.at("selected_level").get<int>();
      if (ca.modularity.size() != ca.levels.size() ||
          (!ca.levels.empty() &&
           (ca.selected_level < 0 ||
            ca.selected_level >= static_cast<int>(ca.levels.size())))) {
        throw FormatError("inconsistent community section");
      }
      g.communities_ = std::move(ca);
    }
    g.revision_ = j.at("revision").get<std::uint64_t>();
    g.stale_ = j.at("stale").get<bool>();
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed skill graph: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid skill graph: ") + e.what());
  }
}

void SkillGraph::apply_records(std::istream& in) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto toks = tokenize(body);
    const std::string where = "graph records line " + std::to_string(line_no);
    try {
      if (toks[0] == "node") {
        if (toks.size() < 3) throw FormatError("node needs <id> <kind>");
        GraphNode node;
        node.id = std::string(toks[1]);
        node.kind = parse_node_kind(toks[2]);
        if (toks.size() > 3) {
          const auto start = toks[3].data() - body.data();
          node.payload = std::string(body.substr(start));
        }
        if (const GraphNode* old = find_node(node.id)) {
          node.embedding = old->embedding;
        }
        upsert_node(std::move(node));
      } else if (toks[0] == "embedding") {
        if (toks.size() < 3) throw FormatError("embedding needs <id> <values>");
        const GraphNode* old = find_node(std::string(toks[1]));
        if (old == nullptr) {
          throw FormatError("embedding for unknown node '" +
                            std::string(toks[1]) + "'");
        }
        GraphNode node = *old;
        node.embedding.emplace();
        for (std::size_t i = 2; i < toks.size(); ++i) {
          node.embedding->push_back(parse_double(toks[i]));
        }
        upsert_node(std::move(node));
      } else if (toks[0] == "edge") {
        if (toks.size() != 5) {
          throw FormatError("edge needs <src> <dst> <kind> <weight>");
        }
        upsert_edge({std::string(toks[1]), std::string(toks[2]),
                     parse_edge_kind(toks[3]), parse_double(toks[4])});
      } else {
        throw FormatError("unknown record '" + std::string(toks[0]) + "'");
      }
    } catch (const std::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

double modularity(const SkillGraph& graph, const Partition& partition) {
  const WeightedGraph w = project(graph);
  std::vector<int> comm(w.size());
  for (int i = 0; i < w.size(); ++i) {
    auto it = partition.find(w.ids[i]);
    if (it == partition.end()) {
      throw std::invalid_argument("partition misses node '" + w.ids[i] + "'");
    }
    comm[i] = it->second;
  }
  if (w.two_m <= 0.0) return 0.0;
  std::map<int, double> in, tot;
  for (int i = 0; i < w.size(); ++i) {
    tot[comm[i]] += w.degree[i];
    in[comm[i]] += w.self[i];
    for (auto [j, a] : w.adj[i]) {
      if (comm[j] == comm[i]) in[comm[i]] += a;
    }
  }
  double q = 0.0;
  for (auto [c, t] : tot) {
    const double frac = t / w.two_m;
    q += in[c] / w.two_m - frac * frac;
  }
  return q;
}

CommunityAssignment detect_communities(const SkillGraph& graph) {
  const WeightedGraph base = project(graph);
  const int n = base.size();
  CommunityAssignment out;
  auto to_partition = [&](const std::vector<int>& labels) {
    Partition p;
    for (int i = 0; i < n; ++i) p.emplace(base.ids[i], labels[i]);
    return p;
  };

  std::vector<int> node_to_super(n);
  std::iota(node_to_super.begin(), node_to_super.end(), 0);
  WeightedGraph current = base;
  while (current.size() > 1) {
    std::vector<int> comm;
    if (!local_moves(current, comm)) break;
    const int n_comm = compact(comm);
    for (int& s : node_to_super) s = comm[s];
    out.levels.push_back(to_partition(node_to_super));
    out.modularity.push_back(modularity(graph, out.levels.back()));
    if (n_comm == current.size()) break;
    current = aggregate(current, comm, n_comm);
  }
  if (out.levels.empty()) {
    out.levels.push_back(to_partition(node_to_super));
    out.modularity.push_back(modularity(graph, out.levels.back()));
  }
  out.selected_level = 0;
  for (int l = static_cast<int>(out.levels.size()) - 1; l >= 0; --l) {
    std::set<int> ids;
    for (const auto& [id, c] : out.levels[l]) ids.insert(c);
    if (ids.size() >= 2) {
      out.selected_level = l;
      break;
    }
  }
  return out;
}

std::vector<std::string> semantic_topm(const SkillGraph& graph,
                                       std::span<const double> query,
                                       const RetrievalConfig& cfg) {
  cfg.validate();
  check_query(graph, query);
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [id, n] : graph.nodes()) {
    if (n.kind != NodeKind::kSkill || !n.embedding) continue;
    ranked.emplace_back(cosine(query, *n.embedding), id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0;
       i < ranked.size() && i < static_cast<std::size_t>(cfg.top_m); ++i) {
    out.push_back(ranked[i].second);
  }
  return out;
}

std::vector<std::string> expand_two_hop(
    const SkillGraph& graph, const std::vector<std::string>& candidates) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (seen.insert(c).second) out.push_back(c);
  }
  std::set<std::string> extra;
  for (const auto& c : candidates) {
    for (const auto& owner : graph.owners_of(c)) {
      for (const auto& sibling : graph.owned_by(owner)) {
        if (!seen.count(sibling)) extra.insert(sibling);
      }
    }
  }
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

ScoreBreakdown score_skill(const SkillGraph& graph,
                           std::span<const double> query,
                           const std::string& skill, const std::string& user,
                           const CommunityAssignment& communities,
                           const RetrievalConfig& cfg) {
  cfg.validate();
  check_query(graph, query);
  const auto& s = embedding_of(graph, skill);
  const auto& u = embedding_of(graph, user);
  ScoreBreakdown b;
  b.f_sem = cosine(query, s);
  b.f_user = cosine(u, s);
  const auto cu = communities.community_of(user);
  const auto cs = communities.community_of(skill);
  if (cu && cs) b.f_comm = (*cu == *cs) ? 1.0 : 0.3;
  b.f_comp = 1.0 + cfg.kappa * graph.incident_weight(skill, EdgeKind::kComplement);
  b.f_conf = std::min(graph.incident_weight(skill, EdgeKind::kConflict), 1.0);
  b.score = b.f_sem * (cfg.alpha + cfg.beta * b.f_user) *
            (1.0 + cfg.gamma * b.f_comm) * b.f_comp * (1.0 - cfg.delta * b.f_conf);
  return b;
}

std::vector<RankedSkill> retrieve(const SkillGraph& graph,
                                  std::span<const double> query,
                                  const std::string& user,
                                  const CommunityAssignment& communities,
                                  const RetrievalConfig& cfg) {
  cfg.validate();
  const bool has_skill = std::any_of(
      graph.nodes().begin(), graph.nodes().end(),
      [](const auto& kv) { return kv.second.kind == NodeKind::kSkill; });
  if (!has_skill) return {};
  const GraphNode* u = graph.find_node(user);
  if (u == nullptr || u->kind != NodeKind::kUser) {
    throw std::out_of_range("unknown user '" + user + "'");
  }
  const auto candidates = expand_two_hop(graph, semantic_topm(graph, query, cfg));
  std::vector<RankedSkill> ranked;
  for (const auto& s : candidates) {
    if (!graph.find_node(s)->embedding) continue;
    ranked.push_back(
        {s, score_skill(graph, query, s, user, communities, cfg).score});
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.skill < b.skill;
  });
  if (ranked.size() > static_cast<std::size_t>(cfg.top_k)) {
    ranked.resize(cfg.top_k);
  }
  return ranked;
}

std::vector<RankedSkill> retrieve(SkillGraph& graph,
                                  std::span<const double> query,
                                  const std::string& user,
                                  const RetrievalConfig& cfg) {
  if (graph.empty()) return {};
  const CommunityAssignment& c = graph.communities();
  return retrieve(static_cast<const SkillGraph&>(graph), query, user, c, cfg);
}

}  // namespace parpo::graph
