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

#include "parpo/reward_model/cf_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include "parpo/common/text_format.hpp"

namespace parpo::reward {

namespace {

constexpr const char* kModelMagic = "parpo-cf-model";
constexpr int kModelVersion = 1;

int lookup(const std::vector<std::string>& ids, const std::string& id,
           const char* what) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) {
    throw std::out_of_range(std::string("unknown ") + what + " '" + id + "'");
  }
  return static_cast<int>(it - ids.begin());
}

bool has_space(const std::string& s) {
  return s.empty() || s.find_first_of(" \t\r\n") != std::string::npos;
}

// Next non-empty line split into whitespace tokens.
std::vector<std::string> next_tokens(std::istream& in, const char* context) {
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) return {toks.begin(), toks.end()};
  }
  throw FormatError(std::string("unexpected end of input reading ") + context);
}

void expect_key(const std::vector<std::string>& toks, const char* key,
                std::size_t n_values) {
  if (toks.empty() || toks[0] != key || toks.size() != n_values + 1) {
    throw FormatError(std::string("expected '") + key + "' line with " +
                      std::to_string(n_values) + " values");
  }
}

int to_int(const std::string& s) {
  const auto v = parse_uint(s);
  if (v > 1'000'000'000ULL) throw FormatError("count out of range: " + s);
  return static_cast<int>(v);
}

void write_matrix(std::ostream& out, const char* name, const MatrixXd& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ' ';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

MatrixXd read_matrix(std::istream& in, const char* name) {
  const auto head = next_tokens(in, name);
  expect_key(head, "tensor", 3);
  if (head[1] != name) {
    throw FormatError(std::string("expected tensor '") + name + "', found '" +
                      head[1] + "'");
  }
  const int rows = to_int(head[2]);
  const int cols = to_int(head[3]);
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto toks = next_tokens(in, name);
    if (static_cast<int>(toks.size()) != cols) {
      throw FormatError(std::string("tensor '") + name + "' row " +
                        std::to_string(r) + " has wrong width");
    }
    for (int c = 0; c < cols; ++c) m(r, c) = parse_double(toks[c]);
  }
  return m;
}

void write_mlp(std::ostream& out, const std::string& prefix,
               const TwoLayerMlp& mlp) {
  write_matrix(out, (prefix + ".w1").c_str(), mlp.w1);
  write_matrix(out, (prefix + ".b1").c_str(), mlp.b1);
  write_matrix(out, (prefix + ".w2").c_str(), mlp.w2);
  write_matrix(out, (prefix + ".b2").c_str(), mlp.b2);
}

VectorXd read_vector(std::istream& in, const std::string& name) {
  MatrixXd m = read_matrix(in, name.c_str());
  if (m.cols() != 1) {
    throw FormatError("tensor '" + name + "' must be a column vector");
  }
  return m.col(0);
}

TwoLayerMlp read_mlp(std::istream& in, const std::string& prefix) {
  TwoLayerMlp mlp;
  mlp.w1 = read_matrix(in, (prefix + ".w1").c_str());
  mlp.b1 = read_vector(in, prefix + ".b1");
  mlp.w2 = read_matrix(in, (prefix + ".w2").c_str());
  mlp.b2 = read_vector(in, prefix + ".b2");
  return mlp;
}

void check_mlp(const TwoLayerMlp& mlp, int in, int hidden, int out,
               const char* name) {
  if (mlp.w1.rows() != hidden || mlp.w1.cols() != in ||
      mlp.b1.size() != hidden || mlp.w2.rows() != out ||
      mlp.w2.cols() != hidden || mlp.b2.size() != out) {
    throw std::invalid_argument(std::string(name) + " has the wrong shape");
  }
}

}  // namespace

InteractionData InteractionData::from_records(
    const std::vector<Interaction>& records) {
  if (records.empty()) {
    throw std::invalid_argument("interaction log is empty");
  }
  std::set<std::string> users, items;
  for (const auto& r : records) {
    if (has_space(r.user_id) || has_space(r.item_id)) {
      throw std::invalid_argument(
          "user and item ids must be non-empty and contain no whitespace");
    }
    if (!std::isfinite(r.weight) || r.weight <= 0.0) {
      throw std::invalid_argument("interaction weight must be positive");
    }
    users.insert(r.user_id);
    items.insert(r.item_id);
  }
  InteractionData data;
  data.user_ids.assign(users.begin(), users.end());
  data.item_ids.assign(items.begin(), items.end());
  for (const auto& r : records) {
    data.edges.push_back(
        {data.user_index(r.user_id), data.item_index(r.item_id), r.weight});
  }
  return data;
}

InteractionData InteractionData::load(std::istream& in) {
  std::vector<Interaction> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::vector<std::string_view> fields;
    if (body.find(',') != std::string_view::npos) {
      for (auto f : split(body, ',')) fields.push_back(trim(f));
    } else {
      fields = tokenize(body);
    }
    if (records.empty() && !fields.empty() && fields[0] == "user_id") continue;
    if (fields.size() != 3) {
      throw FormatError("interactions line " + std::to_string(line_no) +
                        ": expected user_id, item_id, weight");
    }
    Interaction r{std::string(fields[0]), std::string(fields[1]), 0.0};
    try {
      r.weight = parse_double(fields[2]);
    } catch (const FormatError& e) {
      throw FormatError("interactions line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    records.push_back(std::move(r));
  }
  try {
    return from_records(records);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
}

void InteractionData::save(std::ostream& out) const {
  out << "user_id,item_id,weight\n";
  for (const auto& e : edges) {
    out << user_ids[e.user] << ',' << item_ids[e.item] << ','
        << format_double(e.weight) << '\n';
  }
}

int InteractionData::user_index(const std::string& id) const {
  return lookup(user_ids, id, "user");
}

int InteractionData::item_index(const std::string& id) const {
  return lookup(item_ids, id, "item");
}

SparseMatrixXd normalized_adjacency(
    int num_users, int num_items,
    const std::vector<std::pair<int, int>>& edges) {
  const int n = num_users + num_items;
  std::set<std::pair<int, int>> unique(edges.begin(), edges.end());
  std::vector<double> degree(n, 0.0);
  for (auto [u, i] : unique) {
    if (u < 0 || u >= num_users || i < 0 || i >= num_items) {
      throw std::out_of_range("interaction edge index out of range");
    }
    degree[u] += 1.0;
    degree[num_users + i] += 1.0;
  }
  std::vector<Eigen::Triplet<double>> trips;
  for (auto [u, i] : unique) {
    const int a = u;
    const int b = num_users + i;
    const double w = 1.0 / std::sqrt(degree[a] * degree[b]);
    trips.emplace_back(a, b, w);
    trips.emplace_back(b, a, w);
  }
  SparseMatrixXd adj(n, n);
  adj.setFromTriplets(trips.begin(), trips.end());
  return adj;
}

VectorXd item_popularity(const InteractionData& data) {
  VectorXd counts = VectorXd::Zero(data.num_items());
  for (const auto& e : data.edges) counts[e.item] += 1.0;
  const double lo = counts.minCoeff();
  const double hi = counts.maxCoeff();
  if (hi == lo) return VectorXd::Constant(data.num_items(), 0.5);
  return ((counts.array() - lo) / (hi - lo)).matrix();
}

void LossWeights::validate() const {
  for (double w : {interest, conformity, orth, user, reg, align}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and >= 0");
    }
  }
}

CFModel CFModel::create(const InteractionData& data, int dim, int layers,
                        std::uint64_t seed, double init_scale) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  if (layers < 0) throw std::invalid_argument("layers must be >= 0");
  if (data.edges.empty()) throw std::invalid_argument("no interactions");
  CFModel m;
  m.user_ids = data.user_ids;
  m.item_ids = data.item_ids;
  std::set<std::pair<int, int>> unique;
  for (const auto& e : data.edges) unique.emplace(e.user, e.item);
  m.edges.assign(unique.begin(), unique.end());
  m.layers = layers;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, init_scale);
  m.user_table.resize(data.num_users(), dim);
  m.item_table.resize(data.num_items(), dim);
  for (int i = 0; i < m.user_table.size(); ++i) m.user_table.data()[i] = n(rng);
  for (int i = 0; i < m.item_table.size(); ++i) m.item_table.data()[i] = n(rng);
  m.interest = TwoLayerMlp::random(dim, dim, dim, 1.0, rng);
  m.conformity = TwoLayerMlp::random(dim, dim, dim, 1.0, rng);
  m.branch_attn = TwoLayerMlp::random(2 * dim, dim, 2, 1.0, rng);
  m.action = TwoLayerMlp::random(dim, dim, dim, 1.0, rng);
  m.popularity = item_popularity(data);
  m.rebuild_adjacency();
  return m;
}

CFModel CFModel::zeros_like() const {
  CFModel z = *this;
  z.for_each_tensor([](auto& t) { t.setZero(); });
  return z;
}

void CFModel::rebuild_adjacency() {
  adjacency = normalized_adjacency(num_users(), num_items(), edges);
}

void CFModel::validate() const {
  const int d = dim();
  if (d < 1 || item_table.cols() != d) {
    throw std::invalid_argument("embedding tables disagree on dimension");
  }
  if (static_cast<int>(user_ids.size()) != num_users() ||
      static_cast<int>(item_ids.size()) != num_items()) {
    throw std::invalid_argument("id lists disagree with embedding tables");
  }
  if (layers < 0) throw std::invalid_argument("layers must be >= 0");
  check_mlp(interest, d, d, d, "interest encoder");
  check_mlp(conformity, d, d, d, "conformity encoder");
  check_mlp(branch_attn, 2 * d, d, 2, "branch attention");
  check_mlp(action, d, d, d, "action encoder");
  if (popularity.size() != num_items() || popularity.minCoeff() < 0.0 ||
      popularity.maxCoeff() > 1.0) {
    throw std::invalid_argument("popularity must hold one value in [0,1] per item");
  }
  if (item_text.size() != 0 &&
      (item_text.rows() != num_items() || item_text.cols() != d)) {
    throw std::invalid_argument("item text embeddings must be I x d");
  }
  if (!(tau > 0.0) || !(branch_temperature > 0.0) || !(omega_eps >= 0.0)) {
    throw std::invalid_argument("temperatures must be > 0");
  }
  weights.validate();
}

int CFModel::user_index(const std::string& id) const {
  return lookup(user_ids, id, "user");
}

void CFModel::save(std::ostream& out) const {
  validate();
  for (const auto& id : user_ids) {
    if (has_space(id)) throw std::invalid_argument("user id contains whitespace");
  }
  for (const auto& id : item_ids) {
    if (has_space(id)) throw std::invalid_argument("item id contains whitespace");
  }
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "dims " << num_users() << ' ' << num_items() << ' ' << dim() << ' '
      << layers << '\n';
  out << "hyper " << format_double(tau) << ' '
      << format_double(branch_temperature) << ' ' << format_double(omega_eps)
      << '\n';
  out << "weights " << format_double(weights.interest) << ' '
      << format_double(weights.conformity) << ' ' << format_double(weights.orth)
      << ' ' << format_double(weights.user) << ' ' << format_double(weights.reg)
      << ' ' << format_double(weights.align) << '\n';
  out << "users";
  for (const auto& id : user_ids) out << ' ' << id;
  out << "\nitems";
  for (const auto& id : item_ids) out << ' ' << id;
  out << "\nedges " << edges.size() << '\n';
  for (auto [u, i] : edges) out << u << ' ' << i << '\n';
  write_matrix(out, "user_table", user_table);
  write_matrix(out, "item_table", item_table);
  write_mlp(out, "interest", interest);
  write_mlp(out, "conformity", conformity);
  write_mlp(out, "branch_attn", branch_attn);
  write_mlp(out, "action", action);
  write_matrix(out, "popularity", popularity);
  write_matrix(out, "item_text", item_text);
}

CFModel CFModel::load(std::istream& in) {
  auto toks = next_tokens(in, "header");
  if (toks.size() != 2 || toks[0] != kModelMagic ||
      toks[1] != std::to_string(kModelVersion)) {
    throw FormatError("not a cf model file (bad header)");
  }
  CFModel m;
  toks = next_tokens(in, "dims");
  expect_key(toks, "dims", 4);
  const int n_users = to_int(toks[1]);
  const int n_items = to_int(toks[2]);
  m.layers = to_int(toks[4]);
  toks = next_tokens(in, "hyper");
  expect_key(toks, "hyper", 3);
  m.tau = parse_double(toks[1]);
  m.branch_temperature = parse_double(toks[2]);
  m.omega_eps = parse_double(toks[3]);
  toks = next_tokens(in, "weights");
  expect_key(toks, "weights", 6);
  m.weights = {parse_double(toks[1]), parse_double(toks[2]),
               parse_double(toks[3]), parse_double(toks[4]),
               parse_double(toks[5]), parse_double(toks[6])};
  toks = next_tokens(in, "users");
  expect_key(toks, "users", n_users);
  m.user_ids.assign(toks.begin() + 1, toks.end());
  toks = next_tokens(in, "items");
  expect_key(toks, "items", n_items);
  m.item_ids.assign(toks.begin() + 1, toks.end());
  if (!std::is_sorted(m.user_ids.begin(), m.user_ids.end()) ||
      !std::is_sorted(m.item_ids.begin(), m.item_ids.end())) {
    throw FormatError("id lists must be sorted");
  }
  toks = next_tokens(in, "edges");
  expect_key(toks, "edges", 1);
  const int n_edges = to_int(toks[1]);
  for (int e = 0; e < n_edges; ++e) {
    toks = next_tokens(in, "edge");
    if (toks.size() != 2) throw FormatError("edge line needs two indices");
    m.edges.emplace_back(to_int(toks[0]), to_int(toks[1]));
  }
  m.user_table = read_matrix(in, "user_table");
  m.item_table = read_matrix(in, "item_table");
  m.interest = read_mlp(in, "interest");
  m.conformity = read_mlp(in, "conformity");
  m.branch_attn = read_mlp(in, "branch_attn");
  m.action = read_mlp(in, "action");
  m.popularity = read_vector(in, "popularity");
  m.item_text = read_matrix(in, "item_text");
  if (m.user_table.rows() != n_users || m.item_table.rows() != n_items) {
    throw FormatError("embedding tables disagree with dims line");
  }
  try {
    m.validate();
    m.rebuild_adjacency();
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid cf model: ") + e.what());
  }
  return m;
}

Propagated lightgcn_propagate(const CFModel& model) {
  const int u = model.num_users();
  const int n = u + model.num_items();
  MatrixXd e0(n, model.dim());
  e0.topRows(u) = model.user_table;
  e0.bottomRows(model.num_items()) = model.item_table;
  if (model.layers > 0 &&
      (model.adjacency.rows() != n || model.adjacency.cols() != n)) {
    throw std::invalid_argument("adjacency does not match embedding tables");
  }
  // Running mean of the layer outputs; a fixed point stays bit-exact.
  MatrixXd acc = e0;
  MatrixXd cur = e0;
  for (int l = 1; l <= model.layers; ++l) {
    cur = model.adjacency * cur;
    acc += (cur - acc) / static_cast<double>(l + 1);
  }
  return {acc.topRows(u), acc.bottomRows(model.num_items())};
}

void RewardStats::validate() const {
  if (!std::isfinite(mu_int) || !std::isfinite(mu_conf) ||
      !(sigma_int > 0.0) || !(sigma_conf > 0.0) || !std::isfinite(sigma_int) ||
      !std::isfinite(sigma_conf)) {
    throw std::invalid_argument("reward stats need finite means and sigmas > 0");
  }
}

void RewardStats::save(std::ostream& out) const {
  validate();
  out << "parpo-reward-stats 1\n"
      << "interest " << format_double(mu_int) << ' ' << format_double(sigma_int)
      << '\n'
      << "conformity " << format_double(mu_conf) << ' '
      << format_double(sigma_conf) << '\n';
}

RewardStats RewardStats::load(std::istream& in) {
  auto toks = next_tokens(in, "header");
  if (toks.size() != 2 || toks[0] != "parpo-reward-stats" || toks[1] != "1") {
    throw FormatError("not a reward stats file (bad header)");
  }
  RewardStats s;
  toks = next_tokens(in, "interest");
  expect_key(toks, "interest", 2);
  s.mu_int = parse_double(toks[1]);
  s.sigma_int = parse_double(toks[2]);
  toks = next_tokens(in, "conformity");
  expect_key(toks, "conformity", 2);
  s.mu_conf = parse_double(toks[1]);
  s.sigma_conf = parse_double(toks[2]);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return s;
}

}  // namespace parpo::reward
