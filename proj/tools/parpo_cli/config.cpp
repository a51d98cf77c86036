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


#include "parpo_cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <cstdint>
#include <limits>
#include <set>
#include <nlohmann/json.hpp>

#include "parpo/common/file_io.hpp"

namespace parpo::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads the keys of one object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        fail(key, "integer out of range");
      }
      out = static_cast<int>(x);
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, advantage::EstimatorKind& out) {
    std::string name = advantage::to_string(out);
    read(key, name);
    out = parse_kind(key, name);
  }

  void read(const std::string& key, std::vector<advantage::EstimatorKind>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "expected a list of optimizer names");
      out.clear();
      for (const auto& item : *v) {
        if (!item.is_string()) fail(key, "expected a list of optimizer names");
        out.push_back(parse_kind(key, item.get<std::string>()));
      }
    }
  }

  /// Nested section, or nullptr when absent.
  std::optional<Section> child(const std::string& key) {
    if (const json* v = take(key)) return Section(*v, field(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(key, "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw UsageError("config field '" + field(key) + "': " + what);
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  advantage::EstimatorKind parse_kind(const std::string& key,
                                      const std::string& name) const {
    if (auto k = advantage::parse_estimator_kind(name)) return *k;
    fail(key, "unknown optimizer '" + name + "' (valid: parpo, grpo, noanchor)");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_env(Section s, sim::EnvConfig& e) {
  s.read("alpha_mix", e.alpha_mix);
  s.read("noise_std", e.noise_std);
  s.read("heterogeneity_level", e.heterogeneity_level);
  s.read("population_size", e.population_size);
  s.read("query_count", e.query_count);
  s.read("candidate_count", e.candidate_count);
  s.read("feature_dim", e.feature_dim);
  s.finish();
}

void read_advantage(Section s, sim::TrainConfig& t) {
  s.read("w_base", t.adv.w_base);
  s.read("w_pers", t.adv.w_pers);
  s.read("epsilon", t.adv.epsilon);
  s.read("clip", t.adv.clip);
  s.read("anchor_decay", t.anchor_decay);
  s.read("margin_coeff", t.margin_coeff);
  s.finish();
}

void read_train(Section s, RunConfig& c) {
  s.read("optimizer", c.train.kind);
  s.read("steps", c.train.steps);
  s.read("step_size", c.train.step_size);
  s.read("group_size", c.train.group_size);
  s.read("shared_policy", c.shared_policy);
  s.finish();
}

void read_retrieval(Section s, graph::RetrievalConfig& r) {
  s.read("top_m", r.top_m);
  s.read("alpha", r.alpha);
  s.read("beta", r.beta);
  s.read("gamma", r.gamma);
  s.read("delta", r.delta);
  s.read("kappa", r.kappa);
  s.read("top_k", r.top_k);
  s.finish();
}

void read_reward_model(Section s, RewardModelSection& m) {
  s.read("interactions", m.interactions);
  s.read("interactions_per_user", m.interactions_per_user);
  s.read("dim", m.dim);
  s.read("layers", m.layers);
  s.read("steps", m.steps);
  s.read("step_size", m.step_size);
  s.read("init_scale", m.init_scale);
  s.read("tau", m.tau);
  if (auto w = s.child("weights")) {
    w->read("interest", m.weights.interest);
    w->read("conformity", m.weights.conformity);
    w->read("orth", m.weights.orth);
    w->read("user", m.weights.user);
    w->read("reg", m.weights.reg);
    w->read("align", m.weights.align);
    w->finish();
  }
  s.finish();
}

// Runs a library validator and tags its message with the section name.
template <typename Fn>
void checked(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError("config section '" + section + "': " + e.what());
  }
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw UsageError("config field '" + field + "': " + what);
}

}  // namespace

void RunConfig::validate() const {
  checked("env", [&] { env.validate(); });
  checked("train", [&] { train.validate(); });
  checked("retrieval", [&] { retrieval.validate(); });
  require(!output_dir.empty(), "output_dir", "must not be empty");
  require(compare.optimizers.size() >= 2, "compare.optimizers",
          "need at least two optimizers");
  require(compare.trials >= 1, "compare.trials", "must be >= 1");
  require(verify.warm_batches >= 1, "verify.warm_batches", "must be >= 1");
  require(verify.groups >= 1, "verify.groups", "must be >= 1");
  require(std::isfinite(verify.anchor_shift_sigma), "verify.anchor_shift_sigma",
          "must be finite");
  const auto& m = reward_model;
  require(m.interactions_per_user >= 1, "reward_model.interactions_per_user",
          "must be >= 1");
  require(m.dim >= 1, "reward_model.dim", "must be >= 1");
  require(m.layers >= 0, "reward_model.layers", "must be >= 0");
  require(m.steps >= 0, "reward_model.steps", "must be >= 0");
  require(m.step_size >= 0.0 && std::isfinite(m.step_size),
          "reward_model.step_size", "must be >= 0");
  require(m.init_scale > 0.0 && std::isfinite(m.init_scale),
          "reward_model.init_scale", "must be > 0");
  require(m.tau > 0.0 && std::isfinite(m.tau), "reward_model.tau", "must be > 0");
  for (double w : {m.weights.interest, m.weights.conformity, m.weights.orth,
                   m.weights.user, m.weights.reg, m.weights.align}) {
    require(w >= 0.0 && std::isfinite(w), "reward_model.weights",
            "weights must be finite and >= 0");
  }
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line and column.
    const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1,
                                                  text.size());
    const std::size_t line =
        1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + at, '\n'));
    const std::size_t bol = text.rfind('\n', at == 0 ? 0 : at - 1);
    const std::size_t col = bol == std::string::npos ? at + 1 : at - bol;
    throw UsageError("config syntax error at line " + std::to_string(line) +
                     ", column " + std::to_string(col));
  }
  RunConfig c;
  Section root(doc, "");
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  if (auto s = root.child("env")) read_env(*s, c.env);
  if (auto s = root.child("advantage")) read_advantage(*s, c.train);
  if (auto s = root.child("train")) read_train(*s, c);
  if (auto s = root.child("compare")) {
    s->read("optimizers", c.compare.optimizers);
    s->read("trials", c.compare.trials);
    s->finish();
  }
  if (auto s = root.child("verify")) {
    s->read("warm_batches", c.verify.warm_batches);
    s->read("groups", c.verify.groups);
    s->read("anchor_shift_sigma", c.verify.anchor_shift_sigma);
    s->finish();
  }
  if (auto s = root.child("retrieval")) read_retrieval(*s, c.retrieval);
  if (auto s = root.child("reward_model")) read_reward_model(*s, c.reward_model);
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  return parse_config(text);
}

std::string resolved_config_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["env"] = {{"alpha_mix", c.env.alpha_mix},
              {"noise_std", c.env.noise_std},
              {"heterogeneity_level", c.env.heterogeneity_level},
              {"population_size", c.env.population_size},
              {"query_count", c.env.query_count},
              {"candidate_count", c.env.candidate_count},
              {"feature_dim", c.env.feature_dim}};
  j["advantage"] = {{"w_base", c.train.adv.w_base},
                    {"w_pers", c.train.adv.w_pers},
                    {"epsilon", c.train.adv.epsilon},
                    {"clip", c.train.adv.clip},
                    {"anchor_decay", c.train.anchor_decay},
                    {"margin_coeff", c.train.margin_coeff}};
  j["train"] = {{"optimizer", advantage::to_string(c.train.kind)},
                {"steps", c.train.steps},
                {"step_size", c.train.step_size},
                {"group_size", c.train.group_size},
                {"shared_policy", c.shared_policy}};
  ordered_json kinds = ordered_json::array();
  for (auto k : c.compare.optimizers) kinds.push_back(advantage::to_string(k));
  j["compare"] = {{"optimizers", kinds}, {"trials", c.compare.trials}};
  j["verify"] = {{"warm_batches", c.verify.warm_batches},
                 {"groups", c.verify.groups},
                 {"anchor_shift_sigma", c.verify.anchor_shift_sigma}};
  j["retrieval"] = {{"top_m", c.retrieval.top_m}, {"alpha", c.retrieval.alpha},
                    {"beta", c.retrieval.beta},   {"gamma", c.retrieval.gamma},
                    {"delta", c.retrieval.delta}, {"kappa", c.retrieval.kappa},
                    {"top_k", c.retrieval.top_k}};
  const auto& m = c.reward_model;
  j["reward_model"] = {
      {"interactions", m.interactions},
      {"interactions_per_user", m.interactions_per_user},
      {"dim", m.dim},
      {"layers", m.layers},
      {"steps", m.steps},
      {"step_size", m.step_size},
      {"init_scale", m.init_scale},
      {"tau", m.tau},
      {"weights",
       {{"interest", m.weights.interest},
        {"conformity", m.weights.conformity},
        {"orth", m.weights.orth},
        {"user", m.weights.user},
        {"reg", m.weights.reg},
        {"align", m.weights.align}}}};
  return j.dump(2) + "\n";
}

}  // namespace parpo::cli
