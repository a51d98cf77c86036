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


#include "parpo_cli/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "parpo/bias_oracle.hpp"
#include "parpo/common/file_io.hpp"
#include "parpo/common/seeding.hpp"
#include "parpo/common/text_format.hpp"

namespace parpo::cli {
namespace {

namespace fs = std::filesystem;
using advantage::EstimatorKind;

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

fs::path prepare_dir(const fs::path& dir) {
  fs::create_directories(dir);
  return dir;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  write_file_atomic(dir / "resolved_config.json", resolved_config_json(cfg));
}

sim::World make_world(const RunConfig& cfg) {
  sim::EnvConfig env = cfg.env;
  env.seed = derive_seed(cfg.seed, "world");
  return sim::generate_world(env);
}

std::string read_input(const fs::path& path) {
  try {
    return read_file(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

graph::SkillGraph load_graph(const fs::path& path) {
  std::istringstream in(read_input(path));
  return graph::SkillGraph::load(in);
}

// ---- verify-bounds -------------------------------------------------------

struct BoundRow {
  std::string check;
  std::string query;
  std::string user;
  std::string item;
  double lhs = 0.0;
  double rhs = 0.0;
  std::string relation;
  bool pass = true;
};

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * (1.0 + std::abs(b));
}

advantage::AnchorStore warm_anchors(const sim::World& world, const RunConfig& cfg) {
  advantage::AnchorStore store(cfg.train.anchor_decay, cfg.train.margin_coeff);
  const sim::PolicyTable uniform(world);
  std::mt19937_64 rng(derive_seed(cfg.seed, "verify"));
  std::uniform_int_distribution<int> pick(0, world.num_queries() - 1);
  for (int b = 0; b < cfg.verify.warm_batches; ++b) {
    const int q = pick(rng);
    for (int u = 0; u < world.num_users(); ++u) {
      const auto g = sim::rollout_group(uniform, world, u, q, cfg.train.group_size, rng);
      std::vector<double> pers;
      for (const auto& r : g) pers.push_back(r.record.reward_pers);
      advantage::update_anchor(store, world.users[u].id, pers);
    }
  }
  if (cfg.verify.anchor_shift_sigma != 0.0) {
    for (auto [id, a] : store.anchors()) {
      a.mean += cfg.verify.anchor_shift_sigma * std::sqrt(a.variance);
      store.set(id, a);
    }
  }
  return store;
}

std::vector<BoundRow> bound_rows(const sim::World& world, const RunConfig& cfg) {
  const double eps = cfg.train.adv.epsilon;
  const auto table = world.oracle_table();
  const auto anchors = warm_anchors(world, cfg);
  oracle::Grouping grouping;
  for (int u = 0; u < world.num_users(); ++u) {
    grouping[world.users[u].id] = "g" + std::to_string(u % cfg.verify.groups);
  }
  std::vector<BoundRow> rows;
  for (int q = 0; q < world.num_queries(); ++q) {
    const std::string& qid = world.queries[q].id;
    for (int a = 0; a < world.num_candidates(q); ++a) {
      for (int b = a + 1; b < world.num_candidates(q); ++b) {
        const auto z = sim::preference_probabilities(world, q, a, b);
        const auto gap = oracle::personalization_gap(z);
        const std::string pair = "c" + std::to_string(a) + "|c" + std::to_string(b);
        rows.push_back({"personalization_order", qid, "*", pair, gap.v_avg,
                        gap.v_pers, "<=", gap.v_avg <= gap.v_pers + 1e-12});
        rows.push_back({"personalization_gap", qid, "*", pair,
                        gap.v_pers - gap.v_avg, gap.delta, "==",
                        close(gap.v_pers - gap.v_avg, gap.delta, 1e-12)});
      }
    }
    for (int u = 0; u < world.num_users(); ++u) {
      for (int c = 0; c < world.num_candidates(q); ++c) {
        const auto t = oracle::grpo_bias_terms(table, u, q, c, eps);
        rows.push_back({"grpo_bias", qid, world.users[u].id, "c" + std::to_string(c),
                        t.total_error, t.baseline_term + t.scale_term, "<=", t.holds});
      }
    }
    const auto ar = oracle::anchor_bound_check(table, q, anchors, {}, eps);
    for (const auto& r : ar.users) {
      rows.push_back({"anchor_exact", qid, r.user, "*", r.observed_error,
                      r.exact_error, "==", close(r.observed_error, r.exact_error, 1e-10)});
      rows.push_back({"anchor_bound", qid, r.user, "*", r.observed_error, r.bound,
                      "<=", r.holds});
    }
    rows.push_back({"anchor_expectation", qid, "*", "*", ar.expected_error,
                    ar.expected_bound, "<=", ar.expectation_holds});
    const auto gr = oracle::group_bound_check(table, q, grouping, anchors, {}, eps);
    for (const auto& r : gr.users) {
      rows.push_back({"group_bound", qid, r.user, "*", r.error, r.bound, "<=", r.holds});
    }
    rows.push_back({"group_expectation", qid, "*", "*", gr.expected_error,
                    gr.expected_bound, "<=", gr.expectation_holds});
    if (gr.contraction_condition) {
      rows.push_back({"group_contraction", qid, "*", "*",
                      std::max(gr.expected_error, gr.expected_bound),
                      gr.grpo_dominant_bound, "<=", gr.contraction_holds});
    }
  }
  return rows;
}

// ---- train-rm ------------------------------------------------------------

struct RmInput {
  reward::InteractionData data;
  reward::MatrixXd item_text;  // empty when the items carry no features
};

RmInput rm_input(const RunConfig& cfg) {
  const auto& m = cfg.reward_model;
  RmInput in;
  if (!m.interactions.empty()) {
    std::istringstream s(read_input(m.interactions));
    in.data = reward::InteractionData::load(s);
    return in;
  }
  const sim::World world = make_world(cfg);
  std::vector<reward::Interaction> recs;
  for (const auto& x : sim::sample_interactions(
           world, m.interactions_per_user, derive_seed(cfg.seed, "interactions"))) {
    recs.push_back({x.user_id, x.item_id, 1.0});
  }
  in.data = reward::InteractionData::from_records(recs);
  if (m.dim == world.cfg.feature_dim) {
    // Item "q001:2" is candidate 2 of query q001; its features act as text.
    std::map<std::string, const std::vector<double>*> features;
    for (const auto& q : world.queries) {
      for (std::size_t c = 0; c < q.candidates.size(); ++c) {
        features[q.id + ":" + std::to_string(c)] = &q.candidates[c];
      }
    }
    in.item_text.resize(static_cast<Eigen::Index>(in.data.item_ids.size()), m.dim);
    for (std::size_t i = 0; i < in.data.item_ids.size(); ++i) {
      const auto& phi = *features.at(in.data.item_ids[i]);
      for (int k = 0; k < m.dim; ++k) in.item_text(static_cast<Eigen::Index>(i), k) = phi[k];
    }
  }
  return in;
}

}  // namespace

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  const sim::World world = make_world(cfg);
  const auto result = sim::train(world, sim::PolicyTable(world, cfg.shared_policy),
                                 cfg.train, derive_seed(cfg.seed, "train"));
  std::ostringstream world_csv, trace_csv;
  world.export_table(world_csv);
  sim::write_trace_csv(trace_csv, result.trace);
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_file_atomic(dir / "world.csv", world_csv.str());
  write_file_atomic(dir / "trace.csv", trace_csv.str());
  write_resolved(dir, cfg);
  const auto value = sim::expected_reward(world, result.policy);
  out << "simulate: optimizer=" << advantage::to_string(cfg.train.kind)
      << " steps=" << cfg.train.steps << " mean_reward=" << fixed(value.total)
      << " mean_pers_reward=" << fixed(value.pers) << "\n";
  return kExitOk;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
  sim::EnvConfig env = cfg.env;
  env.seed = derive_seed(cfg.seed, "world");
  const auto report = sim::compare_optimizers(env, cfg.train, cfg.compare.optimizers,
                                              cfg.compare.trials);
  std::ostringstream csv;
  csv << "trial,seed,optimizer,mean_adv_error,final_pers_reward,"
         "final_total_reward,anchor_drift\n";
  nlohmann::ordered_json j;
  j["trials"] = nlohmann::ordered_json::array();
  auto summary_json = [](const sim::OptimizerSummary& s) {
    nlohmann::ordered_json o;
    o["optimizer"] = s.optimizer;
    o["mean_adv_error"] = s.mean_adv_error;
    o["final_pers_reward"] = s.final_pers_reward;
    o["final_total_reward"] = s.final_total_reward;
    o["anchor_drift"] = s.anchor_drift ? nlohmann::ordered_json(*s.anchor_drift)
                                       : nlohmann::ordered_json(nullptr);
    return o;
  };
  for (const auto& t : report.trials) {
    nlohmann::ordered_json tj;
    tj["trial"] = t.trial;
    tj["seed"] = t.seed;
    tj["optimizers"] = nlohmann::ordered_json::array();
    for (const auto& s : t.optimizers) {
      csv << t.trial << ',' << t.seed << ',' << s.optimizer << ','
          << format_double(s.mean_adv_error) << ','
          << format_double(s.final_pers_reward) << ','
          << format_double(s.final_total_reward) << ','
          << (s.anchor_drift ? format_double(*s.anchor_drift) : "") << '\n';
      tj["optimizers"].push_back(summary_json(s));
    }
    j["trials"].push_back(std::move(tj));
  }
  j["mean"] = nlohmann::ordered_json::array();
  for (const auto& s : report.mean) j["mean"].push_back(summary_json(s));

  const fs::path dir = prepare_dir(cfg.output_dir);
  write_file_atomic(dir / "compare.csv", csv.str());
  write_file_atomic(dir / "compare.json", j.dump(2) + "\n");
  write_resolved(dir, cfg);
  out << "optimizer  mean_adv_error  final_pers_reward  final_total_reward\n";
  for (const auto& s : report.mean) {
    out << s.optimizer << std::string(11 - std::min<std::size_t>(10, s.optimizer.size()), ' ')
        << fixed(s.mean_adv_error) << "          " << fixed(s.final_pers_reward)
        << "             " << fixed(s.final_total_reward) << "\n";
  }
  return kExitOk;
}

int cmd_verify_bounds(const RunConfig& cfg, std::ostream& out) {
  const sim::World world = make_world(cfg);
  const auto rows = bound_rows(world, cfg);
  std::ostringstream csv;
  csv << "check,query,user,item,lhs,relation,rhs,pass\n";
  std::map<std::string, std::pair<int, int>> tally;  // check -> (passed, total)
  std::vector<std::string> order;
  bool all = true;
  for (const auto& r : rows) {
    csv << r.check << ',' << r.query << ',' << r.user << ',' << r.item << ','
        << format_double(r.lhs) << ',' << r.relation << ',' << format_double(r.rhs)
        << ',' << (r.pass ? "pass" : "FAIL") << '\n';
    auto [it, fresh] = tally.try_emplace(r.check, 0, 0);
    if (fresh) order.push_back(r.check);
    it->second.first += r.pass ? 1 : 0;
    it->second.second += 1;
    all = all && r.pass;
  }
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_file_atomic(dir / "bounds.csv", csv.str());
  write_resolved(dir, cfg);
  for (const auto& name : order) {
    const auto [passed, total] = tally[name];
    out << (passed == total ? "PASS " : "FAIL ") << name << ' ' << passed << '/'
        << total << "\n";
  }
  return all ? kExitOk : kExitFailure;
}

int cmd_train_rm(const RunConfig& cfg, std::ostream& out) {
  const auto& m = cfg.reward_model;
  RmInput input = rm_input(cfg);
  auto model = reward::CFModel::create(input.data, m.dim, m.layers,
                                       derive_seed(cfg.seed, "rm_init"), m.init_scale);
  model.tau = m.tau;
  model.weights = m.weights;
  model.item_text = input.item_text;
  const auto run = reward::train_stage2(model, m.steps, m.step_size,
                                        derive_seed(cfg.seed, "rm_train"));
  const auto stats =
      reward::compute_reward_stats(model, reward::lightgcn_propagate(model));

  std::ostringstream trace, model_txt, stats_txt;
  trace << "step,total,rec,interest,conformity,orth,user,reg,align\n";
  for (std::size_t i = 0; i < run.terms.size(); ++i) {
    const auto& t = run.terms[i];
    trace << i << ',' << format_double(t.total) << ',' << format_double(t.rec) << ','
          << format_double(t.interest) << ',' << format_double(t.conformity) << ','
          << format_double(t.orth) << ',' << format_double(t.user) << ','
          << format_double(t.reg) << ',' << format_double(t.align) << '\n';
  }
  model.save(model_txt);
  stats.save(stats_txt);
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_file_atomic(dir / "rm_trace.csv", trace.str());
  write_file_atomic(dir / "reward_model.txt", model_txt.str());
  write_file_atomic(dir / "reward_stats.txt", stats_txt.str());
  write_resolved(dir, cfg);
  out << "train-rm: gradient check max_rel_error="
      << format_double(run.probe_check.max_rel_error) << " initial_loss="
      << fixed(run.trace.front(), 6) << " final_loss=" << fixed(run.trace.back(), 6)
      << "\n";
  return kExitOk;
}

int cmd_graph_build(const fs::path& records, const fs::path& out_dir,
                    std::ostream& out) {
  graph::SkillGraph g;
  std::istringstream in(read_input(records));
  g.apply_records(in);
  g.communities();
  std::ostringstream json;
  g.save(json);
  const fs::path dir = prepare_dir(out_dir);
  write_file_atomic(dir / "graph.json", json.str());
  out << "graph: " << g.nodes().size() << " nodes, " << g.edges().size()
      << " edges\n";
  return kExitOk;
}

int cmd_graph_query(const fs::path& graph_file, const std::string& user,
                    const std::vector<double>& query,
                    const graph::RetrievalConfig& retrieval, const fs::path& out_dir,
                    std::ostream& out) {
  retrieval.validate();
  auto g = load_graph(graph_file);
  const auto ranked = graph::retrieve(g, query, user, retrieval);
  const auto& ca = g.communities();
  std::ostringstream csv;
  csv << "rank,skill,score,f_sem,f_user,f_comm,f_comp,f_conf\n";
  out << "rank skill score f_sem f_user f_comm f_comp f_conf\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto b = graph::score_skill(g, query, ranked[i].skill, user, ca, retrieval);
    out << i + 1 << ' ' << ranked[i].skill << ' ' << fixed(b.score) << ' '
        << fixed(b.f_sem) << ' ' << fixed(b.f_user) << ' ' << fixed(b.f_comm) << ' '
        << fixed(b.f_comp) << ' ' << fixed(b.f_conf) << "\n";
    csv << i + 1 << ',' << ranked[i].skill << ',' << format_double(b.score) << ','
        << format_double(b.f_sem) << ',' << format_double(b.f_user) << ','
        << format_double(b.f_comm) << ',' << format_double(b.f_comp) << ','
        << format_double(b.f_conf) << '\n';
  }
  if (!out_dir.empty()) {
    write_file_atomic(prepare_dir(out_dir) / "query.csv", csv.str());
  }
  return kExitOk;
}

int cmd_graph_communities(const fs::path& graph_file, const fs::path& out_dir,
                          std::ostream& out) {
  auto g = load_graph(graph_file);
  const auto& ca = g.communities();
  std::ostringstream csv;
  csv << "level,node,community\n";
  for (std::size_t l = 0; l < ca.levels.size(); ++l) {
    int count = 0;
    for (const auto& [id, c] : ca.levels[l]) {
      count = std::max(count, c + 1);
      csv << l << ',' << id << ',' << c << '\n';
    }
    out << "level " << l << ": " << count << " communities, Q=" << fixed(ca.modularity[l])
        << (static_cast<int>(l) == ca.selected_level ? " (selected)" : "") << "\n";
  }
  if (!ca.levels.empty()) {
    for (const auto& [id, c] : ca.levels[ca.selected_level]) {
      out << "  " << id << ' ' << c << "\n";
    }
  }
  if (!out_dir.empty()) {
    write_file_atomic(prepare_dir(out_dir) / "communities.csv", csv.str());
  }
  return kExitOk;
}

namespace {

constexpr const char* kFooter = R"(Artifacts and CSV columns:
  simulate       world.csv  user_id,query_id,trajectory_id,reward_base,reward_pers
                 trace.csv  step,optimizer,mean_reward,mean_pers_reward,adv_error
  compare        compare.csv  trial,seed,optimizer,mean_adv_error,final_pers_reward,
                              final_total_reward,anchor_drift
                 compare.json  the same report with per-optimizer means
  verify-bounds  bounds.csv  check,query,user,item,lhs,relation,rhs,pass
  train-rm       rm_trace.csv  step,total,rec,interest,conformity,orth,user,reg,align
                 reward_model.txt, reward_stats.txt
  graph build    graph.json
  graph query    query.csv  rank,skill,score,f_sem,f_user,f_comm,f_comp,f_conf
  graph communities  communities.csv  level,node,community
Every config-driven command also writes resolved_config.json.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.)";

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_run_options(CLI::App* sub, RunOptions& o) {
  sub->add_option("--config", o.config, "JSON run config (defaults when omitted)");
  sub->add_option("--out", o.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", o.seed, "run seed (overrides seed)");
}

RunConfig resolve(const RunOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_vector(const std::string& text) {
  std::vector<double> v;
  for (auto part : split(text, ',')) {
    try {
      v.push_back(parse_double(trim(part)));
    } catch (const FormatError&) {
      throw UsageError("--embedding expects comma-separated numbers, got '" + text + "'");
    }
  }
  return v;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PARPO toolkit: simulation, bound verification, reward model and skill graph"};
  app.footer(kFooter);
  app.require_subcommand(1);

  RunOptions opts;
  auto* simulate = app.add_subcommand("simulate", "train one optimizer on a synthetic world");
  auto* compare = app.add_subcommand("compare", "compare optimizers over seeded trials");
  auto* verify = app.add_subcommand("verify-bounds", "check the bias bounds on a world");
  auto* train_rm = app.add_subcommand("train-rm", "train the collaborative reward model");
  for (auto* sub : {simulate, compare, verify, train_rm}) add_run_options(sub, opts);

  auto* graph_cmd = app.add_subcommand("graph", "skill graph tools");
  graph_cmd->require_subcommand(1);
  std::string records, graph_file, user, embedding, graph_out;
  std::string graph_config;
  auto* build = graph_cmd->add_subcommand("build", "ingest node/edge records");
  build->add_option("--records", records, "record file")->required();
  build->add_option("--out", graph_out, "output directory")->required();
  auto* query = graph_cmd->add_subcommand("query", "rank skills for a user and query");
  query->add_option("--graph", graph_file, "graph.json")->required();
  query->add_option("--user", user, "user node id")->required();
  query->add_option("--embedding", embedding, "comma-separated query vector")->required();
  query->add_option("--config", graph_config, "JSON config supplying retrieval weights");
  query->add_option("--out", graph_out, "directory for query.csv");
  auto* communities = graph_cmd->add_subcommand("communities", "community hierarchy");
  communities->add_option("--graph", graph_file, "graph.json")->required();
  communities->add_option("--out", graph_out, "directory for communities.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(resolve(opts), out);
    if (compare->parsed()) return cmd_compare(resolve(opts), out);
    if (verify->parsed()) return cmd_verify_bounds(resolve(opts), out);
    if (train_rm->parsed()) return cmd_train_rm(resolve(opts), out);
    if (build->parsed()) return cmd_graph_build(records, graph_out, out);
    if (query->parsed()) {
      const auto retrieval = graph_config.empty() ? graph::RetrievalConfig{}
                                                  : load_config(graph_config).retrieval;
      return cmd_graph_query(graph_file, user, parse_vector(embedding), retrieval,
                             graph_out, out);
    }
    if (communities->parsed()) return cmd_graph_communities(graph_file, graph_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace parpo::cli
