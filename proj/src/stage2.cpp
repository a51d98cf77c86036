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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include "parpo/common/stats.hpp"
#include "parpo/reward_model/cf_model.hpp"

namespace parpo::reward {

namespace {

double logsumexp(const VectorXd& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

VectorXd softmax(const VectorXd& x) {
  VectorXd e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

double checked_norm(const VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::domain_error("degenerate embedding");
  }
  return n;
}

VectorXd cosine_grad(const VectorXd& a, const VectorXd& b, double cos_ab) {
  const double na = a.norm();
  return b / (na * b.norm()) - cos_ab * a / (na * na);
}

// Forward state of one distinct batch user, plus gradient slots.
struct UserState {
  int user = 0;
  TwoLayerMlp::Cache c_int, c_conf, c_attn;
  double n_int = 0.0, n_conf = 0.0, n_fused = 0.0;
  BranchFusion fusion;
  VectorXd u_int, u_conf;
  VectorXd g_int, g_conf, g_hat_int, g_hat_conf, g_fused;
};

UserState forward_user(const CFModel& m, int user, const VectorXd& u_cf) {
  UserState s;
  s.user = user;
  s.u_int = m.interest.forward(u_cf, &s.c_int);
  s.u_conf = m.conformity.forward(u_cf, &s.c_conf);
  s.n_int = checked_norm(s.u_int);
  s.n_conf = checked_norm(s.u_conf);
  const VectorXd hat_int = s.u_int / s.n_int;
  const VectorXd hat_conf = s.u_conf / s.n_conf;
  VectorXd x(2 * m.dim());
  x << hat_int, hat_conf;
  const VectorXd logits = m.branch_attn.forward(x, &s.c_attn);
  const VectorXd alpha = softmax(logits / m.branch_temperature);
  const VectorXd v = alpha[0] * hat_int + alpha[1] * hat_conf;
  s.n_fused = checked_norm(v);
  s.fusion = {hat_int, hat_conf, v / s.n_fused, alpha[0], alpha[1]};
  const int d = m.dim();
  s.g_int = s.g_conf = s.g_hat_int = s.g_hat_conf = s.g_fused =
      VectorXd::Zero(d);
  return s;
}

// Pushes the accumulated slot gradients of `s` back to u_cf.
VectorXd backward_user(const CFModel& m, UserState& s, CFModel& g) {
  const auto& f = s.fusion;
  const VectorXd gv = unit_backward(f.fused, s.n_fused, s.g_fused);
  s.g_hat_int += f.alpha_interest * gv;
  s.g_hat_conf += f.alpha_conformity * gv;
  const double ga0 = f.unit_interest.dot(gv);
  const double ga1 = f.unit_conformity.dot(gv);
  const double centre = f.alpha_interest * ga0 + f.alpha_conformity * ga1;
  VectorXd gz(2);
  gz << f.alpha_interest * (ga0 - centre), f.alpha_conformity * (ga1 - centre);
  gz /= m.branch_temperature;
  const VectorXd gx = m.branch_attn.backward(s.c_attn, gz, g.branch_attn);
  const int d = m.dim();
  s.g_hat_int += gx.head(d);
  s.g_hat_conf += gx.tail(d);
  s.g_int += unit_backward(f.unit_interest, s.n_int, s.g_hat_int);
  s.g_conf += unit_backward(f.unit_conformity, s.n_conf, s.g_hat_conf);
  return m.interest.backward(s.c_int, s.g_int, g.interest) +
         m.conformity.backward(s.c_conf, s.g_conf, g.conformity);
}

void check_batch(const CFModel& m, std::span<const Triple> batch) {
  if (batch.empty()) throw std::invalid_argument("stage-2 batch is empty");
  for (const auto& t : batch) {
    if (t.user < 0 || t.user >= m.num_users() || t.pos < 0 ||
        t.pos >= m.num_items()) {
      throw std::out_of_range("stage-2 triple index out of range");
    }
    if (t.neg < 0 || t.neg >= m.num_items() || t.neg == t.pos) {
      throw std::invalid_argument("stage-2 triple lacks a valid negative");
    }
  }
}

Stage2Terms stage2_impl(const CFModel& m, std::span<const Triple> batch,
                        CFModel* grad, unsigned terms,
                        const MatrixXd* frozen_items) {
  check_batch(m, batch);
  const Propagated prop = lightgcn_propagate(m);
  const int d = m.dim();
  const double B = static_cast<double>(batch.size());
  auto on = [&](Stage2Term t) { return (terms & t) != 0; };
  const bool want_grad = grad != nullptr;

  std::map<int, int> slot_of;
  std::set<int> pool_set;
  for (const auto& t : batch) {
    slot_of.emplace(t.user, 0);
    pool_set.insert(t.pos);
    pool_set.insert(t.neg);
  }
  std::vector<UserState> users;
  for (auto& [u, slot] : slot_of) {
    slot = static_cast<int>(users.size());
    users.push_back(forward_user(m, u, prop.users.row(u).transpose()));
  }
  const std::vector<int> pool(pool_set.begin(), pool_set.end());
  std::map<int, int> pool_row;
  MatrixXd pool_items(pool.size(), d);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    pool_row[pool[j]] = static_cast<int>(j);
    pool_items.row(j) = prop.items.row(pool[j]);
  }

  MatrixXd g_users, g_items;
  if (want_grad) {
    g_users = MatrixXd::Zero(m.num_users(), d);
    g_items = MatrixXd::Zero(m.num_items(), d);
  }
  const bool has_text = m.item_text.size() != 0;
  Stage2Terms out;

  for (const auto& t : batch) {
    UserState& s = users[slot_of[t.user]];
    const VectorXd& f = s.fusion.fused;
    const VectorXd ip = prop.items.row(t.pos).transpose();
    const VectorXd in = prop.items.row(t.neg).transpose();

    // BPR on the fused embedding.
    {
      const double x = f.dot(in - ip);
      out.rec += softplus(x) / B;
      if (want_grad && on(kTermRec)) {
        const double sg = sigmoid(x) / B;
        s.g_fused += sg * (in - ip);
        g_items.row(t.neg) += sg * f.transpose();
        g_items.row(t.pos) -= sg * f.transpose();
      }
    }

    // Popularity-weighted InfoNCE for both branches.
    const double p = m.popularity[t.pos];
    const int prow = pool_row[t.pos];
    auto branch = [&](const VectorXd& u, double omega, double weight,
                      bool active, double& value, VectorXd& g_u) {
      const VectorXd logits = pool_items * u / m.tau;
      value += (-std::log(omega + m.omega_eps) - logits[prow] +
                logsumexp(logits)) /
               B;
      if (!want_grad || !active) return;
      const VectorXd pr = softmax(logits);
      const double c = weight / (m.tau * B);
      g_u += c * (pool_items.transpose() * pr - ip);
      for (std::size_t j = 0; j < pool.size(); ++j) {
        g_items.row(pool[j]) += c * pr[j] * u.transpose();
      }
      g_items.row(t.pos) -= c * u.transpose();
    };
    branch(s.u_int, std::exp(1.0 - p), m.weights.interest, on(kTermInterest),
           out.interest, s.g_int);
    branch(s.u_conf, std::exp(p), m.weights.conformity, on(kTermConformity),
           out.conformity, s.g_conf);

    // Branch orthogonality.
    {
      const double c = s.fusion.unit_interest.dot(s.fusion.unit_conformity);
      out.orth += c * c / B;
      if (want_grad && on(kTermOrth)) {
        const double k = m.weights.orth * 2.0 * c / B;
        s.g_hat_int += k * s.fusion.unit_conformity;
        s.g_hat_conf += k * s.fusion.unit_interest;
      }
    }

    // l2 on the collaborative embeddings used by this triple.
    {
      const VectorXd uc = prop.users.row(t.user).transpose();
      out.reg += (uc.squaredNorm() + ip.squaredNorm() + in.squaredNorm()) /
                 (2.0 * B);
      if (want_grad && on(kTermReg)) {
        const double k = m.weights.reg / B;
        g_users.row(t.user) += k * uc.transpose();
        g_items.row(t.pos) += k * ip.transpose();
        g_items.row(t.neg) += k * in.transpose();
      }
    }

    // Action alignment against the (stop-gradient) collaborative item.
    if (has_text) {
      TwoLayerMlp::Cache cp, cn;
      const VectorXd qp = m.action.forward(m.item_text.row(t.pos).transpose(), &cp);
      const VectorXd qn = m.action.forward(m.item_text.row(t.neg).transpose(), &cn);
      const VectorXd target = frozen_items != nullptr
                                  ? VectorXd(frozen_items->row(t.pos).transpose())
                                  : ip;
      checked_norm(qp);
      const double cos = qp.dot(target) / (qp.norm() * checked_norm(target));
      const double x = f.dot(qn - qp);
      out.align += (1.0 - cos) / B + softplus(x) / B;
      if (want_grad && on(kTermAlign)) {
        const double w = m.weights.align;
        const double sg = w * sigmoid(x) / B;
        VectorXd gqp = -w / B * cosine_grad(qp, target, cos) - sg * f;
        VectorXd gqn = sg * f;
        s.g_fused += sg * (qn - qp);
        m.action.backward(cp, gqp, grad->action);
        m.action.backward(cn, gqn, grad->action);
      }
    }
  }

  // Contrast among the distinct batch users (fused vectors are unit).
  {
    const int n = static_cast<int>(users.size());
    MatrixXd fm(n, d);
    for (int a = 0; a < n; ++a) fm.row(a) = users[a].fusion.fused.transpose();
    const MatrixXd sim = fm * fm.transpose() / m.tau;
    MatrixXd g_sim = MatrixXd::Zero(n, n);
    for (int a = 0; a < n; ++a) {
      const VectorXd row = sim.row(a).transpose();
      out.user += (logsumexp(row) - sim(a, a)) / n;
      g_sim.row(a) = softmax(row).transpose();
      g_sim(a, a) -= 1.0;
    }
    if (want_grad && on(kTermUser)) {
      g_sim *= m.weights.user / n;
      const MatrixXd g_f = (g_sim + g_sim.transpose()) * fm / m.tau;
      for (int a = 0; a < n; ++a) users[a].g_fused += g_f.row(a).transpose();
    }
  }

  const auto& w = m.weights;
  out.total = (on(kTermRec) ? out.rec : 0.0) +
              (on(kTermInterest) ? w.interest * out.interest : 0.0) +
              (on(kTermConformity) ? w.conformity * out.conformity : 0.0) +
              (on(kTermOrth) ? w.orth * out.orth : 0.0) +
              (on(kTermUser) ? w.user * out.user : 0.0) +
              (on(kTermReg) ? w.reg * out.reg : 0.0) +
              (on(kTermAlign) ? w.align * out.align : 0.0);

  if (want_grad) {
    for (auto& s : users) {
      g_users.row(s.user) += backward_user(m, s, *grad).transpose();
    }
    // The layer-average operator is symmetric, so it is its own adjoint.
    CFModel carrier;
    carrier.user_table = std::move(g_users);
    carrier.item_table = std::move(g_items);
    carrier.layers = m.layers;
    carrier.adjacency = m.adjacency;
    const Propagated back = lightgcn_propagate(carrier);
    grad->user_table += back.users;
    grad->item_table += back.items;
  }
  return out;
}

// Small fixed graph used to verify gradients before training.
CFModel make_probe_model(const CFModel& like) {
  std::vector<Interaction> recs;
  const int pairs[][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 3}, {2, 2},
                          {2, 4}, {3, 0}, {3, 3}, {3, 4}, {1, 0}};
  for (const auto& p : pairs) {
    recs.push_back({"u" + std::to_string(p[0]), "i" + std::to_string(p[1]), 1.0});
  }
  const auto data = InteractionData::from_records(recs);
  CFModel probe = CFModel::create(data, 3, 2, 7, 0.5);
  probe.tau = like.tau;
  probe.branch_temperature = like.branch_temperature;
  probe.omega_eps = like.omega_eps;
  probe.weights = like.weights;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  probe.item_text.resize(probe.num_items(), 3);
  for (int i = 0; i < probe.item_text.size(); ++i) probe.item_text.data()[i] = n(rng);
  return probe;
}

}  // namespace

BranchFusion fuse_unit_branches(const VectorXd& unit_interest,
                                const VectorXd& unit_conformity,
                                const VectorXd& logits, double temperature) {
  if (logits.size() != 2) throw std::invalid_argument("need two branch logits");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const VectorXd alpha = softmax(logits / temperature);
  const VectorXd v = alpha[0] * unit_interest + alpha[1] * unit_conformity;
  return {unit_interest, unit_conformity, v / checked_norm(v), alpha[0],
          alpha[1]};
}

BranchFusion fuse_branches(const CFModel& model, const VectorXd& u_cf) {
  if (u_cf.size() != model.dim()) {
    throw std::invalid_argument("u_cf dimension mismatch");
  }
  return forward_user(model, 0, u_cf).fusion;
}

double weighted_infonce(const VectorXd& u, const MatrixXd& pool, int pos_row,
                        double omega, double tau, double eps) {
  if (pos_row < 0 || pos_row >= pool.rows()) {
    throw std::out_of_range("positive row outside the pool");
  }
  const VectorXd logits = pool * u / tau;
  return -std::log(omega + eps) - logits[pos_row] + logsumexp(logits);
}

BranchLosses branch_losses(const CFModel& model,
                           std::span<const std::pair<int, int>> positives,
                           std::span<const int> negatives) {
  if (negatives.empty()) throw std::invalid_argument("negative pool is empty");
  if (positives.empty()) throw std::invalid_argument("no positives");
  const Propagated prop = lightgcn_propagate(model);
  BranchLosses out;
  const double B = static_cast<double>(positives.size());
  for (auto [user, pos] : positives) {
    std::vector<int> pool{pos};
    for (int j : negatives) {
      if (j < 0 || j >= model.num_items()) {
        throw std::out_of_range("negative item out of range");
      }
      if (j != pos) pool.push_back(j);
    }
    MatrixXd items(pool.size(), model.dim());
    for (std::size_t j = 0; j < pool.size(); ++j) {
      items.row(j) = prop.items.row(pool[j]);
    }
    const VectorXd u_cf = prop.users.row(user).transpose();
    const double p = model.popularity[pos];
    out.interest += weighted_infonce(model.interest.forward(u_cf), items, 0,
                                     std::exp(1.0 - p), model.tau,
                                     model.omega_eps) / B;
    out.conformity += weighted_infonce(model.conformity.forward(u_cf), items, 0,
                                       std::exp(p), model.tau,
                                       model.omega_eps) / B;
  }
  return out;
}

Stage2Terms stage2_loss(const CFModel& model, std::span<const Triple> batch,
                        CFModel* grad, unsigned terms) {
  return stage2_impl(model, batch, grad, terms, nullptr);
}

GradCheckResult check_stage2_gradients(const CFModel& model,
                                       std::span<const Triple> batch,
                                       unsigned terms, double h, double tol) {
  const MatrixXd frozen = lightgcn_propagate(model).items;
  CFModel analytic = model.zeros_like();
  stage2_impl(model, batch, &analytic, terms, &frozen);
  CFModel probe = model;
  return finite_difference_check(
      probe,
      [&](const CFModel& p) {
        return stage2_impl(p, batch, nullptr, terms, &frozen).total;
      },
      analytic, h, tol);
}

std::vector<Triple> sample_triples(const CFModel& model, std::uint64_t seed) {
  std::vector<std::set<int>> seen(model.num_users());
  for (auto [u, i] : model.edges) seen[u].insert(i);
  std::mt19937_64 rng(seed);
  std::vector<Triple> out;
  for (auto [u, i] : model.edges) {
    std::vector<int> candidates;
    for (int j = 0; j < model.num_items(); ++j) {
      if (!seen[u].count(j)) candidates.push_back(j);
    }
    if (candidates.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    out.push_back({u, i, candidates[pick(rng)]});
  }
  return out;
}

Stage2Training train_stage2(CFModel& model, int steps, double step_size,
                            std::uint64_t seed) {
  if (steps < 0 || !(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("steps and step size must be non-negative");
  }
  model.validate();
  Stage2Training result;

  const CFModel probe = make_probe_model(model);
  const auto probe_batch = sample_triples(probe, 3);
  for (unsigned bit = 1; bit < kStage2All; bit <<= 1) {
    const auto r = check_stage2_gradients(probe, probe_batch, bit);
    if (r.max_rel_error >= result.probe_check.max_rel_error) {
      result.probe_check = r;
    }
    if (!r.passed) {
      throw std::runtime_error(
          "stage-2 gradient check failed for term mask " + std::to_string(bit) +
          ": analytic " + std::to_string(r.worst_analytic) + " vs numeric " +
          std::to_string(r.worst_numeric));
    }
  }

  const auto batch = sample_triples(model, seed);
  if (batch.empty()) {
    throw std::invalid_argument("no user has an unobserved item to use as negative");
  }
  for (int step = 0; step < steps; ++step) {
    CFModel g = model.zeros_like();
    const auto loss = stage2_loss(model, batch, &g);
    if (!std::isfinite(loss.total)) {
      throw std::runtime_error("stage-2 loss diverged at step " +
                               std::to_string(step));
    }
    result.trace.push_back(loss.total);
    result.terms.push_back(loss);
    zip_tensors(model, g, [&](double* p, const double* gp, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) p[i] -= step_size * gp[i];
    });
  }
  const auto final_loss = stage2_loss(model, batch);
  if (!std::isfinite(final_loss.total)) {
    throw std::runtime_error("stage-2 loss diverged after training");
  }
  result.trace.push_back(final_loss.total);
  result.terms.push_back(final_loss);
  return result;
}

ActionEmbedding infer_action_embedding(const CFModel& model,
                                       const Propagated& propagated,
                                       const VectorXd& action_vector,
                                       const MatrixXd& item_text, int k_nn) {
  if (k_nn < 1) throw std::invalid_argument("k_nn must be >= 1");
  if (item_text.rows() == 0) throw std::invalid_argument("item set is empty");
  if (item_text.rows() != propagated.items.rows() ||
      item_text.cols() != action_vector.size() ||
      action_vector.size() != model.dim()) {
    throw std::invalid_argument("action / item text dimension mismatch");
  }
  const double na = checked_norm(action_vector);
  std::vector<double> sims(item_text.rows());
  for (Eigen::Index j = 0; j < item_text.rows(); ++j) {
    sims[j] = item_text.row(j).dot(action_vector) /
              (checked_norm(item_text.row(j).transpose()) * na);
  }
  std::vector<int> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  const int k = std::min<int>(k_nn, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) {
                      return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
                    });
  ActionEmbedding out;
  out.neighbors.assign(order.begin(), order.begin() + k);
  VectorXd s(k);
  for (int j = 0; j < k; ++j) s[j] = sims[out.neighbors[j]] / 0.1;
  out.weights = softmax(s);
  VectorXd a_cf = VectorXd::Zero(model.dim());
  for (int j = 0; j < k; ++j) {
    a_cf += out.weights[j] * propagated.items.row(out.neighbors[j]).transpose();
  }
  const VectorXd a_proj = model.action.forward(action_vector);
  out.embedding = 0.5 * a_cf / checked_norm(a_cf) +
                  0.5 * a_proj / checked_norm(a_proj);
  return out;
}

ActionScores score_action(const BranchFusion& user, const VectorXd& action) {
  const VectorXd a = action / checked_norm(action);
  auto cos = [&](const VectorXd& v) {
    return std::clamp(v.dot(a) / checked_norm(v), -1.0, 1.0);
  };
  return {cos(user.unit_interest), cos(user.unit_conformity), cos(user.fused)};
}

RewardStats compute_reward_stats(const CFModel& model,
                                 const Propagated& propagated) {
  std::vector<BranchFusion> fusions;
  for (int u = 0; u < model.num_users(); ++u) {
    fusions.push_back(fuse_branches(model, propagated.users.row(u).transpose()));
  }
  std::vector<double> r_int, r_conf;
  for (auto [u, i] : model.edges) {
    const auto s = score_action(fusions[u], propagated.items.row(i).transpose());
    r_int.push_back(s.interest);
    r_conf.push_back(s.conformity);
  }
  if (r_int.empty()) throw std::invalid_argument("model has no interactions");
  constexpr double kSigmaFloor = 1e-6;
  RewardStats st;
  st.mu_int = mean(r_int);
  st.sigma_int = std::max(population_std(r_int), kSigmaFloor);
  st.mu_conf = mean(r_conf);
  st.sigma_conf = std::max(population_std(r_conf), kSigmaFloor);
  return st;
}

NormalizedScores normalize_scores(const RewardStats& stats, double r_int,
                                  double r_conf) {
  stats.validate();
  return {sigmoid((r_int - stats.mu_int) / stats.sigma_int),
          sigmoid((r_conf - stats.mu_conf) / stats.sigma_conf)};
}

}  // namespace parpo::reward
