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

#include "parpo/reward_model/profile_fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace parpo::reward {

namespace {

struct FusionCache {
  std::vector<int> active;            // view indices taking part
  std::vector<VectorXd> attn_hidden;  // tanh(W_attn h_k + b), per active view
  VectorXd alpha;                     // per active view
  VectorXd pooled;
  VectorXd normalized;  // LayerNorm output before gain/shift
  double inv_std = 0.0;
  VectorXd output;
};

FusionCache forward(const ProfileViews& pv, const FusionParams& p,
                    const std::vector<bool>& mask) {
  const int k_views = static_cast<int>(pv.views.size());
  if (k_views == 0) {
    throw std::invalid_argument("profile has no views");
  }
  if (!mask.empty() && static_cast<int>(mask.size()) != k_views) {
    throw std::invalid_argument("view mask size mismatch");
  }
  const int d = p.dim();
  FusionCache c;
  for (int k = 0; k < k_views; ++k) {
    if (pv.views[k].size() != d) {
      throw std::invalid_argument("view dimension mismatch for user '" +
                                  pv.user_id + "'");
    }
    if (mask.empty() || mask[k]) c.active.push_back(k);
  }
  if (c.active.empty()) {
    throw std::invalid_argument("view mask selects no views");
  }

  const int n = static_cast<int>(c.active.size());
  VectorXd scores(n);
  for (int a = 0; a < n; ++a) {
    const VectorXd& h = pv.views[c.active[a]];
    c.attn_hidden.push_back(
        (p.attn_weight * h + p.attn_bias).array().tanh().matrix());
    scores[a] = p.attn_vector.dot(c.attn_hidden.back());
  }
  c.alpha = (scores.array() - scores.maxCoeff()).exp().matrix();
  c.alpha /= c.alpha.sum();

  c.pooled = VectorXd::Zero(d);
  for (int a = 0; a < n; ++a) c.pooled += c.alpha[a] * pv.views[c.active[a]];

  const VectorXd y = p.out_matrix * c.pooled;
  const double mu = y.mean();
  const double var = (y.array() - mu).square().mean();
  c.inv_std = 1.0 / std::sqrt(var + p.ln_eps);
  c.normalized = (y.array() - mu).matrix() * c.inv_std;
  c.output = (p.ln_gain.array() * c.normalized.array()).matrix() + p.ln_shift;
  return c;
}

void backward(const ProfileViews& pv, const FusionParams& p,
              const FusionCache& c, const VectorXd& grad_out,
              FusionParams& g) {
  g.ln_gain += (grad_out.array() * c.normalized.array()).matrix();
  g.ln_shift += grad_out;
  const VectorXd gx = (grad_out.array() * p.ln_gain.array()).matrix();
  const double mean_gx = gx.mean();
  const double mean_gx_x = (gx.array() * c.normalized.array()).mean();
  const VectorXd gy =
      ((gx.array() - mean_gx - c.normalized.array() * mean_gx_x) * c.inv_std)
          .matrix();
  g.out_matrix.noalias() += gy * c.pooled.transpose();
  const VectorXd g_pooled = p.out_matrix.transpose() * gy;

  const int n = static_cast<int>(c.active.size());
  VectorXd g_alpha(n);
  for (int a = 0; a < n; ++a) g_alpha[a] = pv.views[c.active[a]].dot(g_pooled);
  const double centre = c.alpha.dot(g_alpha);
  for (int a = 0; a < n; ++a) {
    const double g_score = c.alpha[a] * (g_alpha[a] - centre);
    const VectorXd& t = c.attn_hidden[a];
    g.attn_vector += g_score * t;
    const VectorXd g_pre =
        (g_score * p.attn_vector.array() * (1.0 - t.array().square()))
            .matrix();
    g.attn_weight.noalias() += g_pre * pv.views[c.active[a]].transpose();
    g.attn_bias += g_pre;
  }
}

double cosine(const VectorXd& a, const VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

// d cos(a, b) / d a.
VectorXd cosine_grad(const VectorXd& a, const VectorXd& b, double cos_ab) {
  const double na = a.norm();
  return b / (na * b.norm()) - cos_ab * a / (na * na);
}

}  // namespace

FusionParams FusionParams::random(int dim, int attn_dim, int num_views,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto draw = [&](int rows, int cols, double s) {
    MatrixXd m(rows, cols);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = s * n(rng);
    return m;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  FusionParams p;
  p.attn_weight = draw(attn_dim, dim, s);
  p.attn_bias = VectorXd::Zero(attn_dim);
  p.attn_vector = draw(attn_dim, 1, 1.0 / std::sqrt(double(attn_dim)));
  p.out_matrix = MatrixXd::Identity(dim, dim) + draw(dim, dim, 0.1 * s);
  p.ln_gain = VectorXd::Ones(dim);
  p.ln_shift = VectorXd::Zero(dim);
  for (int k = 0; k < num_views; ++k) {
    p.recon_weight.push_back(draw(dim, dim, s));
    p.recon_bias.push_back(VectorXd::Zero(dim));
  }
  return p;
}

FusionParams FusionParams::zeros_like() const {
  FusionParams z = *this;
  z.for_each_tensor([](auto& t) { t.setZero(); });
  return z;
}

FusedProfile fuse_profile(const ProfileViews& views, const FusionParams& params,
                          const std::vector<bool>& mask) {
  const auto c = forward(views, params, mask);
  FusedProfile out;
  out.embedding = c.output;
  out.attention = VectorXd::Zero(static_cast<int>(views.views.size()));
  for (std::size_t a = 0; a < c.active.size(); ++a) {
    out.attention[c.active[a]] = c.alpha[static_cast<int>(a)];
  }
  return out;
}

std::vector<bool> view_dropout_mask(std::size_t num_views, double keep_prob,
                                    std::mt19937_64& rng) {
  if (num_views == 0) {
    throw std::invalid_argument("view_dropout_mask needs at least one view");
  }
  std::bernoulli_distribution keep(keep_prob);
  std::vector<bool> mask(num_views);
  bool any = false;
  for (std::size_t k = 0; k < num_views; ++k) {
    mask[k] = keep(rng);
    any = any || mask[k];
  }
  if (!any) {
    std::uniform_int_distribution<std::size_t> pick(0, num_views - 1);
    mask[pick(rng)] = true;
  }
  return mask;
}

Stage1Loss stage1_loss(std::span<const Stage1Sample> batch,
                       const FusionParams& params, double lambda_recon,
                       FusionParams* grad, unsigned terms) {
  const bool use_nce = (terms & kStage1InfoNce) != 0;
  const bool use_recon = (terms & kStage1Recon) != 0;
  const int n = static_cast<int>(batch.size());
  if (n < 2) {
    throw std::invalid_argument("stage-1 InfoNCE needs at least two users");
  }
  if (!(params.tau_c > 0.0)) {
    throw std::invalid_argument("tau_c must be > 0");
  }
  std::vector<FusionCache> anchor, positive;
  for (const auto& s : batch) {
    if (static_cast<int>(s.views.views.size()) != params.num_views()) {
      throw std::invalid_argument("user '" + s.views.user_id +
                                  "' has the wrong number of views");
    }
    anchor.push_back(forward(s.views, params, {}));
    positive.push_back(forward(s.views, params, s.positive_mask));
  }

  Stage1Loss loss;
  MatrixXd sims(n, n);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      sims(u, v) = cosine(anchor[u].output, positive[v].output) / params.tau_c;
    }
  }
  MatrixXd prob(n, n);
  for (int u = 0; u < n; ++u) {
    const double m = sims.row(u).maxCoeff();
    const auto e = (sims.row(u).array() - m).exp();
    const double z = e.sum();
    prob.row(u) = e / z;
    loss.info_nce += -(sims(u, u) - m - std::log(z));
  }

  std::vector<VectorXd> g_anchor(n), g_positive(n);
  for (int u = 0; u < n; ++u) {
    g_anchor[u] = VectorXd::Zero(params.dim());
    g_positive[u] = VectorXd::Zero(params.dim());
  }
  if (grad != nullptr && use_nce) {
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        const double gs = (prob(u, v) - (u == v ? 1.0 : 0.0)) / params.tau_c;
        if (gs == 0.0) continue;
        const double c = sims(u, v) * params.tau_c;
        g_anchor[u] += gs * cosine_grad(anchor[u].output, positive[v].output, c);
        g_positive[v] +=
            gs * cosine_grad(positive[v].output, anchor[u].output, c);
      }
    }
  }

  for (int u = 0; u < n; ++u) {
    const auto& views = batch[u].views.views;
    for (int k = 0; k < params.num_views(); ++k) {
      const VectorXd resid = params.recon_weight[k] * anchor[u].output +
                             params.recon_bias[k] - views[k];
      loss.recon += resid.squaredNorm();
      if (grad != nullptr && use_recon) {
        const VectorXd gr = 2.0 * lambda_recon * resid;
        grad->recon_weight[k].noalias() += gr * anchor[u].output.transpose();
        grad->recon_bias[k] += gr;
        g_anchor[u] += params.recon_weight[k].transpose() * gr;
      }
    }
  }
  loss.total = (use_nce ? loss.info_nce : 0.0) +
               (use_recon ? lambda_recon * loss.recon : 0.0);

  if (grad != nullptr) {
    for (int u = 0; u < n; ++u) {
      backward(batch[u].views, params, anchor[u], g_anchor[u], *grad);
      backward(batch[u].views, params, positive[u], g_positive[u], *grad);
    }
  }
  return loss;
}

std::vector<double> train_stage1(std::span<const Stage1Sample> batch,
                                 FusionParams& params, double lambda_recon,
                                 int steps, double step_size) {
  std::vector<double> trace;
  for (int step = 0; step < steps; ++step) {
    FusionParams g = params.zeros_like();
    const auto loss = stage1_loss(batch, params, lambda_recon, &g);
    if (!std::isfinite(loss.total)) {
      throw std::runtime_error("stage-1 loss diverged at step " +
                               std::to_string(step));
    }
    trace.push_back(loss.total);
    zip_tensors(params, g, [&](double* p, const double* gp, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) p[i] -= step_size * gp[i];
    });
  }
  trace.push_back(stage1_loss(batch, params, lambda_recon).total);
  return trace;
}

}  // namespace parpo::reward
