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

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace parpo::reward {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// y = W2 tanh(W1 x + b1) + b2.
struct TwoLayerMlp {
  MatrixXd w1;
  VectorXd b1;
  MatrixXd w2;
  VectorXd b2;

  struct Cache {
    VectorXd input;
    VectorXd hidden;  // tanh activations
  };

  static TwoLayerMlp random(int in, int hidden, int out, double scale,
                            std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    auto draw = [&](int rows, int cols, double s) {
      MatrixXd m(rows, cols);
      for (int i = 0; i < m.size(); ++i) m.data()[i] = s * n(rng);
      return m;
    };
    TwoLayerMlp mlp;
    mlp.w1 = draw(hidden, in, scale / std::sqrt(static_cast<double>(in)));
    mlp.b1 = VectorXd::Zero(hidden);
    mlp.w2 = draw(out, hidden, scale / std::sqrt(static_cast<double>(hidden)));
    mlp.b2 = VectorXd::Zero(out);
    return mlp;
  }

  TwoLayerMlp zeros_like() const {
    return TwoLayerMlp{MatrixXd::Zero(w1.rows(), w1.cols()),
                       VectorXd::Zero(b1.size()),
                       MatrixXd::Zero(w2.rows(), w2.cols()),
                       VectorXd::Zero(b2.size())};
  }

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int output_dim() const { return static_cast<int>(w2.rows()); }

  VectorXd forward(const VectorXd& x, Cache* cache = nullptr) const {
    VectorXd h = (w1 * x + b1).array().tanh().matrix();
    VectorXd y = w2 * h + b2;
    if (cache != nullptr) {
      cache->input = x;
      cache->hidden = std::move(h);
    }
    return y;
  }

  /// Accumulates parameter gradients into `grad` and returns d/dx.
  VectorXd backward(const Cache& cache, const VectorXd& grad_out,
                    TwoLayerMlp& grad) const {
    grad.w2.noalias() += grad_out * cache.hidden.transpose();
    grad.b2 += grad_out;
    const VectorXd grad_pre =
        ((w2.transpose() * grad_out).array() *
         (1.0 - cache.hidden.array().square()))
            .matrix();
    grad.w1.noalias() += grad_pre * cache.input.transpose();
    grad.b1 += grad_pre;
    return w1.transpose() * grad_pre;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }
};

/// Applies f(a_tensor, b_tensor) over two parameter sets of identical shape.
template <class Params, class F>
void zip_tensors(Params& a, const Params& b, F&& f) {
  std::vector<double*> pa;
  std::vector<std::pair<const double*, Eigen::Index>> pb;
  a.for_each_tensor([&](auto& t) { pa.push_back(t.data()); });
  b.for_each_tensor(
      [&](const auto& t) { pb.emplace_back(t.data(), t.size()); });
  for (std::size_t i = 0; i < pa.size(); ++i) {
    f(pa[i], pb[i].first, pb[i].second);
  }
}

/// x / |x| and its backward pass.
inline VectorXd unit(const VectorXd& x) { return x / x.norm(); }

inline VectorXd unit_backward(const VectorXd& y, double norm,
                              const VectorXd& grad_y) {
  return (grad_y - y * y.dot(grad_y)) / norm;
}

}  // namespace parpo::reward
