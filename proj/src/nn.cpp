#include "rwmlab/nn.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace rwmlab {

Array init_uniform_fanin(std::size_t in, std::size_t out, Rng& rng) {
  Array w({in, out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

Array init_orthogonal(std::size_t n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  // Fix signs so the decomposition is unique.
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Array w({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w.at(i, j) = q(i, j);
  return w;
}

AffineLayer::AffineLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : w(name + ".w", init_uniform_fanin(in, out, rng)),
      b(name + ".b", Array::zeros({out})) {}

Var AffineLayer::forward(Tape& t, Var x) const {
  // const_cast confined here: tape bindings mutate only the grad buffer.
  auto& self = const_cast<AffineLayer&>(*this);
  return t.affine(x, t.param(self.w), t.param(self.b));
}

void AffineLayer::forward_raw(const Array& x, Array& out) const {
  out = Array::zeros({x.rows(), w.value.cols()});
  kernels::affine_fwd(x, w.value, b.value, out);
}

GruLayer::GruLayer(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  wx = Parameter(name + ".wx", init_uniform_fanin(in, 3 * hidden, rng));
  Array whv({hidden, 3 * hidden});
  for (int g = 0; g < 3; ++g) {
    Array q = init_orthogonal(hidden, rng);
    for (std::size_t i = 0; i < hidden; ++i)
      for (std::size_t j = 0; j < hidden; ++j)
        whv.data[i * 3 * hidden + g * hidden + j] = q.at(i, j);
  }
  wh = Parameter(name + ".wh", std::move(whv));
  b = Parameter(name + ".b", Array::zeros({3 * hidden}));
}

void GruLayer::forward_raw(const Array& x, const Array& h, Array& h_new) const {
  kernels::gru_fwd(x, h, wx.value, wh.value, b.value, h_new, nullptr);
}

Mlp::Mlp(const std::string& name, std::size_t in, const std::vector<int>& hidden, std::size_t out,
         Activation a, Rng& rng)
    : act(a) {
  std::size_t prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(name + ".l" + std::to_string(i), prev, hidden[i], rng);
    prev = static_cast<std::size_t>(hidden[i]);
  }
  layers.emplace_back(name + ".out", prev, out, rng);
}

Var Mlp::forward(Tape& t, Var x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(t, h);
    if (i + 1 < layers.size()) {
      switch (act) {
        case Activation::Relu: h = t.relu(h); break;
        case Activation::Elu: h = t.elu(h); break;
        case Activation::Tanh: h = t.tanh_(h); break;
      }
    }
  }
  return h;
}

Array Mlp::forward_raw(const Array& x) const {
  Array h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Array next;
    layers[i].forward_raw(h, next);
    if (i + 1 < layers.size()) {
      for (auto& v : next.data) {
        switch (act) {
          case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
          case Activation::Elu: v = v > 0.0 ? v : std::expm1(v); break;
          case Activation::Tanh: v = std::tanh(v); break;
        }
      }
    }
    h = std::move(next);
  }
  return h;
}

std::vector<Parameter*> Mlp::params() {
  std::vector<Parameter*> ps;
  for (auto& l : layers) {
    ps.push_back(&l.w);
    ps.push_back(&l.b);
  }
  return ps;
}

}  // namespace rwmlab
