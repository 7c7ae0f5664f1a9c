#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rwmlab/rng.hpp"
#include "rwmlab/tape.hpp"

namespace rwmlab {

// Initializers. Recurrent weights are orthogonal per gate block, input
// weights use uniform fan-in scaling, biases start at zero.
Array init_uniform_fanin(std::size_t in, std::size_t out, Rng& rng);
Array init_orthogonal(std::size_t n, Rng& rng);

struct AffineLayer {
  Parameter w, b;

  AffineLayer() = default;
  AffineLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var forward(Tape& t, Var x) const;
  void forward_raw(const Array& x, Array& out) const;

  std::size_t in_dim() const { return w.value.rows(); }
  std::size_t out_dim() const { return w.value.cols(); }
  std::vector<Parameter*> params() { return {&w, &b}; }
};

struct GruLayer {
  Parameter wx, wh, b;  // packed gate order: update z | reset r | candidate n

  GruLayer() = default;
  GruLayer(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);

  // Binds parameters to the tape once; reuse the returned vars across an
  // unrolled sequence so each parameter appears as a single leaf.
  GruParamVars bind(Tape& t) { return {t.param(wx), t.param(wh), t.param(b)}; }

  Var forward(Tape& t, Var x, Var h, const GruParamVars& p) const { return t.gru_cell(x, h, p); }
  void forward_raw(const Array& x, const Array& h, Array& h_new) const;

  std::size_t hidden_dim() const { return wh.value.rows(); }
  std::vector<Parameter*> params() { return {&wx, &wh, &b}; }
};

enum class Activation { Relu, Elu, Tanh };

// Plain feed-forward stack: affine layers with an activation between them.
// The last layer is linear.
struct Mlp {
  std::vector<AffineLayer> layers;
  Activation act = Activation::Relu;

  Mlp() = default;
  Mlp(const std::string& name, std::size_t in, const std::vector<int>& hidden, std::size_t out,
      Activation a, Rng& rng);

  Var forward(Tape& t, Var x) const;
  Array forward_raw(const Array& x) const;

  std::vector<Parameter*> params();
};

struct GaussianHeadOutput {
  Array mean;
  Array log_std;  // clamped
};

inline Array reparam_sample_raw(const GaussianHeadOutput& h, const Array& noise) {
  Array out = h.mean;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] += std::exp(h.log_std.data[i]) * noise.data[i];
  return out;
}

}  // namespace rwmlab
