#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rwmlab/array.hpp"
#include "rwmlab/errors.hpp"

namespace rwmlab {

// Trainable leaf: value plus persistently accumulated gradient.
struct Parameter {
  std::string name;
  Array value;
  Array grad;

  Parameter() = default;
  Parameter(std::string n, Array v) : name(std::move(n)), value(std::move(v)) {
    grad = Array::zeros(value.shape);
  }

  void zero_grad() { grad.fill(0.0); }
};

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct GruParamVars {
  Var wx;  // [in, 3h]  gate order z | r | n
  Var wh;  // [h, 3h]
  Var b;   // [3h]
};

// Reverse-mode tape over dense arrays. Records primitive operations during
// the forward pass; backward() replays them once in reverse, accumulating
// adjoints and finally adding leaf adjoints into bound Parameter gradients.
class Tape {
 public:
  // Leaves -----------------------------------------------------------------
  Var constant(Array v);
  Var param(Parameter& p);  // adjoint is added to p.grad on backward()

  // Elementwise ------------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var square(Var a);
  Var exp_(Var a);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var relu(Var a);
  Var elu(Var a);
  Var clamp(Var a, double lo, double hi);  // zero sub-gradient outside [lo, hi]
  Var mul_const(Var a, const Array& m);    // elementwise by a constant mask/weight
  Var minimum(Var a, Var b);               // elementwise min; ties route the gradient to a

  // Shape ------------------------------------------------------------------
  Var concat_cols(const std::vector<Var>& parts);  // along dim 1
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var broadcast_rows(Var row, std::size_t rows);  // [c] or [1,c] -> [rows,c]

  // Linear algebra ----------------------------------------------------------
  Var matmul(Var a, Var b);            // [m,k]x[k,n]
  Var affine(Var x, Var w, Var b);     // x.w + b (bias broadcast over rows)
  Var gru_cell(Var x, Var h, const GruParamVars& p);  // fused gated update

  // Probabilistic heads ------------------------------------------------------
  // sample = mean + exp(log_std) * noise; gradient flows to mean/log_std only.
  Var reparam_sample(Var mean, Var log_std, const Array& noise);
  // Elementwise Gaussian negative log-likelihood of target under (mean, std).
  Var gaussian_nll(Var mean, Var log_std, const Array& target);
  // Numerically stable binary cross-entropy on logits.
  Var bce_logits(Var logits, const Array& target);

  // Reductions ---------------------------------------------------------------
  Var sum(Var a);       // -> scalar [1]
  Var mean_all(Var a);  // -> scalar [1]
  Var row_sum(Var a);   // [r,c] -> [r,1]

  // Identity forward, no backward edge.
  Var detach(Var a);

  // Access --------------------------------------------------------------------
  const Array& value(Var v) const { return vals_[v.id]; }
  Array& value_mut(Var v) { return vals_[v.id]; }
  // Adjoint of any recorded variable; valid after backward().
  const Array& adjoint(Var v) const { return adjs_[v.id]; }

  // Seeds d(loss)=1 and replays the tape in reverse. Internal adjoints are
  // reset on entry, so calling backward twice accumulates 2x into Parameters.
  void backward(Var loss);

  void clear();
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  Var fresh(Array v);
  void check(Var v, const char* op) const;

  struct Node {
    std::function<void(Tape&)> back;
  };

  std::vector<Array> vals_;
  std::vector<Array> adjs_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> bindings_;
};

// --- Non-tape kernels shared with the inference path -------------------------

namespace kernels {

// out = x.w + b
void affine_fwd(const Array& x, const Array& w, const Array& b, Array& out);

// Gated recurrent update. Gate order in packed matrices: update z, reset r,
// candidate n. Returns h' and, when caches are supplied, the gate activations
// needed by the backward pass.
struct GruCache {
  Array z, r, n, gh_n;  // gh_n = (h . wh) candidate block, pre reset gate
};
void gru_fwd(const Array& x, const Array& h, const Array& wx, const Array& wh, const Array& b,
             Array& h_new, GruCache* cache);

void matmul_fwd(const Array& a, const Array& b, Array& out);
// c += a^T . b  and friends used by backward passes.
void add_at_b(const Array& a, const Array& b, Array& c);   // c += a^T b
void add_a_bt(const Array& a, const Array& b, Array& c);   // c += a b^T
void add_matmul(const Array& a, const Array& b, Array& c); // c += a b

}  // namespace kernels

// Gradient clipping by global L2 norm; returns the pre-clip norm.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

}  // namespace rwmlab
