#include "rwmlab/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>

namespace rwmlab {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap cmap(const Array& a, std::size_t r, std::size_t c) { return CMap(a.data.data(), r, c); }
MMap mmap(Array& a, std::size_t r, std::size_t c) { return MMap(a.data.data(), r, c); }

}  // namespace

namespace kernels {

void matmul_fwd(const Array& a, const Array& b, Array& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  mmap(out, m, n).noalias() = cmap(a, m, k) * cmap(b, k, n);
}

void add_matmul(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  mmap(c, m, n).noalias() += cmap(a, m, k) * cmap(b, k, n);
}

void add_at_b(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  mmap(c, k, n).noalias() += cmap(a, m, k).transpose() * cmap(b, m, n);
}

void add_a_bt(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  mmap(c, m, n).noalias() += cmap(a, m, k) * cmap(b, n, k).transpose();
}

void affine_fwd(const Array& x, const Array& w, const Array& b, Array& out) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  mmap(out, m, n).noalias() = cmap(x, m, k) * cmap(w, k, n);
  MMap o = mmap(out, m, n);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), n);
}

void gru_fwd(const Array& x, const Array& h, const Array& wx, const Array& wh, const Array& b,
             Array& h_new, GruCache* cache) {
  const std::size_t batch = x.rows();
  const std::size_t hd = h.cols();
  Array gates({batch, 3 * hd});
  affine_fwd(x, wx, b, gates);
  Array gh({batch, 3 * hd});
  matmul_fwd(h, wh, gh);

  h_new = Array::zeros({batch, hd});
  Array z({batch, hd}), r({batch, hd}), n({batch, hd}), gh_n({batch, hd});
  for (std::size_t i = 0; i < batch; ++i) {
    const double* g = &gates.data[i * 3 * hd];
    const double* gh_row = &gh.data[i * 3 * hd];
    const double* hp = &h.data[i * hd];
    for (std::size_t j = 0; j < hd; ++j) {
      const double zj = 1.0 / (1.0 + std::exp(-(g[j] + gh_row[j])));
      const double rj = 1.0 / (1.0 + std::exp(-(g[hd + j] + gh_row[hd + j])));
      const double ghn = gh_row[2 * hd + j];
      const double nj = std::tanh(g[2 * hd + j] + rj * ghn);
      h_new.data[i * hd + j] = (1.0 - zj) * nj + zj * hp[j];
      z.data[i * hd + j] = zj;
      r.data[i * hd + j] = rj;
      n.data[i * hd + j] = nj;
      gh_n.data[i * hd + j] = ghn;
    }
  }
  if (cache) {
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->n = std::move(n);
    cache->gh_n = std::move(gh_n);
  }
}

}  // namespace kernels

Var Tape::fresh(Array v) {
  vals_.push_back(std::move(v));
  adjs_.emplace_back();
  nodes_.push_back({nullptr});
  return Var{static_cast<int>(vals_.size()) - 1};
}

void Tape::check(Var v, const char* op) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= vals_.size())
    throw UsageError(std::string(op) + ": invalid tape variable");
}

Var Tape::constant(Array v) { return fresh(std::move(v)); }

Var Tape::param(Parameter& p) {
  Var v = fresh(p.value);
  bindings_.emplace_back(v.id, &p);
  return v;
}

Var Tape::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  require_same_shape(vals_[a.id], vals_[b.id], "add");
  Array out = vals_[a.id];
  const Array& bb = vals_[b.id];
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bb.data[i];
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      t.adjs_[a.id].data[i] += g.data[i];
      t.adjs_[b.id].data[i] += g.data[i];
    }
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  check(a, "sub");
  check(b, "sub");
  require_same_shape(vals_[a.id], vals_[b.id], "sub");
  Array out = vals_[a.id];
  const Array& bb = vals_[b.id];
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bb.data[i];
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      t.adjs_[a.id].data[i] += g.data[i];
      t.adjs_[b.id].data[i] -= g.data[i];
    }
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  require_same_shape(vals_[a.id], vals_[b.id], "mul");
  Array out = vals_[a.id];
  const Array& bb = vals_[b.id];
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bb.data[i];
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    const Array& bv = t.vals_[b.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      t.adjs_[a.id].data[i] += g.data[i] * bv.data[i];
      t.adjs_[b.id].data[i] += g.data[i] * av.data[i];
    }
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  check(a, "scale");
  Array out = vals_[a.id];
  for (auto& v : out.data) v *= s;
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o, s](Tape& t) {
    const Array& g = t.adjs_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) t.adjs_[a.id].data[i] += s * g.data[i];
  };
  return o;
}

Var Tape::add_scalar(Var a, double s) {
  check(a, "add_scalar");
  Array out = vals_[a.id];
  for (auto& v : out.data) v += s;
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) t.adjs_[a.id].data[i] += g.data[i];
  };
  return o;
}

Var Tape::square(Var a) {
  check(a, "square");
  Array out = vals_[a.id];
  for (auto& v : out.data) v *= v;
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      t.adjs_[a.id].data[i] += 2.0 * av.data[i] * g.data[i];
  };
  return o;
}

Var Tape::exp_(Var a) {
  check(a, "exp");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = std::exp(v);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& ov = t.vals_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) t.adjs_[a.id].data[i] += ov.data[i] * g.data[i];
  };
  return o;
}

Var Tape::sigmoid(Var a) {
  check(a, "sigmoid");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& ov = t.vals_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      t.adjs_[a.id].data[i] += ov.data[i] * (1.0 - ov.data[i]) * g.data[i];
  };
  return o;
}

Var Tape::tanh_(Var a) {
  check(a, "tanh");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = std::tanh(v);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& ov = t.vals_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      t.adjs_[a.id].data[i] += (1.0 - ov.data[i] * ov.data[i]) * g.data[i];
  };
  return o;
}

Var Tape::relu(Var a) {
  check(a, "relu");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av.data[i] > 0.0) t.adjs_[a.id].data[i] += g.data[i];
  };
  return o;
}

Var Tape::elu(Var a) {
  check(a, "elu");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = v > 0.0 ? v : std::expm1(v);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    const Array& ov = t.vals_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = av.data[i] > 0.0 ? 1.0 : ov.data[i] + 1.0;
      t.adjs_[a.id].data[i] += d * g.data[i];
    }
  };
  return o;
}

Var Tape::clamp(Var a, double lo, double hi) {
  check(a, "clamp");
  Array out = vals_[a.id];
  for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o, lo, hi](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av.data[i] >= lo && av.data[i] <= hi) t.adjs_[a.id].data[i] += g.data[i];
  };
  return o;
}

Var Tape::mul_const(Var a, const Array& m) {
  check(a, "mul_const");
  require_same_shape(vals_[a.id], m, "mul_const");
  Array out = vals_[a.id];
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= m.data[i];
  Var o = fresh(std::move(out));
  Array mask = m;
  nodes_[o.id].back = [a, o, mask = std::move(mask)](Tape& t) {
    const Array& g = t.adjs_[o.id];
    for (std::size_t i = 0; i < g.size(); ++i)
      t.adjs_[a.id].data[i] += mask.data[i] * g.data[i];
  };
  return o;
}

Var Tape::minimum(Var a, Var b) {
  check(a, "minimum");
  check(b, "minimum");
  require_same_shape(vals_[a.id], vals_[b.id], "minimum");
  Array out = vals_[a.id];
  const Array& bb = vals_[b.id];
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::min(out.data[i], bb.data[i]);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& av = t.vals_[a.id];
    const Array& bv = t.vals_[b.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av.data[i] <= bv.data[i])
        t.adjs_[a.id].data[i] += g.data[i];
      else
        t.adjs_[b.id].data[i] += g.data[i];
    }
  };
  return o;
}

Var Tape::broadcast_rows(Var row, std::size_t rows) {
  check(row, "broadcast_rows");
  const Array& v = vals_[row.id];
  const std::size_t c = v.size();
  Array out({rows, c});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = v.data[j];
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [row, o, rows, c](Tape& t) {
    const Array& g = t.adjs_[o.id];
    Array& ga = t.adjs_[row.id];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.data[j] += g.data[i * c + j];
  };
  return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  std::size_t rows = 0, total = 0;
  for (auto p : parts) {
    check(p, "concat_cols");
    const Array& v = vals_[p.id];
    if (rows == 0) rows = v.rows();
    if (v.rows() != rows) throw ConfigError("concat_cols: row mismatch");
    total += v.cols();
  }
  Array out({rows, total});
  std::size_t off = 0;
  for (auto p : parts) {
    const Array& v = vals_[p.id];
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) out.data[i * total + off + j] = v.data[i * c + j];
    off += c;
  }
  Var o = fresh(std::move(out));
  std::vector<Var> ps = parts;
  nodes_[o.id].back = [ps, o, rows, total](Tape& t) {
    const Array& g = t.adjs_[o.id];
    std::size_t off2 = 0;
    for (auto p : ps) {
      Array& ga = t.adjs_[p.id];
      const std::size_t c = t.vals_[p.id].cols();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) ga.data[i * c + j] += g.data[i * total + off2 + j];
      off2 += c;
    }
  };
  return o;
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  check(a, "slice_cols");
  const Array& v = vals_[a.id];
  if (c1 > v.cols() || c0 >= c1) throw UsageError("slice_cols: bad range");
  const std::size_t rows = v.rows(), c = v.cols(), w = c1 - c0;
  Array out({rows, w});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = v.data[i * c + c0 + j];
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o, c0, rows, c, w](Tape& t) {
    const Array& g = t.adjs_[o.id];
    Array& ga = t.adjs_[a.id];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) ga.data[i * c + c0 + j] += g.data[i * w + j];
  };
  return o;
}

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const Array& av = vals_[a.id];
  const Array& bv = vals_[b.id];
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw ConfigError("matmul: shape mismatch " + av.shape_str() + " x " + bv.shape_str());
  Array out({av.rows(), bv.cols()});
  kernels::matmul_fwd(av, bv, out);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    kernels::add_a_bt(g, t.vals_[b.id], t.adjs_[a.id]);  // dA += G B^T
    kernels::add_at_b(t.vals_[a.id], g, t.adjs_[b.id]);  // dB += A^T G
  };
  return o;
}

Var Tape::affine(Var x, Var w, Var b) {
  check(x, "affine");
  check(w, "affine");
  check(b, "affine");
  const Array& xv = vals_[x.id];
  const Array& wv = vals_[w.id];
  const Array& bv = vals_[b.id];
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows() || bv.size() != wv.cols())
    throw ConfigError("affine: shape mismatch input " + xv.shape_str() + ", weights " +
                      wv.shape_str() + ", bias " + bv.shape_str());
  Array out({xv.rows(), wv.cols()});
  kernels::affine_fwd(xv, wv, bv, out);
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [x, w, b, o](Tape& t) {
    const Array& g = t.adjs_[o.id];
    kernels::add_a_bt(g, t.vals_[w.id], t.adjs_[x.id]);
    kernels::add_at_b(t.vals_[x.id], g, t.adjs_[w.id]);
    Array& gb = t.adjs_[b.id];
    const std::size_t rows = g.rows(), cols = g.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) gb.data[j] += g.data[i * cols + j];
  };
  return o;
}

Var Tape::gru_cell(Var x, Var h, const GruParamVars& p) {
  check(x, "gru_cell");
  check(h, "gru_cell");
  const Array& xv = vals_[x.id];
  const Array& hv = vals_[h.id];
  const Array& wxv = vals_[p.wx.id];
  const Array& whv = vals_[p.wh.id];
  const Array& bv = vals_[p.b.id];
  const std::size_t hd = hv.cols();
  if (xv.rows() != hv.rows() || wxv.rows() != xv.cols() || wxv.cols() != 3 * hd ||
      whv.rows() != hd || whv.cols() != 3 * hd || bv.size() != 3 * hd)
    throw ConfigError("gru_cell: shape mismatch input " + xv.shape_str() + ", hidden " +
                      hv.shape_str() + ", wx " + wxv.shape_str());
  Array h_new;
  auto cache = std::make_shared<kernels::GruCache>();
  kernels::gru_fwd(xv, hv, wxv, whv, bv, h_new, cache.get());
  Var o = fresh(std::move(h_new));
  GruParamVars pv = p;
  nodes_[o.id].back = [x, h, pv, o, cache](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& hv2 = t.vals_[h.id];
    const std::size_t batch = g.rows(), hd2 = g.cols();
    // Gate pre-activation gradients, packed z | r | n.
    Array dg({batch, 3 * hd2});
    Array& dh = t.adjs_[h.id];
    const auto& c = *cache;
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < hd2; ++j) {
        const std::size_t ij = i * hd2 + j;
        const double go = g.data[ij];
        const double z = c.z.data[ij], r = c.r.data[ij], n = c.n.data[ij];
        const double dz = go * (hv2.data[ij] - n);
        const double dn = go * (1.0 - z);
        dh.data[ij] += go * z;
        const double dn_pre = dn * (1.0 - n * n);
        const double dr = dn_pre * c.gh_n.data[ij];
        dg.data[i * 3 * hd2 + j] = dz * z * (1.0 - z);
        dg.data[i * 3 * hd2 + hd2 + j] = dr * r * (1.0 - r);
        dg.data[i * 3 * hd2 + 2 * hd2 + j] = dn_pre;
      }
    }
    // wh's candidate block sees dn_pre*r instead of dn_pre; gh = h.wh.
    Array dgh = dg;
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < hd2; ++j)
        dgh.data[i * 3 * hd2 + 2 * hd2 + j] *= c.r.data[i * hd2 + j];

    kernels::add_a_bt(dg, t.vals_[pv.wx.id], t.adjs_[x.id]);     // dx += dg wx^T
    kernels::add_at_b(t.vals_[x.id], dg, t.adjs_[pv.wx.id]);     // dwx += x^T dg
    kernels::add_a_bt(dgh, t.vals_[pv.wh.id], t.adjs_[h.id]);    // dh += dgh wh^T
    kernels::add_at_b(hv2, dgh, t.adjs_[pv.wh.id]);              // dwh += h^T dgh
    Array& gb = t.adjs_[pv.b.id];
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < 3 * hd2; ++j) gb.data[j] += dg.data[i * 3 * hd2 + j];
  };
  return o;
}

Var Tape::reparam_sample(Var mean, Var log_std, const Array& noise) {
  check(mean, "reparam_sample");
  check(log_std, "reparam_sample");
  const Array& mv = vals_[mean.id];
  const Array& sv = vals_[log_std.id];
  require_same_shape(mv, sv, "reparam_sample");
  require_same_shape(mv, noise, "reparam_sample");
  Array out = mv;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] += std::exp(sv.data[i]) * noise.data[i];
  Var o = fresh(std::move(out));
  Array nz = noise;
  nodes_[o.id].back = [mean, log_std, o, nz = std::move(nz)](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& sv2 = t.vals_[log_std.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      t.adjs_[mean.id].data[i] += g.data[i];
      t.adjs_[log_std.id].data[i] += g.data[i] * std::exp(sv2.data[i]) * nz.data[i];
    }
  };
  return o;
}

Var Tape::gaussian_nll(Var mean, Var log_std, const Array& target) {
  check(mean, "gaussian_nll");
  check(log_std, "gaussian_nll");
  const Array& mv = vals_[mean.id];
  const Array& sv = vals_[log_std.id];
  require_same_shape(mv, sv, "gaussian_nll");
  require_same_shape(mv, target, "gaussian_nll");
  Array out = mv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double zi = (target.data[i] - mv.data[i]) * std::exp(-sv.data[i]);
    out.data[i] = sv.data[i] + kHalfLog2Pi + 0.5 * zi * zi;
  }
  Var o = fresh(std::move(out));
  Array tgt = target;
  nodes_[o.id].back = [mean, log_std, o, tgt = std::move(tgt)](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& mv2 = t.vals_[mean.id];
    const Array& sv2 = t.vals_[log_std.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double inv_var = std::exp(-2.0 * sv2.data[i]);
      const double diff = mv2.data[i] - tgt.data[i];
      t.adjs_[mean.id].data[i] += g.data[i] * diff * inv_var;
      t.adjs_[log_std.id].data[i] += g.data[i] * (1.0 - diff * diff * inv_var);
    }
  };
  return o;
}

Var Tape::bce_logits(Var logits, const Array& target) {
  check(logits, "bce_logits");
  const Array& lv = vals_[logits.id];
  require_same_shape(lv, target, "bce_logits");
  Array out = lv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = lv.data[i], y = target.data[i];
    out.data[i] = std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  Var o = fresh(std::move(out));
  Array tgt = target;
  nodes_[o.id].back = [logits, o, tgt = std::move(tgt)](Tape& t) {
    const Array& g = t.adjs_[o.id];
    const Array& lv2 = t.vals_[logits.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-lv2.data[i]));
      t.adjs_[logits.id].data[i] += g.data[i] * (s - tgt.data[i]);
    }
  };
  return o;
}

Var Tape::sum(Var a) {
  check(a, "sum");
  double acc = 0.0;
  for (double v : vals_[a.id].data) acc += v;
  Var o = fresh(Array::scalar(acc));
  nodes_[o.id].back = [a, o](Tape& t) {
    const double g = t.adjs_[o.id].data[0];
    for (auto& v : t.adjs_[a.id].data) v += g;
  };
  return o;
}

Var Tape::mean_all(Var a) {
  check(a, "mean_all");
  const std::size_t n = vals_[a.id].size();
  if (n == 0) throw UsageError("mean_all: empty array");
  double acc = 0.0;
  for (double v : vals_[a.id].data) acc += v;
  Var o = fresh(Array::scalar(acc / static_cast<double>(n)));
  nodes_[o.id].back = [a, o, n](Tape& t) {
    const double g = t.adjs_[o.id].data[0] / static_cast<double>(n);
    for (auto& v : t.adjs_[a.id].data) v += g;
  };
  return o;
}

Var Tape::row_sum(Var a) {
  check(a, "row_sum");
  const Array& v = vals_[a.id];
  const std::size_t rows = v.rows(), cols = v.cols();
  Array out({rows, 1});
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += v.data[i * cols + j];
    out.data[i] = acc;
  }
  Var o = fresh(std::move(out));
  nodes_[o.id].back = [a, o, rows, cols](Tape& t) {
    const Array& g = t.adjs_[o.id];
    Array& ga = t.adjs_[a.id];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) ga.data[i * cols + j] += g.data[i];
  };
  return o;
}

Var Tape::detach(Var a) {
  check(a, "detach");
  return fresh(vals_[a.id]);
}

void Tape::backward(Var loss) {
  check(loss, "backward");
  if (vals_[loss.id].size() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + vals_[loss.id].shape_str());
  for (std::size_t i = 0; i < adjs_.size(); ++i) {
    adjs_[i] = Array::zeros(vals_[i].shape);
  }
  adjs_[loss.id].data[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
  for (auto& [id, p] : bindings_) {
    const Array& g = adjs_[id];
    for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g.data[i];
  }
}

void Tape::clear() {
  vals_.clear();
  adjs_.clear();
  nodes_.clear();
  bindings_.clear();
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (auto& g : p->grad.data) g *= s;
  }
  return norm;
}

}  // namespace rwmlab
