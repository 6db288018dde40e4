#include "tscl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tscl/errors.hpp"

namespace tscl {

const MatX& Var::value() const { return tape_->nodes_[id_].val; }
const MatX& Var::grad() const { return tape_->nodes_[id_].grad; }

int Tape::push(MatX val, bool requires_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

MatX& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = MatX::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::accum(int id, const MatX& g) {
  if (!nodes_[id].requires_grad) return;
  grad_ref(id) += g;
}

Var Tape::constant(MatX v) { return Var(this, push(std::move(v), false, {})); }

Var Tape::leaf(MatX v, bool requires_grad) {
  return Var(this, push(std::move(v), requires_grad, {}));
}

Var Tape::param(Param& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var(this, it->second);
  int id = push(p.value, true, {});
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1)
    throw ShapeMismatch("backward expects a scalar loss node");
  grad_ref(loss.id_).setConstant(1.0);
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() != 0 && n.back) n.back(*this, i);
  }
}

void Tape::accumulate_param_grads() {
  for (auto& [p, id] : param_ids_) {
    const Node& n = nodes_[id];
    if (n.grad.size() != 0) p->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// elementwise / affine

Var Tape::add(Var a, Var b) {
  int ia = a.id_, ib = b.id_;
  return Var(this, push(a.value() + b.value(), rg(a) || rg(b),
                        [ia, ib](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          t.accum(ia, g);
                          t.accum(ib, g);
                        }));
}

Var Tape::sub(Var a, Var b) {
  int ia = a.id_, ib = b.id_;
  return Var(this, push(a.value() - b.value(), rg(a) || rg(b),
                        [ia, ib](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          t.accum(ia, g);
                          t.accum(ib, -g);
                        }));
}

Var Tape::cmul(Var a, Var b) {
  int ia = a.id_, ib = b.id_;
  return Var(this, push(a.value().cwiseProduct(b.value()), rg(a) || rg(b),
                        [ia, ib](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          t.accum(ia, g.cwiseProduct(t.nodes_[ib].val));
                          t.accum(ib, g.cwiseProduct(t.nodes_[ia].val));
                        }));
}

Var Tape::scale(Var a, Real s) {
  int ia = a.id_;
  return Var(this, push(a.value() * s, rg(a), [ia, s](Tape& t, int self) {
               t.accum(ia, t.nodes_[self].grad * s);
             }));
}

Var Tape::cmul_const(Var a, const MatX& mask) {
  int ia = a.id_;
  auto m = std::make_shared<MatX>(mask);
  return Var(this, push(a.value().cwiseProduct(mask), rg(a),
                        [ia, m](Tape& t, int self) {
                          t.accum(ia, t.nodes_[self].grad.cwiseProduct(*m));
                        }));
}

Var Tape::relu(Var a) {
  int ia = a.id_;
  return Var(this, push(a.value().cwiseMax(0.0), rg(a), [ia](Tape& t, int self) {
               const MatX& x = t.nodes_[ia].val;
               t.accum(ia, t.nodes_[self].grad.cwiseProduct(
                               (x.array() > 0.0).cast<Real>().matrix()));
             }));
}

Var Tape::gelu(Var a) {
  int ia = a.id_;
  const Real inv_sqrt2 = 0.7071067811865475244;
  MatX y = a.value().unaryExpr(
      [&](Real x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return Var(this, push(std::move(y), rg(a), [ia, inv_sqrt2](Tape& t, int self) {
               const Real inv_sqrt2pi = 0.3989422804014326779;
               const MatX& x = t.nodes_[ia].val;
               MatX d = x.unaryExpr([&](Real v) {
                 Real cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                 Real pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                 return cdf + v * pdf;
               });
               t.accum(ia, t.nodes_[self].grad.cwiseProduct(d));
             }));
}

Var Tape::tanh_act(Var a) {
  int ia = a.id_;
  return Var(this, push(a.value().array().tanh().matrix(), rg(a),
                        [ia](Tape& t, int self) {
                          const MatX& y = t.nodes_[self].val;
                          t.accum(ia, t.nodes_[self].grad.cwiseProduct(
                                          (1.0 - y.array().square()).matrix()));
                        }));
}

Var Tape::sigmoid_act(Var a) {
  int ia = a.id_;
  MatX y = a.value().unaryExpr([](Real x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
  });
  return Var(this, push(std::move(y), rg(a), [ia](Tape& t, int self) {
               const MatX& y = t.nodes_[self].val;
               t.accum(ia, t.nodes_[self].grad.cwiseProduct(
                               (y.array() * (1.0 - y.array())).matrix()));
             }));
}

Var Tape::linear(Var x, Var W, Var b) {
  if (x.cols() != W.cols())
    throw ShapeMismatch("linear: input width " + std::to_string(x.cols()) +
                        " vs weight fan-in " + std::to_string(W.cols()));
  int ix = x.id_, iw = W.id_, ib = b.id_;
  MatX y = x.value() * W.value().transpose();
  y.rowwise() += b.value().row(0);
  return Var(this, push(std::move(y), rg(x) || rg(W) || rg(b),
                        [ix, iw, ib](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          if (t.nodes_[ix].requires_grad)
                            t.accum(ix, g * t.nodes_[iw].val);
                          if (t.nodes_[iw].requires_grad)
                            t.accum(iw, g.transpose() * t.nodes_[ix].val);
                          if (t.nodes_[ib].requires_grad)
                            t.accum(ib, g.colwise().sum());
                        }));
}

Var Tape::matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dims differ");
  int ia = a.id_, ib = b.id_;
  return Var(this, push(a.value() * b.value(), rg(a) || rg(b),
                        [ia, ib](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          if (t.nodes_[ia].requires_grad)
                            t.accum(ia, g * t.nodes_[ib].val.transpose());
                          if (t.nodes_[ib].requires_grad)
                            t.accum(ib, t.nodes_[ia].val.transpose() * g);
                        }));
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  int ix = x.id_, ig = gamma.id_, ibt = beta.id_;
  const MatX& xv = x.value();
  const Index n = xv.cols();
  auto cache = std::make_shared<std::pair<MatX, VecX>>();  // xhat, inv_std
  MatX& xhat = cache->first;
  VecX& inv_std = cache->second;
  xhat.resize(xv.rows(), n);
  inv_std.resize(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    Real mu = xv.row(r).mean();
    Real var = (xv.row(r).array() - mu).square().mean();
    Real is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.row(r) = (xv.row(r).array() - mu) * is;
  }
  MatX y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return Var(
      this,
      push(std::move(y), rg(x) || rg(gamma) || rg(beta),
           [ix, ig, ibt, cache, n](Tape& t, int self) {
             const MatX& g = t.nodes_[self].grad;
             const MatX& xhat = cache->first;
             const VecX& inv_std = cache->second;
             const RowVecX gam = t.nodes_[ig].val.row(0);
             if (t.nodes_[ig].requires_grad)
               t.accum(ig, (g.array() * xhat.array()).colwise().sum().matrix());
             if (t.nodes_[ibt].requires_grad) t.accum(ibt, g.colwise().sum());
             if (t.nodes_[ix].requires_grad) {
               MatX dx(xhat.rows(), n);
               for (Index r = 0; r < xhat.rows(); ++r) {
                 RowVecX dy = (g.row(r).array() * gam.array()).matrix();
                 Real m1 = dy.mean();
                 Real m2 = (dy.array() * xhat.row(r).array()).mean();
                 dx.row(r) = ((dy.array() - m1 - xhat.row(r).array() * m2) *
                              inv_std[r])
                                 .matrix();
               }
               t.accum(ix, dx);
             }
           }));
}

// ---------------------------------------------------------------------------
// LSTM over a whole batch of windows

namespace {
struct LstmCache {
  std::vector<MatX> i, f, g, o, c, tc;  // per timestep, B x h
};
}  // namespace

Var Tape::lstm_seq(Var x, Var Wx, Var Wh, Var b, int B, int L) {
  const MatX& X = x.value();
  const MatX& wx = Wx.value();
  const MatX& wh = Wh.value();
  const int in = static_cast<int>(X.cols());
  const int h = static_cast<int>(wh.cols());
  if (wx.rows() != 4 * h || wx.cols() != in || X.rows() != Index(B) * L)
    throw ShapeMismatch("lstm_seq: inconsistent shapes");

  auto cache = std::make_shared<LstmCache>();
  cache->i.resize(L);
  cache->f.resize(L);
  cache->g.resize(L);
  cache->o.resize(L);
  cache->c.resize(L);
  cache->tc.resize(L);

  MatX H(Index(B) * L, h);
  MatX ht = MatX::Zero(B, h), ct = MatX::Zero(B, h);
  MatX Xt(B, in), Z(B, 4 * h);
  auto sig = [](Real v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  for (int t = 0; t < L; ++t) {
    for (int w = 0; w < B; ++w) Xt.row(w) = X.row(Index(w) * L + t);
    Z.noalias() = Xt * wx.transpose();
    Z.noalias() += ht * wh.transpose();
    Z.rowwise() += b.value().row(0);
    MatX it = Z.leftCols(h).unaryExpr(sig);
    MatX ft = Z.middleCols(h, h).unaryExpr(sig);
    MatX gt = Z.middleCols(2 * h, h).array().tanh().matrix();
    MatX ot = Z.rightCols(h).unaryExpr(sig);
    MatX cprev = ct;
    ct = ft.cwiseProduct(cprev) + it.cwiseProduct(gt);
    MatX tct = ct.array().tanh().matrix();
    ht = ot.cwiseProduct(tct);
    for (int w = 0; w < B; ++w) H.row(Index(w) * L + t) = ht.row(w);
    cache->i[t] = std::move(it);
    cache->f[t] = std::move(ft);
    cache->g[t] = std::move(gt);
    cache->o[t] = std::move(ot);
    cache->c[t] = ct;
    cache->tc[t] = std::move(tct);
  }

  int ix = x.id_, iwx = Wx.id_, iwh = Wh.id_, ib = b.id_;
  bool needs = rg(x) || rg(Wx) || rg(Wh) || rg(b);
  return Var(
      this,
      push(std::move(H), needs,
           [ix, iwx, iwh, ib, cache, B, L, in, h](Tape& t, int self) {
             const MatX& dH = t.nodes_[self].grad;
             const MatX& X = t.nodes_[ix].val;
             const MatX& wx = t.nodes_[iwx].val;
             const MatX& wh = t.nodes_[iwh].val;
             MatX dX = MatX::Zero(X.rows(), in);
             MatX dWx = MatX::Zero(4 * h, in);
             MatX dWh = MatX::Zero(4 * h, h);
             RowVecX db = RowVecX::Zero(4 * h);
             MatX dh_carry = MatX::Zero(B, h), dc = MatX::Zero(B, h);
             MatX dht(B, h), Xt(B, in), Hprev(B, h), dZ(B, 4 * h);
             for (int s = L - 1; s >= 0; --s) {
               for (int w = 0; w < B; ++w) {
                 dht.row(w) = dH.row(Index(w) * L + s);
                 Xt.row(w) = X.row(Index(w) * L + s);
               }
               dht += dh_carry;
               const MatX& it = cache->i[s];
               const MatX& ft = cache->f[s];
               const MatX& gt = cache->g[s];
               const MatX& ot = cache->o[s];
               const MatX& tct = cache->tc[s];
               MatX dot = dht.cwiseProduct(tct);
               dc += dht.cwiseProduct(ot).cwiseProduct(
                   (1.0 - tct.array().square()).matrix());
               MatX cprev = s > 0 ? cache->c[s - 1] : MatX::Zero(B, h);
               MatX dit = dc.cwiseProduct(gt);
               MatX dgt = dc.cwiseProduct(it);
               MatX dft = dc.cwiseProduct(cprev);
               dc = dc.cwiseProduct(ft);
               dZ.leftCols(h) =
                   dit.cwiseProduct(it).cwiseProduct((1.0 - it.array()).matrix());
               dZ.middleCols(h, h) =
                   dft.cwiseProduct(ft).cwiseProduct((1.0 - ft.array()).matrix());
               dZ.middleCols(2 * h, h) =
                   dgt.cwiseProduct((1.0 - gt.array().square()).matrix());
               dZ.rightCols(h) =
                   dot.cwiseProduct(ot).cwiseProduct((1.0 - ot.array()).matrix());
               if (s > 0) {
                 for (int w = 0; w < B; ++w)
                   Hprev.row(w) =
                       cache->o[s - 1].row(w).cwiseProduct(cache->tc[s - 1].row(w));
               } else {
                 Hprev.setZero();
               }
               dWx.noalias() += dZ.transpose() * Xt;
               dWh.noalias() += dZ.transpose() * Hprev;
               db += dZ.colwise().sum();
               dh_carry.noalias() = dZ * wh;
               if (t.nodes_[ix].requires_grad) {
                 MatX dXt = dZ * wx;
                 for (int w = 0; w < B; ++w) dX.row(Index(w) * L + s) = dXt.row(w);
               }
             }
             t.accum(ix, dX);
             t.accum(iwx, dWx);
             t.accum(iwh, dWh);
             t.accum(ib, db);
           }));
}

// ---------------------------------------------------------------------------
// dilated causal convolution

Var Tape::causal_conv(Var x, Var W, Var b, int kernel, int dilation, int B, int L) {
  const MatX& X = x.value();
  const int in = static_cast<int>(X.cols());
  const MatX& w = W.value();
  const int out = static_cast<int>(w.rows());
  if (w.cols() != Index(in) * kernel)
    throw ShapeMismatch("causal_conv: weight width != in*kernel");
  MatX Y(X.rows(), out);
  Y.rowwise() = b.value().row(0);
  for (int j = 0; j < kernel; ++j) {
    const int lag = (kernel - 1 - j) * dilation;
    if (lag >= L) continue;
    MatX Z = X * w.middleCols(Index(j) * in, in).transpose();
    for (int wdw = 0; wdw < B; ++wdw)
      Y.middleRows(Index(wdw) * L + lag, L - lag) +=
          Z.middleRows(Index(wdw) * L, L - lag);
  }
  int ix = x.id_, iw = W.id_, ib = b.id_;
  return Var(
      this,
      push(std::move(Y), rg(x) || rg(W) || rg(b),
           [ix, iw, ib, kernel, dilation, B, L, in, out](Tape& t, int self) {
             const MatX& g = t.nodes_[self].grad;
             const MatX& X = t.nodes_[ix].val;
             const MatX& w = t.nodes_[iw].val;
             MatX dX = MatX::Zero(X.rows(), in);
             MatX dW = MatX::Zero(out, Index(in) * kernel);
             MatX dZ(X.rows(), out);
             for (int j = 0; j < kernel; ++j) {
               const int lag = (kernel - 1 - j) * dilation;
               if (lag >= L) continue;
               dZ.setZero();
               for (int wdw = 0; wdw < B; ++wdw)
                 dZ.middleRows(Index(wdw) * L, L - lag) =
                     g.middleRows(Index(wdw) * L + lag, L - lag);
               if (t.nodes_[ix].requires_grad)
                 dX.noalias() += dZ * w.middleCols(Index(j) * in, in);
               if (t.nodes_[iw].requires_grad)
                 dW.middleCols(Index(j) * in, in).noalias() += dZ.transpose() * X;
             }
             t.accum(ix, dX);
             t.accum(iw, dW);
             if (t.nodes_[ib].requires_grad) t.accum(ib, g.colwise().sum());
           }));
}

// ---------------------------------------------------------------------------
// attention

namespace attention {

int probsparse_u(Real c, int L) {
  if (L <= 1) return 1;
  int u = static_cast<int>(std::ceil(c * std::log(static_cast<Real>(L))));
  return std::max(1, std::min(u, L));
}

namespace {
RowVecX softmax_row(const RowVecX& s) {
  Real m = s.maxCoeff();
  RowVecX e = (s.array() - m).exp().matrix();
  return e / e.sum();
}
}  // namespace

MatX full(const MatX& Q, const MatX& K, const MatX& V) {
  const Real alpha = 1.0 / std::sqrt(static_cast<Real>(Q.cols()));
  MatX S = alpha * (Q * K.transpose());
  MatX out(Q.rows(), V.cols());
  for (Index i = 0; i < S.rows(); ++i)
    out.row(i) = softmax_row(S.row(i)) * V;
  return out;
}

MatX probsparse(const MatX& Q, const MatX& K, const MatX& V, Real c) {
  const int L = static_cast<int>(Q.rows());
  const int u = probsparse_u(c, L);
  if (u >= L) return full(Q, K, V);
  const Real alpha = 1.0 / std::sqrt(static_cast<Real>(Q.cols()));
  MatX S = alpha * (Q * K.transpose());
  VecX score(L);
  for (int i = 0; i < L; ++i)
    score[i] = S.row(i).maxCoeff() - S.row(i).mean();
  std::vector<int> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  RowVecX vmean = V.colwise().mean();
  MatX out(L, V.cols());
  for (int i = 0; i < L; ++i) out.row(i) = vmean;
  for (int r = 0; r < u; ++r) {
    int i = order[r];
    out.row(i) = softmax_row(S.row(i)) * V;
  }
  return out;
}

}  // namespace attention

namespace {
struct AttnCache {
  // per (window, head): selected query rows and their softmax weights
  std::vector<std::vector<int>> sel;
  std::vector<MatX> P;  // u x L
};
}  // namespace

Var Tape::multihead_attention(Var q, Var k, Var v, int B, int L, int heads, int u) {
  const MatX& Q = q.value();
  const MatX& K = k.value();
  const MatX& V = v.value();
  const int d = static_cast<int>(Q.cols());
  if (d % heads != 0) throw ShapeMismatch("attention: heads must divide dim");
  const int dh = d / heads;
  const Real alpha = 1.0 / std::sqrt(static_cast<Real>(dh));
  const bool sparse = u > 0 && u < L;

  auto cache = std::make_shared<AttnCache>();
  cache->sel.resize(std::size_t(B) * heads);
  cache->P.resize(std::size_t(B) * heads);

  MatX out(Q.rows(), d);
  for (int w = 0; w < B; ++w) {
    for (int h = 0; h < heads; ++h) {
      auto Qb = Q.block(Index(w) * L, Index(h) * dh, L, dh);
      auto Kb = K.block(Index(w) * L, Index(h) * dh, L, dh);
      auto Vb = V.block(Index(w) * L, Index(h) * dh, L, dh);
      MatX S = alpha * (Qb * Kb.transpose());
      std::vector<int> sel;
      if (sparse) {
        VecX score(L);
        for (int i = 0; i < L; ++i)
          score[i] = S.row(i).maxCoeff() - S.row(i).mean();
        std::vector<int> order(L);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return score[a] > score[b]; });
        sel.assign(order.begin(), order.begin() + u);
        std::sort(sel.begin(), sel.end());
      } else {
        sel.resize(L);
        std::iota(sel.begin(), sel.end(), 0);
      }
      MatX P(sel.size(), L);
      for (std::size_t r = 0; r < sel.size(); ++r) {
        RowVecX row = S.row(sel[r]);
        Real m = row.maxCoeff();
        RowVecX e = (row.array() - m).exp().matrix();
        P.row(r) = e / e.sum();
      }
      auto ob = out.block(Index(w) * L, Index(h) * dh, L, dh);
      if (sparse) {
        RowVecX vmean = Vb.colwise().mean();
        for (int i = 0; i < L; ++i) ob.row(i) = vmean;
      }
      for (std::size_t r = 0; r < sel.size(); ++r) ob.row(sel[r]) = P.row(r) * Vb;
      cache->sel[std::size_t(w) * heads + h] = std::move(sel);
      cache->P[std::size_t(w) * heads + h] = std::move(P);
    }
  }

  int iq = q.id_, ik = k.id_, iv = v.id_;
  return Var(
      this,
      push(std::move(out), rg(q) || rg(k) || rg(v),
           [iq, ik, iv, cache, B, L, heads, dh, alpha, sparse](Tape& t, int self) {
             const MatX& g = t.nodes_[self].grad;
             const MatX& Q = t.nodes_[iq].val;
             const MatX& K = t.nodes_[ik].val;
             const MatX& V = t.nodes_[iv].val;
             MatX dQ = MatX::Zero(Q.rows(), Q.cols());
             MatX dK = MatX::Zero(K.rows(), K.cols());
             MatX dV = MatX::Zero(V.rows(), V.cols());
             for (int w = 0; w < B; ++w) {
               for (int h = 0; h < heads; ++h) {
                 const auto& sel = cache->sel[std::size_t(w) * heads + h];
                 const MatX& P = cache->P[std::size_t(w) * heads + h];
                 auto Qb = Q.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto Kb = K.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto Vb = V.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto gb = g.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto dQb = dQ.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto dKb = dK.block(Index(w) * L, Index(h) * dh, L, dh);
                 auto dVb = dV.block(Index(w) * L, Index(h) * dh, L, dh);
                 if (sparse) {
                   // rows not selected emitted colwise-mean of V
                   std::vector<char> is_sel(L, 0);
                   for (int i : sel) is_sel[i] = 1;
                   RowVecX gsum = RowVecX::Zero(dh);
                   for (int i = 0; i < L; ++i)
                     if (!is_sel[i]) gsum += gb.row(i);
                   gsum /= static_cast<Real>(L);
                   dVb.rowwise() += gsum;
                 }
                 for (std::size_t r = 0; r < sel.size(); ++r) {
                   const int i = sel[r];
                   const RowVecX p = P.row(r);
                   const RowVecX go = gb.row(i);
                   dVb.noalias() += p.transpose() * go;
                   RowVecX dp = go * Vb.transpose();  // 1 x L
                   Real dot = (dp.array() * p.array()).sum();
                   RowVecX ds = (p.array() * (dp.array() - dot)).matrix() * alpha;
                   dQb.row(i).noalias() += ds * Kb;
                   dKb.noalias() += ds.transpose() * Qb.row(i);
                 }
               }
             }
             t.accum(iq, dQ);
             t.accum(ik, dK);
             t.accum(iv, dV);
           }));
}

// ---------------------------------------------------------------------------
// time-axis reshaping ops

Var Tape::max_pool_time(Var x, int B, int L, int* L_out) {
  const MatX& X = x.value();
  const int C = static_cast<int>(X.cols());
  const int Lo = (L + 1) / 2;
  if (L_out) *L_out = Lo;
  MatX Y(Index(B) * Lo, C);
  auto arg = std::make_shared<Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>>(
      Index(B) * Lo, C);
  for (int w = 0; w < B; ++w) {
    for (int s = 0; s < Lo; ++s) {
      const Index r0 = Index(w) * L + 2 * s;
      const Index ro = Index(w) * Lo + s;
      if (2 * s + 1 < L) {
        for (int c = 0; c < C; ++c) {
          if (X(r0, c) >= X(r0 + 1, c)) {
            Y(ro, c) = X(r0, c);
            (*arg)(ro, c) = 0;
          } else {
            Y(ro, c) = X(r0 + 1, c);
            (*arg)(ro, c) = 1;
          }
        }
      } else {
        Y.row(ro) = X.row(r0);
        arg->row(ro).setZero();
      }
    }
  }
  int ix = x.id_;
  return Var(this, push(std::move(Y), rg(x),
                        [ix, arg, B, L, Lo, C](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          MatX dX = MatX::Zero(Index(B) * L, C);
                          for (int w = 0; w < B; ++w)
                            for (int s = 0; s < Lo; ++s) {
                              const Index ro = Index(w) * Lo + s;
                              for (int c = 0; c < C; ++c)
                                dX(Index(w) * L + 2 * s + (*arg)(ro, c), c) +=
                                    g(ro, c);
                            }
                          t.accum(ix, dX);
                        }));
}

Var Tape::slice_time(Var x, int B, int L, int t0, int t1) {
  const MatX& X = x.value();
  const int C = static_cast<int>(X.cols());
  const int n = t1 - t0;
  MatX Y(Index(B) * n, C);
  for (int w = 0; w < B; ++w)
    Y.middleRows(Index(w) * n, n) = X.middleRows(Index(w) * L + t0, n);
  int ix = x.id_;
  return Var(this, push(std::move(Y), rg(x),
                        [ix, B, L, t0, n, C](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          MatX dX = MatX::Zero(Index(B) * L, C);
                          for (int w = 0; w < B; ++w)
                            dX.middleRows(Index(w) * L + t0, n) =
                                g.middleRows(Index(w) * n, n);
                          t.accum(ix, dX);
                        }));
}

Var Tape::gather_time(Var x, int B, int L, const std::vector<int>& idx) {
  const MatX& X = x.value();
  const int C = static_cast<int>(X.cols());
  MatX Y(B, C);
  for (int w = 0; w < B; ++w) Y.row(w) = X.row(Index(w) * L + idx[w]);
  int ix = x.id_;
  auto id2 = std::make_shared<std::vector<int>>(idx);
  return Var(this, push(std::move(Y), rg(x),
                        [ix, id2, B, L, C](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          MatX dX = MatX::Zero(Index(B) * L, C);
                          for (int w = 0; w < B; ++w)
                            dX.row(Index(w) * L + (*id2)[w]) = g.row(w);
                          t.accum(ix, dX);
                        }));
}

Var Tape::readout_last(Var x, int B, int L, int T) {
  const MatX& X = x.value();
  const int C = static_cast<int>(X.cols());
  MatX Y = MatX::Zero(B, Index(T) * C);
  for (int w = 0; w < B; ++w)
    for (int j = 0; j < T; ++j) {
      const int t = L - T + j;
      if (t >= 0) Y.block(w, Index(j) * C, 1, C) = X.row(Index(w) * L + t);
    }
  int ix = x.id_;
  return Var(this, push(std::move(Y), rg(x),
                        [ix, B, L, T, C](Tape& t, int self) {
                          const MatX& g = t.nodes_[self].grad;
                          MatX dX = MatX::Zero(Index(B) * L, C);
                          for (int w = 0; w < B; ++w)
                            for (int j = 0; j < T; ++j) {
                              const int s = L - T + j;
                              if (s >= 0)
                                dX.row(Index(w) * L + s) +=
                                    g.block(w, Index(j) * C, 1, C);
                            }
                          t.accum(ix, dX);
                        }));
}

Var Tape::slice_cols(Var x, Index c0, Index c1) {
  const MatX& X = x.value();
  MatX Y = X.middleCols(c0, c1 - c0);
  int ix = x.id_;
  return Var(this, push(std::move(Y), rg(x), [ix, c0, c1](Tape& t, int self) {
               const MatX& g = t.nodes_[self].grad;
               MatX dX = MatX::Zero(t.nodes_[ix].val.rows(),
                                    t.nodes_[ix].val.cols());
               dX.middleCols(c0, c1 - c0) = g;
               t.accum(ix, dX);
             }));
}

// ---------------------------------------------------------------------------
// losses

Var Tape::mse(Var pred, const MatX& target) {
  const MatX& p = pred.value();
  if (p.rows() != target.rows() || p.cols() != target.cols())
    throw ShapeMismatch("mse: prediction and target shapes differ");
  auto tgt = std::make_shared<MatX>(target);
  const Real n = static_cast<Real>(p.size());
  MatX out(1, 1);
  out(0, 0) = (p - target).squaredNorm() / n;
  int ip = pred.id_;
  return Var(this, push(std::move(out), rg(pred), [ip, tgt, n](Tape& t, int self) {
               const Real g = t.nodes_[self].grad(0, 0);
               t.accum(ip, (2.0 * g / n) * (t.nodes_[ip].val - *tgt));
             }));
}

Var Tape::mean_all(Var x) {
  const Real n = static_cast<Real>(x.value().size());
  MatX out(1, 1);
  out(0, 0) = x.value().mean();
  int ix = x.id_;
  return Var(this, push(std::move(out), rg(x), [ix, n](Tape& t, int self) {
               const Real g = t.nodes_[self].grad(0, 0);
               t.accum(ix, MatX::Constant(t.nodes_[ix].val.rows(),
                                          t.nodes_[ix].val.cols(), g / n));
             }));
}

namespace {
// d cos(a, x) / d a for fixed x, using clamped norms.
inline RowVecX cos_grad_wrt_a(const RowVecX& a, const RowVecX& xhat, Real sim) {
  Real na = std::max(a.norm(), Real(1e-12));
  RowVecX ahat = a / na;
  return (xhat - sim * ahat) / na;
}
}  // namespace

Var Tape::info_nce_batch(Var queries, const MatX& positives, const MatX& negatives,
                         Real tau, bool in_batch) {
  if (tau <= 0) throw NonPositiveTemperature("tau = " + std::to_string(tau));
  const MatX& Q = queries.value();
  const Index Bn = Q.rows();
  if (positives.rows() != Bn || positives.cols() != Q.cols())
    throw ShapeMismatch("info_nce_batch: positives shape");
  auto pos = std::make_shared<MatX>(positives);
  auto neg = std::make_shared<MatX>(negatives);

  // normalized key matrices (keys are constants)
  auto norm_rows = [](const MatX& m) {
    MatX r = m;
    for (Index i = 0; i < r.rows(); ++i)
      r.row(i) /= std::max(r.row(i).norm(), Real(1e-12));
    return r;
  };
  auto phat = std::make_shared<MatX>(norm_rows(positives));
  auto nhat = std::make_shared<MatX>(norm_rows(negatives));

  const Index K = negatives.rows();
  Real total = 0;
  // cache softmax rows for backward
  auto probs = std::make_shared<MatX>(Bn, 1 + K + (in_batch ? Bn - 1 : 0));
  for (Index i = 0; i < Bn; ++i) {
    RowVecX a = Q.row(i);
    Real na = std::max(a.norm(), Real(1e-12));
    RowVecX ahat = a / na;
    const Index ncand = probs->cols();
    RowVecX logits(ncand);
    logits[0] = ahat.dot(phat->row(i)) / tau;
    for (Index j = 0; j < K; ++j) logits[1 + j] = ahat.dot(nhat->row(j)) / tau;
    if (in_batch) {
      Index c = 1 + K;
      for (Index j = 0; j < Bn; ++j)
        if (j != i) logits[c++] = ahat.dot(phat->row(j)) / tau;
    }
    Real m = logits.maxCoeff();
    RowVecX e = (logits.array() - m).exp().matrix();
    Real z = e.sum();
    probs->row(i) = e / z;
    total += std::log(z) + m - logits[0];
  }
  MatX out(1, 1);
  out(0, 0) = total / static_cast<Real>(Bn);

  int iq = queries.id_;
  bool ib = in_batch;
  return Var(
      this,
      push(std::move(out), rg(queries),
           [iq, pos, neg, phat, nhat, probs, tau, ib, K](Tape& t, int self) {
             const Real gscale = t.nodes_[self].grad(0, 0);
             const MatX& Q = t.nodes_[iq].val;
             const Index Bn = Q.rows();
             MatX dQ = MatX::Zero(Bn, Q.cols());
             for (Index i = 0; i < Bn; ++i) {
               RowVecX a = Q.row(i);
               Real na = std::max(a.norm(), Real(1e-12));
               RowVecX ahat = a / na;
               // dL/dsim_c = (p_c - [c==0]) / tau / Bn
               const Real coef = gscale / (tau * static_cast<Real>(Bn));
               auto add_term = [&](Real w, const RowVecX& key_hat) {
                 Real sim = ahat.dot(key_hat);
                 dQ.row(i) += w * coef * cos_grad_wrt_a(a, key_hat, sim);
               };
               add_term((*probs)(i, 0) - 1.0, phat->row(i));
               for (Index j = 0; j < K; ++j)
                 add_term((*probs)(i, 1 + j), nhat->row(j));
               if (ib) {
                 Index c = 1 + K;
                 for (Index j = 0; j < Bn; ++j)
                   if (j != i) add_term((*probs)(i, c++), phat->row(j));
               }
             }
             t.accum(iq, dQ);
           }));
}

// ---------------------------------------------------------------------------
// dual-view contrastive terms (shared kernel)

namespace {

// One contrast group: two aligned row sets A, B (n x d). For each direction
// and anchor i, positive is the co-indexed row of the other view; negatives
// are all other rows of both views. Returns summed loss over 2n anchors and
// accumulates dA, dB scaled by `scale`.
Real contrast_group(const MatX& A, const MatX& B, Real tau, Real scale,
                    MatX& dA, MatX& dB) {
  const Index n = A.rows();
  auto norm_rows = [](const MatX& m, VecX& norms) {
    MatX r = m;
    norms.resize(m.rows());
    for (Index i = 0; i < r.rows(); ++i) {
      norms[i] = std::max(r.row(i).norm(), Real(1e-12));
      r.row(i) /= norms[i];
    }
    return r;
  };
  VecX normA, normB;
  MatX Ah = norm_rows(A, normA);
  MatX Bh = norm_rows(B, normB);
  MatX Sab = Ah * Bh.transpose();
  MatX Saa = Ah * Ah.transpose();
  MatX Sbb = Bh * Bh.transpose();

  MatX dSab = MatX::Zero(n, n), dSaa = MatX::Zero(n, n), dSbb = MatX::Zero(n, n);
  Real loss = 0;

  // direction X->Y: anchors from X, candidates = Sxy row + Sxx offdiag
  auto one_direction = [&](const MatX& Sxy, const MatX& Sxx, MatX& dSxy,
                           MatX& dSxx, bool transpose_xy) {
    for (Index i = 0; i < n; ++i) {
      RowVecX logits(2 * n - 1);
      for (Index j = 0; j < n; ++j)
        logits[j] = (transpose_xy ? Sxy(j, i) : Sxy(i, j)) / tau;
      Index c = n;
      for (Index j = 0; j < n; ++j)
        if (j != i) logits[c++] = Sxx(i, j) / tau;
      Real m = logits.maxCoeff();
      RowVecX e = (logits.array() - m).exp().matrix();
      Real z = e.sum();
      loss += std::log(z) + m - logits[i];
      RowVecX p = e / z;
      for (Index j = 0; j < n; ++j) {
        Real w = (p[j] - (j == i ? 1.0 : 0.0)) * scale / tau;
        if (transpose_xy)
          dSxy(j, i) += w;
        else
          dSxy(i, j) += w;
      }
      c = n;
      for (Index j = 0; j < n; ++j)
        if (j != i) dSxx(i, j) += p[c++] * scale / tau;
    }
  };
  one_direction(Sab, Saa, dSab, dSaa, false);
  one_direction(Sab, Sbb, dSab, dSbb, true);

  // S = Xh * Yh^T back to normalized rows, then through the normalization.
  MatX dAh = dSab * Bh + (dSaa + dSaa.transpose()) * Ah;
  MatX dBh = dSab.transpose() * Ah + (dSbb + dSbb.transpose()) * Bh;
  for (Index i = 0; i < n; ++i) {
    RowVecX g = dAh.row(i);
    dA.row(i) += (g - g.dot(Ah.row(i)) * Ah.row(i)) / normA[i];
    g = dBh.row(i);
    dB.row(i) += (g - g.dot(Bh.row(i)) * Bh.row(i)) / normB[i];
  }
  return loss;
}

}  // namespace

Var Tape::temporal_contrast(Var z1, Var z2, int B, int L, Real tau) {
  if (tau <= 0) throw NonPositiveTemperature("tau = " + std::to_string(tau));
  const MatX& Z1 = z1.value();
  const MatX& Z2 = z2.value();
  const int d = static_cast<int>(Z1.cols());
  if (L < 2) return constant(MatX::Zero(1, 1));  // no other timestamps
  auto dZ1 = std::make_shared<MatX>(MatX::Zero(Z1.rows(), d));
  auto dZ2 = std::make_shared<MatX>(MatX::Zero(Z2.rows(), d));
  const Real scale = 1.0 / (2.0 * B * L);
  Real loss = 0;
  for (int w = 0; w < B; ++w) {
    MatX dA = MatX::Zero(L, d), dB = MatX::Zero(L, d);
    loss += contrast_group(Z1.middleRows(Index(w) * L, L),
                           Z2.middleRows(Index(w) * L, L), tau, scale, dA, dB);
    dZ1->middleRows(Index(w) * L, L) = dA;
    dZ2->middleRows(Index(w) * L, L) = dB;
  }
  MatX out(1, 1);
  out(0, 0) = loss * scale;
  int i1 = z1.id_, i2 = z2.id_;
  return Var(this, push(std::move(out), rg(z1) || rg(z2),
                        [i1, i2, dZ1, dZ2](Tape& t, int self) {
                          const Real g = t.nodes_[self].grad(0, 0);
                          t.accum(i1, g * (*dZ1));
                          t.accum(i2, g * (*dZ2));
                        }));
}

Var Tape::instance_contrast(Var z1, Var z2, int B, int L, Real tau) {
  if (tau <= 0) throw NonPositiveTemperature("tau = " + std::to_string(tau));
  const MatX& Z1 = z1.value();
  const MatX& Z2 = z2.value();
  const int d = static_cast<int>(Z1.cols());
  if (B < 2) return constant(MatX::Zero(1, 1));
  auto dZ1 = std::make_shared<MatX>(MatX::Zero(Z1.rows(), d));
  auto dZ2 = std::make_shared<MatX>(MatX::Zero(Z2.rows(), d));
  const Real scale = 1.0 / (2.0 * B * L);
  Real loss = 0;
  MatX A(B, d), Bm(B, d);
  for (int s = 0; s < L; ++s) {
    for (int w = 0; w < B; ++w) {
      A.row(w) = Z1.row(Index(w) * L + s);
      Bm.row(w) = Z2.row(Index(w) * L + s);
    }
    MatX dA = MatX::Zero(B, d), dB = MatX::Zero(B, d);
    loss += contrast_group(A, Bm, tau, scale, dA, dB);
    for (int w = 0; w < B; ++w) {
      dZ1->row(Index(w) * L + s) += dA.row(w);
      dZ2->row(Index(w) * L + s) += dB.row(w);
    }
  }
  MatX out(1, 1);
  out(0, 0) = loss * scale;
  int i1 = z1.id_, i2 = z2.id_;
  return Var(this, push(std::move(out), rg(z1) || rg(z2),
                        [i1, i2, dZ1, dZ2](Tape& t, int self) {
                          const Real g = t.nodes_[self].grad(0, 0);
                          t.accum(i1, g * (*dZ1));
                          t.accum(i2, g * (*dZ2));
                        }));
}

}  // namespace tscl
