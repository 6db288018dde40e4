#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tscl/types.hpp"

namespace tscl {

// A named trainable tensor plus its gradient and Adam state. Stored in a
// ParamStore (std::deque keeps addresses stable while adding).
struct Param {
  std::string name;
  MatX value;
  MatX grad;
  MatX adam_m;
  MatX adam_v;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Index rows, Index cols) {
    items_.push_back(Param{name, MatX::Zero(rows, cols), MatX::Zero(rows, cols),
                           MatX::Zero(rows, cols), MatX::Zero(rows, cols)});
    return items_.back();
  }
  std::deque<Param>& items() { return items_; }
  const std::deque<Param>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }
  void zero_grads() {
    for (auto& p : items_) p.grad.setZero();
  }

 private:
  std::deque<Param> items_;
};

class Tape;

// Lightweight handle to a node in a Tape.
class Var {
 public:
  Var() = default;
  const MatX& value() const;
  const MatX& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense Eigen matrices. Sequence activations use a
// window-major layout: a batch of B windows of length L is one (B*L)-row
// matrix with row b*L + t holding window b, timestep t.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(MatX v);
  Var leaf(MatX v, bool requires_grad);
  // Memoized: the same Param registered twice yields the same node, so
  // gradients from parallel uses accumulate naturally.
  Var param(Param& p);

  // elementwise / affine
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  Var scale(Var a, Real s);
  Var cmul_const(Var a, const MatX& mask);
  Var relu(Var a);
  Var gelu(Var a);
  Var tanh_act(Var a);
  Var sigmoid_act(Var a);

  // y = x * W^T + b (rows broadcast); W: out x in, b: 1 x out
  Var linear(Var x, Var W, Var b);
  Var matmul(Var a, Var b);
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = 1e-5);

  // sequence ops (window-major layout)
  Var lstm_seq(Var x, Var Wx, Var Wh, Var b, int B, int L);
  // W: out x (in*kernel); tap j = W.middleCols(j*in, in) applies at lag
  // (kernel-1-j)*dilation, so the last tap reads the current timestep.
  Var causal_conv(Var x, Var W, Var b, int kernel, int dilation, int B, int L);
  // u <= 0 or u >= L selects every query (full attention).
  Var multihead_attention(Var q, Var k, Var v, int B, int L, int heads, int u);
  Var max_pool_time(Var x, int B, int L, int* L_out);
  Var slice_time(Var x, int B, int L, int t0, int t1);
  Var gather_time(Var x, int B, int L, const std::vector<int>& idx);
  Var readout_last(Var x, int B, int L, int T);
  Var slice_cols(Var x, Index c0, Index c1);

  // losses (1x1 outputs)
  Var mse(Var pred, const MatX& target);
  Var mean_all(Var x);
  // InfoNCE over a batch of anchors: positives.row(i) is anchor i's key;
  // negatives rows are shared negatives; with in_batch, keys of the other
  // anchors are added to each anchor's negative set.
  Var info_nce_batch(Var queries, const MatX& positives, const MatX& negatives,
                     Real tau, bool in_batch);
  // TS2Vec-style dual contrast between two aligned views, see loss module.
  Var temporal_contrast(Var z1, Var z2, int B, int L, Real tau);
  Var instance_contrast(Var z1, Var z2, int B, int L, Real tau);

  void backward(Var loss);
  // Adds accumulated node gradients into each registered Param's grad.
  void accumulate_param_grads();

  const MatX& value(int id) const { return nodes_[id].val; }
  const MatX& grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    MatX val;
    MatX grad;  // empty until touched by backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;  // (tape, own id)
  };

  friend class Var;

  int push(MatX val, bool requires_grad, std::function<void(Tape&, int)> back);
  bool rg(Var v) const { return nodes_[v.id_].requires_grad; }
  MatX& grad_ref(int id);         // allocates zeros on first touch
  void accum(int id, const MatX& g);

  std::vector<Node> nodes_;
  std::unordered_map<Param*, int> param_ids_;
  bool grad_enabled_;
};

// Analytic attention kernels shared by the graph op and the standalone
// module functions (loss-free oracle surface).
namespace attention {
// Full softmax attention for one (window, head): Q,K,V are L x dh.
MatX full(const MatX& Q, const MatX& K, const MatX& V);
// ProbSparse self-attention: top-u queries by max-minus-mean score get
// softmax attention, the rest emit the temporal mean of V.
// u = ceil(c * ln L), clamped to [1, L].
MatX probsparse(const MatX& Q, const MatX& K, const MatX& V, Real c);
int probsparse_u(Real c, int L);
}  // namespace attention

}  // namespace tscl
