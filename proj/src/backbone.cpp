#include "tscl/backbone.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "tscl/errors.hpp"

namespace tscl {

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::LSTM: return "lstm";
    case BackboneKind::TCN: return "tcn";
    case BackboneKind::Transformer: return "transformer";
  }
  return "?";
}

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "lstm") return BackboneKind::LSTM;
  if (s == "tcn") return BackboneKind::TCN;
  if (s == "transformer" || s == "informer") return BackboneKind::Transformer;
  throw ConfigError("unknown backbone kind '" + s + "'");
}

EncoderSpec EncoderSpec::defaults(BackboneKind kind, int input_dim) {
  EncoderSpec s;
  s.kind = kind;
  s.input_dim = input_dim;
  s.resolve();
  return s;
}

void EncoderSpec::resolve() {
  switch (kind) {
    case BackboneKind::LSTM:
      if (hidden_dim == 0) hidden_dim = 320;
      if (num_layers == 0) num_layers = 5;
      if (inner_dim == 0) inner_dim = 124;
      break;
    case BackboneKind::TCN:
      if (hidden_dim == 0) hidden_dim = 320;
      if (num_layers == 0) num_layers = 10;
      if (inner_dim == 0) inner_dim = 64;
      break;
    case BackboneKind::Transformer:
      if (hidden_dim == 0) hidden_dim = 128;
      if (num_layers == 0) num_layers = 5;
      if (inner_dim == 0) inner_dim = hidden_dim;
      break;
  }
  validate();
}

void EncoderSpec::validate() const {
  if (input_dim < 1) throw InvalidSpec("input_dim must be >= 1");
  if (hidden_dim < 1) throw InvalidSpec("hidden_dim must be >= 1");
  if (num_layers < 1) throw InvalidSpec("num_layers must be >= 1");
  if (kind == BackboneKind::TCN && kernel_size < 1)
    throw InvalidSpec("kernel_size must be >= 1");
  if (kind == BackboneKind::Transformer) {
    if (num_heads < 1) throw InvalidSpec("num_heads must be >= 1");
    if (hidden_dim % num_heads != 0)
      throw InvalidSpec("hidden_dim " + std::to_string(hidden_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
  }
}

void init_fan_in(MatX& W, Index fan_in, std::mt19937_64& rng) {
  const Real k = 1.0 / std::sqrt(static_cast<Real>(fan_in));
  std::uniform_real_distribution<Real> u(-k, k);
  for (Index c = 0; c < W.cols(); ++c)
    for (Index r = 0; r < W.rows(); ++r) W(r, c) = u(rng);
}

namespace {

Param& add_linear(ParamStore& ps, const std::string& name, Index out, Index in,
                  std::mt19937_64& rng) {
  Param& W = ps.add(name + ".W", out, in);
  init_fan_in(W.value, in, rng);
  ps.add(name + ".b", 1, out);
  return W;
}

void add_layer_norm(ParamStore& ps, const std::string& name, Index n) {
  Param& g = ps.add(name + ".gamma", 1, n);
  g.value.setOnes();
  ps.add(name + ".beta", 1, n);
}

MatX sinusoidal_positions(int L, int d) {
  MatX pe(L, d);
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < d; ++i) {
      const Real angle =
          t * std::exp(-std::log(10000.0) * (2.0 * (i / 2)) / d);
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace

Encoder build_encoder(const EncoderSpec& spec_in, std::uint64_t seed) {
  EncoderSpec spec = spec_in;
  spec.resolve();
  Encoder e;
  e.spec_ = spec;
  ParamStore& ps = e.params_;
  std::mt19937_64 rng(mix_seed(seed, 0xE0C0DE));

  const int m = spec.input_dim;
  const int d = spec.hidden_dim;
  const int inner = spec.inner_dim;

  switch (spec.kind) {
    case BackboneKind::LSTM: {
      add_linear(ps, "embed", inner, m, rng);
      for (int l = 0; l < spec.num_layers; ++l) {
        const std::string base = "lstm" + std::to_string(l);
        Param& wx = ps.add(base + ".Wx", 4 * inner, inner);
        init_fan_in(wx.value, inner, rng);
        Param& wh = ps.add(base + ".Wh", 4 * inner, inner);
        init_fan_in(wh.value, inner, rng);
        Param& b = ps.add(base + ".b", 1, 4 * inner);
        b.value.middleCols(inner, inner).setOnes();  // forget gate bias
      }
      add_linear(ps, "proj", d, inner, rng);
      break;
    }
    case BackboneKind::TCN: {
      add_linear(ps, "embed", inner, m, rng);
      const int k = spec.kernel_size;
      for (int l = 0; l <= spec.num_layers; ++l) {
        const bool final_block = l == spec.num_layers;
        const int cin = inner;
        const int cout = final_block ? d : inner;
        const std::string base = "block" + std::to_string(l);
        Param& w1 = ps.add(base + ".conv1.W", cout, Index(cin) * k);
        init_fan_in(w1.value, Index(cin) * k, rng);
        ps.add(base + ".conv1.b", 1, cout);
        Param& w2 = ps.add(base + ".conv2.W", cout, Index(cout) * k);
        init_fan_in(w2.value, Index(cout) * k, rng);
        ps.add(base + ".conv2.b", 1, cout);
        if (cin != cout) add_linear(ps, base + ".skip", cout, cin, rng);
      }
      break;
    }
    case BackboneKind::Transformer: {
      add_linear(ps, "embed", d, m, rng);
      for (int l = 0; l < spec.num_layers; ++l) {
        const std::string base = "layer" + std::to_string(l);
        add_layer_norm(ps, base + ".ln1", d);
        add_linear(ps, base + ".Wq", d, d, rng);
        add_linear(ps, base + ".Wk", d, d, rng);
        add_linear(ps, base + ".Wv", d, d, rng);
        add_linear(ps, base + ".Wo", d, d, rng);
        add_layer_norm(ps, base + ".ln2", d);
        add_linear(ps, base + ".ffn1", 2 * d, d, rng);
        add_linear(ps, base + ".ffn2", d, 2 * d, rng);
      }
      add_layer_norm(ps, "final_ln", d);
      break;
    }
  }
  return e;
}

namespace {

// Parameter lookup by name; build order is fixed so a flat cursor would also
// work, but names keep checkpoints self-describing.
struct ParamCursor {
  const ParamStore& ps;
  Param& get(const std::string& name) const {
    for (const Param& p : ps.items())
      if (p.name == name) return const_cast<Param&>(p);
    throw InvalidSpec("missing parameter " + name);
  }
};

}  // namespace

Var Encoder::forward(Tape& tape, Var x, int B, int L,
                     const EncodeOptions& opts) const {
  if (x.cols() != spec_.input_dim)
    throw ShapeMismatch("encode: input feature arity " + std::to_string(x.cols()) +
                        " != spec input_dim " + std::to_string(spec_.input_dim));
  if (x.rows() != Index(B) * L) throw ShapeMismatch("encode: rows != B*L");
  ParamCursor pc{params_};
  auto P = [&](const std::string& n) -> Var {
    Param& p = pc.get(n);
    return opts.train_params ? tape.param(p) : tape.constant(p.value);
  };

  Var h = tape.linear(x, P("embed.W"), P("embed.b"));
  if (opts.latent_keep) {
    MatX mask = *opts.latent_keep * RowVecX::Ones(h.cols());
    h = tape.cmul_const(h, mask);
  }

  switch (spec_.kind) {
    case BackboneKind::LSTM: {
      for (int l = 0; l < spec_.num_layers; ++l) {
        const std::string base = "lstm" + std::to_string(l);
        h = tape.lstm_seq(h, P(base + ".Wx"), P(base + ".Wh"), P(base + ".b"), B, L);
      }
      h = tape.linear(h, P("proj.W"), P("proj.b"));
      break;
    }
    case BackboneKind::TCN: {
      const int k = spec_.kernel_size;
      for (int l = 0; l <= spec_.num_layers; ++l) {
        const bool final_block = l == spec_.num_layers;
        const int dilation = 1 << l;
        const std::string base = "block" + std::to_string(l);
        Var skip = final_block
                       ? tape.linear(h, P(base + ".skip.W"), P(base + ".skip.b"))
                       : h;
        Var y = tape.gelu(h);
        y = tape.causal_conv(y, P(base + ".conv1.W"), P(base + ".conv1.b"), k,
                             dilation, B, L);
        y = tape.gelu(y);
        y = tape.causal_conv(y, P(base + ".conv2.W"), P(base + ".conv2.b"), k,
                             dilation, B, L);
        h = tape.add(y, skip);
      }
      break;
    }
    case BackboneKind::Transformer: {
      const int d = spec_.hidden_dim;
      MatX pe = sinusoidal_positions(L, d);
      MatX pe_batch(Index(B) * L, d);
      for (int w = 0; w < B; ++w) pe_batch.middleRows(Index(w) * L, L) = pe;
      h = tape.add(h, tape.constant(std::move(pe_batch)));
      const int u = spec_.attention == AttentionKind::Full
                        ? 0
                        : attention::probsparse_u(spec_.probsparse_factor, L);
      for (int l = 0; l < spec_.num_layers; ++l) {
        const std::string base = "layer" + std::to_string(l);
        Var x1 = tape.layer_norm(h, P(base + ".ln1.gamma"), P(base + ".ln1.beta"));
        Var q = tape.linear(x1, P(base + ".Wq.W"), P(base + ".Wq.b"));
        Var kk = tape.linear(x1, P(base + ".Wk.W"), P(base + ".Wk.b"));
        Var v = tape.linear(x1, P(base + ".Wv.W"), P(base + ".Wv.b"));
        Var a = tape.multihead_attention(q, kk, v, B, L, spec_.num_heads, u);
        a = tape.linear(a, P(base + ".Wo.W"), P(base + ".Wo.b"));
        h = tape.add(h, a);
        Var x2 = tape.layer_norm(h, P(base + ".ln2.gamma"), P(base + ".ln2.beta"));
        Var f = tape.linear(x2, P(base + ".ffn1.W"), P(base + ".ffn1.b"));
        f = tape.relu(f);
        f = tape.linear(f, P(base + ".ffn2.W"), P(base + ".ffn2.b"));
        h = tape.add(h, f);
      }
      h = tape.layer_norm(h, P("final_ln.gamma"), P("final_ln.beta"));
      break;
    }
  }
  return h;
}

MatX Encoder::encode(const MatX& x, int B, int L) const {
  Tape tape(false);
  Var in = tape.constant(x);
  EncodeOptions opts;
  opts.train_params = false;
  return forward(tape, in, B, L, opts).value();
}

Encoder Encoder::clone() const {
  Encoder e;
  e.spec_ = spec_;
  for (const Param& p : params_.items()) {
    Param& q = e.params_.add(p.name, p.value.rows(), p.value.cols());
    q.value = p.value;
  }
  return e;
}

void Encoder::copy_values_from(const Encoder& other) {
  if (!(spec_ == other.spec_))
    throw CheckpointMismatch("encoder spec differs in copy_values_from");
  auto it = params_.items().begin();
  auto jt = other.params_.items().begin();
  for (; it != params_.items().end(); ++it, ++jt) it->value = jt->value;
}

std::uint64_t params_checksum(const ParamStore& store) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over raw value bytes
  auto feed = [&h](const void* data, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Param& p : store.items()) {
    feed(p.name.data(), p.name.size());
    feed(p.value.data(), sizeof(Real) * p.value.size());
  }
  return h;
}

std::uint64_t Encoder::checksum() const { return params_checksum(params_); }

int tcn_receptive_field(const EncoderSpec& spec_in) {
  EncoderSpec spec = spec_in;
  spec.resolve();
  if (spec.kind != BackboneKind::TCN)
    throw InvalidSpec("receptive field defined for TCN only");
  int r = 1;
  for (int l = 0; l <= spec.num_layers; ++l)
    r += 2 * (spec.kernel_size - 1) * (1 << l);
  return r;
}

}  // namespace tscl
