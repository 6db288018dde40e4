#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tscl/graph.hpp"
#include "tscl/types.hpp"

namespace tscl {

enum class BackboneKind { LSTM, TCN, Transformer };
enum class AttentionKind { Full, ProbSparse };

std::string to_string(BackboneKind k);
BackboneKind backbone_kind_from_string(const std::string& s);

// Architecture of an encoder mapping an L x m window to an L x d
// representation sequence. Zero-valued fields resolve to per-kind defaults.
struct EncoderSpec {
  BackboneKind kind = BackboneKind::TCN;
  int input_dim = 7;    // m
  int hidden_dim = 0;   // d, the representation width
  int num_layers = 0;
  int kernel_size = 3;            // TCN
  int num_heads = 8;              // Transformer
  AttentionKind attention = AttentionKind::ProbSparse;
  Real probsparse_factor = 5.0;   // c in u = ceil(c ln L)
  int inner_dim = 0;              // internal channel width

  static EncoderSpec defaults(BackboneKind kind, int input_dim);
  void resolve();   // fills zero fields with defaults
  void validate() const;
  bool operator==(const EncoderSpec& o) const = default;
};

struct EncodeOptions {
  // 0/1 keep flags per (window-major) timestep row, applied to the embedded
  // sequence; used by the latent timestamp masking of the contrastive paths.
  const VecX* latent_keep = nullptr;
  bool train_params = true;  // false: parameters enter the tape as constants
};

class Encoder {
 public:
  Encoder() = default;
  const EncoderSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Index param_count() const { return params_.scalar_count(); }

  // x: (B*L) x m window-major; returns (B*L) x d.
  Var forward(Tape& tape, Var x, int B, int L,
              const EncodeOptions& opts = {}) const;
  // No-grad convenience over raw data.
  MatX encode(const MatX& x, int B, int L) const;

  Encoder clone() const;
  void copy_values_from(const Encoder& other);  // same spec required
  std::uint64_t checksum() const;

 private:
  friend Encoder build_encoder(const EncoderSpec&, std::uint64_t);
  friend class CheckpointReader;
  EncoderSpec spec_;
  // params_ is mutable state owned here; forward() only reads values unless
  // a Tape collects gradients into them.
  mutable ParamStore params_;
};

Encoder build_encoder(const EncoderSpec& spec, std::uint64_t seed);

// Uniform fan-in init for a weight matrix; biases are zeroed separately.
void init_fan_in(MatX& W, Index fan_in, std::mt19937_64& rng);

// Theoretical receptive field of the configured TCN (timesteps of history,
// including the current step, that can influence one output step).
int tcn_receptive_field(const EncoderSpec& spec);

std::uint64_t params_checksum(const ParamStore& store);

}  // namespace tscl
