#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "tscl/types.hpp"

namespace tscl {

// Stochastic view construction for the contrastive objectives.
struct AugmentPolicy {
  Real mask_prob = 0.1;
  Real jitter_sigma = 0.1;
  std::pair<Real, Real> scale_range{0.8, 1.2};
  std::pair<Real, Real> shift_range{-0.1, 0.1};
  std::uint64_t rng_seed = 0;

  static AugmentPolicy identity() {
    return AugmentPolicy{0.0, 0.0, {1.0, 1.0}, {0.0, 0.0}, 0};
  }
  bool is_identity() const {
    return mask_prob == 0 && jitter_sigma == 0 && scale_range.first == 1 &&
           scale_range.second == 1 && shift_range.first == 0 &&
           shift_range.second == 0;
  }
  void validate() const;
};

// Individual transforms on an L x m window. Each consumes draws from rng.
MatX mask_timestamps(const MatX& x, Real p, std::mt19937_64& rng);
MatX jitter(const MatX& x, Real sigma, std::mt19937_64& rng);
MatX scale_features(const MatX& x, Real lo, Real hi, std::mt19937_64& rng);
MatX shift_features(const MatX& x, Real lo, Real hi, std::mt19937_64& rng);

// Zeroes whole rows of a latent with probability p (returned as a 0/1
// column mask so callers can apply it inside an autodiff graph).
VecX timestamp_mask_rows(Index L, Real p, std::mt19937_64& rng);
MatX timestamp_mask(const MatX& r, Real p, std::mt19937_64& rng);

// Overlapping crop spans for positive-pair construction:
// a1 <= b1 < a2 <= b2, overlap [b1, a2) of length >= min_overlap.
struct CropSpans {
  int a1, a2, b1, b2;
  int overlap() const { return a2 - b1; }
};
CropSpans crop_pair(int segment_len, int min_overlap, std::mt19937_64& rng);

// Applies scale -> shift -> jitter -> mask; deterministic given
// (policy.rng_seed, call counter).
class Augmenter {
 public:
  explicit Augmenter(AugmentPolicy policy);
  const AugmentPolicy& policy() const { return policy_; }
  MatX compose(const MatX& x);
  void reset() { counter_ = 0; }
  std::uint64_t counter() const { return counter_; }

 private:
  AugmentPolicy policy_;
  std::uint64_t counter_ = 0;
};

}  // namespace tscl
