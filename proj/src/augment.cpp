#include "tscl/augment.hpp"

#include "tscl/errors.hpp"

namespace tscl {

void AugmentPolicy::validate() const {
  if (mask_prob < 0 || mask_prob > 1)
    throw ConfigError("augment.mask_prob must be in [0,1]");
  if (jitter_sigma < 0) throw ConfigError("augment.jitter_sigma must be >= 0");
  if (!(scale_range.first > 0) || scale_range.first > scale_range.second)
    throw ConfigError("augment.scale_range requires 0 < lo <= hi");
  if (shift_range.first > shift_range.second)
    throw ConfigError("augment.shift_range requires lo <= hi");
}

MatX mask_timestamps(const MatX& x, Real p, std::mt19937_64& rng) {
  MatX y = x;
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (Index t = 0; t < y.rows(); ++t)
    if (u(rng) < p) y.row(t).setZero();
  return y;
}

MatX jitter(const MatX& x, Real sigma, std::mt19937_64& rng) {
  if (sigma == 0) return x;
  MatX y = x;
  std::normal_distribution<Real> n(0.0, sigma);
  for (Index t = 0; t < y.rows(); ++t)
    for (Index c = 0; c < y.cols(); ++c) y(t, c) += n(rng);
  return y;
}

MatX scale_features(const MatX& x, Real lo, Real hi, std::mt19937_64& rng) {
  MatX y = x;
  std::uniform_real_distribution<Real> u(lo, hi);
  for (Index c = 0; c < y.cols(); ++c) y.col(c) *= u(rng);
  return y;
}

MatX shift_features(const MatX& x, Real lo, Real hi, std::mt19937_64& rng) {
  MatX y = x;
  std::uniform_real_distribution<Real> u(lo, hi);
  for (Index c = 0; c < y.cols(); ++c) y.col(c).array() += u(rng);
  return y;
}

VecX timestamp_mask_rows(Index L, Real p, std::mt19937_64& rng) {
  VecX keep = VecX::Ones(L);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (Index t = 0; t < L; ++t)
    if (u(rng) < p) keep[t] = 0.0;
  return keep;
}

MatX timestamp_mask(const MatX& r, Real p, std::mt19937_64& rng) {
  VecX keep = timestamp_mask_rows(r.rows(), p, rng);
  return keep.asDiagonal() * r;
}

CropSpans crop_pair(int segment_len, int min_overlap, std::mt19937_64& rng) {
  if (min_overlap < 1) throw SegmentTooShort("min_overlap must be >= 1");
  if (segment_len < min_overlap)
    throw SegmentTooShort("segment length " + std::to_string(segment_len) +
                          " < min_overlap " + std::to_string(min_overlap));
  auto uniform_int = [&](int lo, int hi) {  // inclusive
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
  };
  const int o = uniform_int(min_overlap, segment_len);
  const int b1 = uniform_int(0, segment_len - o);
  const int a2 = b1 + o;
  const int a1 = uniform_int(0, b1);
  const int b2 = uniform_int(a2, segment_len);
  return CropSpans{a1, a2, b1, b2};
}

Augmenter::Augmenter(AugmentPolicy policy) : policy_(std::move(policy)) {
  policy_.validate();
}

MatX Augmenter::compose(const MatX& x) {
  std::mt19937_64 rng(mix_seed(policy_.rng_seed, counter_++));
  if (policy_.is_identity()) return x;
  MatX y = scale_features(x, policy_.scale_range.first, policy_.scale_range.second, rng);
  y = shift_features(y, policy_.shift_range.first, policy_.shift_range.second, rng);
  y = jitter(y, policy_.jitter_sigma, rng);
  y = mask_timestamps(y, policy_.mask_prob, rng);
  return y;
}

}  // namespace tscl
