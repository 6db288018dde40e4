#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tscl/types.hpp"

namespace tscl {

enum class DatasetKind { ETT, ECL, Synthetic };
std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct RawSeries {
  std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
  MatX values;                           // N x m
  std::vector<std::string> feature_names;

  Index length() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

struct LoadOptions {
  bool forward_fill = false;  // impute empty cells from the previous row
};

RawSeries load_csv(const std::filesystem::path& path, DatasetKind schema,
                   const LoadOptions& opts = {});

RawSeries hourly_aggregate(const RawSeries& series);

struct SplitSpec {
  Real train_fraction = 0.6;
  Real val_fraction = 0.2;
  Real test_fraction = 0.2;
  void validate() const;
};

struct Splits {
  RawSeries train, val, test;
};

// Chronological contiguous split; row counts are floor(N*f) for train and
// val, remainder to test. min_rows guards each split (L+T at the call site).
Splits split(const RawSeries& series, const SplitSpec& spec, Index min_rows = 0);

class Normalizer {
 public:
  static Normalizer fit(const RawSeries& train);
  MatX apply(const MatX& values) const;
  MatX invert(const MatX& values) const;
  RawSeries apply(const RawSeries& s) const;
  const VecX& mu() const { return mu_; }
  const VecX& sigma() const { return sigma_; }

 private:
  VecX mu_, sigma_;
};

// All admissible sliding windows over one split. Batches are materialized on
// demand in the window-major layout used by the graph (row w*L + t).
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const MatX> data, int L, int T, int stride);
  int count() const { return static_cast<int>(origins_.size()); }
  int lookback() const { return L_; }
  int horizon() const { return T_; }
  int dim() const { return m_; }
  const std::vector<int>& origins() const { return origins_; }

  MatX gather_inputs(const std::vector<int>& window_ids) const;   // (B*L) x m
  MatX gather_targets(const std::vector<int>& window_ids) const;  // B x (T*m)
  MatX all_inputs() const;
  MatX all_targets() const;

 private:
  std::shared_ptr<const MatX> data_;
  std::vector<int> origins_;
  int L_ = 0, T_ = 0, m_ = 0;
};

WindowSet make_windows(const RawSeries& series, int L, int T, int stride);

// Synthetic ETT-schema series: daily/weekly cycles, AR noise and a slow
// level drift so that train/test distributions shift like the real data.
struct SyntheticSpec {
  int rows = 6000;
  int features = 7;
  int period = 24;
  Real noise = 0.7;   // AR(1) innovation scale relative to cycle amplitude
  Real drift = 0.04;  // random-walk step scale
  std::uint64_t seed = 7;
};
RawSeries generate_synthetic(const SyntheticSpec& spec);

// `prepare` artifacts: normalized split CSVs plus a key/value sidecar with
// mu/sigma, boundaries and the source checksum.
void persist_prepared(const std::filesystem::path& out_dir, const Splits& raw_splits,
                      const Normalizer& norm, const std::string& source_name,
                      std::uint64_t source_checksum);

void write_series_csv(const std::filesystem::path& path, const RawSeries& s);

}  // namespace tscl
