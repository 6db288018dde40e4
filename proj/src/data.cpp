#include "tscl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "tscl/checkpoint.hpp"
#include "tscl/errors.hpp"

namespace tscl {

namespace fs = std::filesystem;

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::ETT: return "ett";
    case DatasetKind::ECL: return "ecl";
    case DatasetKind::Synthetic: return "synthetic";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "ett") return DatasetKind::ETT;
  if (s == "ecl") return DatasetKind::ECL;
  if (s == "synthetic") return DatasetKind::Synthetic;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

namespace {

// days_from_civil (Howard Hinnant); naive timestamps, no timezone handling.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

std::int64_t parse_datetime(const std::string& s, const std::string& ctx) {
  // "YYYY-MM-DD HH:MM:SS"
  int y, mo, d, h, mi, se;
  if (std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &se) != 6)
    throw MalformedFile("bad datetime '" + s + "' " + ctx);
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 ||
      mi > 59 || se < 0 || se > 60)
    throw MalformedFile("datetime out of range '" + s + "' " + ctx);
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

std::string format_datetime(std::int64_t ts) {
  std::int64_t days = ts / 86400;
  std::int64_t rem = ts % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d:%02d", y, m, d,
                static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60),
                static_cast<int>(rem % 60));
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

RawSeries load_csv(const fs::path& path, DatasetKind schema,
                   const LoadOptions& opts) {
  std::ifstream is(path);
  if (!is) throw MissingData("dataset file not found: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw MalformedFile("empty file " + path.string());
  std::vector<std::string> header = split_line(line);
  if (header.empty() || header[0] != "date")
    throw MalformedFile("first header column must be 'date' in " + path.string());
  const std::size_t ncols = header.size();
  const std::size_t m = ncols - 1;
  if (schema == DatasetKind::ETT) {
    if (m != 7 || header.back() != "OT")
      throw MalformedFile("ETT schema expects 7 feature columns ending in OT");
  } else if (schema == DatasetKind::ECL) {
    if (m < 300)
      throw MalformedFile("ECL schema expects >= 300 client columns, found " +
                          std::to_string(m));
  }

  std::vector<std::int64_t> ts;
  std::vector<Real> flat;
  std::vector<Real> prev(m, 0.0);
  bool have_prev = false;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != ncols)
      throw MalformedFile("row " + std::to_string(lineno) + " has " +
                          std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(ncols));
    const std::int64_t t = parse_datetime(cells[0], "at row " + std::to_string(lineno));
    if (!ts.empty() && t <= ts.back())
      throw NonMonotonicTimestamps("at row " + std::to_string(lineno));
    ts.push_back(t);
    for (std::size_t c = 1; c < ncols; ++c) {
      const std::string& cell = cells[c];
      if (cell.empty()) {
        if (opts.forward_fill && have_prev) {
          flat.push_back(prev[c - 1]);
          continue;
        }
        throw MalformedFile("missing value at row " + std::to_string(lineno) +
                            ", column " + header[c]);
      }
      char* end = nullptr;
      const Real v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw MalformedFile("non-numeric cell '" + cell + "' at row " +
                            std::to_string(lineno));
      flat.push_back(v);
    }
    for (std::size_t c = 0; c < m; ++c) prev[c] = flat[flat.size() - m + c];
    have_prev = true;
  }
  if (ts.empty()) throw EmptySeries(path.string());

  RawSeries out;
  out.timestamps = std::move(ts);
  out.values.resize(static_cast<Index>(out.timestamps.size()), static_cast<Index>(m));
  for (Index r = 0; r < out.values.rows(); ++r)
    for (Index c = 0; c < out.values.cols(); ++c)
      out.values(r, c) = flat[static_cast<std::size_t>(r) * m + c];
  out.feature_names.assign(header.begin() + 1, header.end());
  return out;
}

RawSeries hourly_aggregate(const RawSeries& series) {
  if (series.length() == 0) throw EmptySeries("hourly_aggregate");
  if (series.length() >= 2) {
    const std::int64_t step = series.timestamps[1] - series.timestamps[0];
    if (step <= 0 || 3600 % step != 0)
      throw IrregularSampling("interval " + std::to_string(step) +
                              "s does not divide one hour");
    for (std::size_t i = 2; i < series.timestamps.size(); ++i)
      if (series.timestamps[i] - series.timestamps[i - 1] != step)
        throw IrregularSampling("non-constant sampling interval at row " +
                                std::to_string(i));
  }
  std::vector<std::int64_t> hours;
  std::vector<Index> bucket(static_cast<std::size_t>(series.length()));
  for (Index r = 0; r < series.length(); ++r) {
    const std::int64_t hour =
        (series.timestamps[static_cast<std::size_t>(r)] / 3600) * 3600;
    if (hours.empty() || hours.back() != hour) hours.push_back(hour);
    bucket[static_cast<std::size_t>(r)] = static_cast<Index>(hours.size()) - 1;
  }
  RawSeries out;
  out.values = MatX::Zero(static_cast<Index>(hours.size()), series.dim());
  VecX counts = VecX::Zero(static_cast<Index>(hours.size()));
  for (Index r = 0; r < series.length(); ++r) {
    out.values.row(bucket[static_cast<std::size_t>(r)]) += series.values.row(r);
    counts[bucket[static_cast<std::size_t>(r)]] += 1.0;
  }
  for (Index r = 0; r < out.values.rows(); ++r) out.values.row(r) /= counts[r];
  out.timestamps = std::move(hours);
  out.feature_names = series.feature_names;
  return out;
}

void SplitSpec::validate() const {
  if (train_fraction <= 0 || val_fraction <= 0 || test_fraction <= 0)
    throw ConfigError("split fractions must be positive");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
}

namespace {
RawSeries take_rows(const RawSeries& s, Index begin, Index count) {
  RawSeries out;
  out.timestamps.assign(s.timestamps.begin() + begin,
                        s.timestamps.begin() + begin + count);
  out.values = s.values.middleRows(begin, count);
  out.feature_names = s.feature_names;
  return out;
}
}  // namespace

Splits split(const RawSeries& series, const SplitSpec& spec, Index min_rows) {
  spec.validate();
  const Index n = series.length();
  const Index n_train = static_cast<Index>(std::floor(n * spec.train_fraction));
  const Index n_val = static_cast<Index>(std::floor(n * spec.val_fraction));
  const Index n_test = n - n_train - n_val;
  auto check = [&](const char* name, Index rows) {
    if (rows < std::max<Index>(min_rows, 1))
      throw SplitTooSmall(std::string(name) + " split has " + std::to_string(rows) +
                          " rows, needs " + std::to_string(std::max<Index>(min_rows, 1)));
  };
  check("train", n_train);
  check("val", n_val);
  check("test", n_test);
  return Splits{take_rows(series, 0, n_train), take_rows(series, n_train, n_val),
                take_rows(series, n_train + n_val, n_test)};
}

Normalizer Normalizer::fit(const RawSeries& train) {
  if (train.length() == 0) throw EmptySeries("Normalizer::fit");
  Normalizer n;
  const Index m = train.dim();
  n.mu_.resize(m);
  n.sigma_.resize(m);
  for (Index c = 0; c < m; ++c) {
    const Real mu = train.values.col(c).mean();
    const Real var = (train.values.col(c).array() - mu).square().mean();
    const Real sigma = std::sqrt(var);
    if (sigma > 1e-12) {
      n.mu_[c] = mu;
      n.sigma_[c] = sigma;
    } else {
      // constant feature passes through unchanged
      n.mu_[c] = 0.0;
      n.sigma_[c] = 1.0;
    }
  }
  return n;
}

MatX Normalizer::apply(const MatX& values) const {
  MatX out = values;
  for (Index c = 0; c < out.cols(); ++c)
    out.col(c) = (out.col(c).array() - mu_[c]) / sigma_[c];
  return out;
}

MatX Normalizer::invert(const MatX& values) const {
  MatX out = values;
  for (Index c = 0; c < out.cols(); ++c)
    out.col(c) = out.col(c).array() * sigma_[c] + mu_[c];
  return out;
}

RawSeries Normalizer::apply(const RawSeries& s) const {
  RawSeries out = s;
  out.values = apply(s.values);
  return out;
}

WindowSet::WindowSet(std::shared_ptr<const MatX> data, int L, int T, int stride)
    : data_(std::move(data)), L_(L), T_(T), m_(static_cast<int>(data_->cols())) {
  if (L < 1 || T < 1 || stride < 1)
    throw SeriesTooShort("L, T, stride must all be >= 1");
  const Index n = data_->rows();
  if (n < Index(L) + T)
    throw SeriesTooShort("series length " + std::to_string(n) +
                         " < L+T = " + std::to_string(L + T));
  for (Index s = 0; s + L + T <= n; s += stride)
    origins_.push_back(static_cast<int>(s));
}

MatX WindowSet::gather_inputs(const std::vector<int>& ids) const {
  MatX out(Index(ids.size()) * L_, m_);
  for (std::size_t w = 0; w < ids.size(); ++w)
    out.middleRows(Index(w) * L_, L_) = data_->middleRows(origins_[ids[w]], L_);
  return out;
}

MatX WindowSet::gather_targets(const std::vector<int>& ids) const {
  MatX out(static_cast<Index>(ids.size()), Index(T_) * m_);
  for (std::size_t w = 0; w < ids.size(); ++w)
    for (int j = 0; j < T_; ++j)
      out.block(static_cast<Index>(w), Index(j) * m_, 1, m_) =
          data_->row(origins_[ids[w]] + L_ + j);
  return out;
}

namespace {
std::vector<int> iota_ids(int n) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}
}  // namespace

MatX WindowSet::all_inputs() const { return gather_inputs(iota_ids(count())); }
MatX WindowSet::all_targets() const { return gather_targets(iota_ids(count())); }

WindowSet make_windows(const RawSeries& series, int L, int T, int stride) {
  auto data = std::make_shared<MatX>(series.values);
  return WindowSet(std::move(data), L, T, stride);
}

RawSeries generate_synthetic(const SyntheticSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, 0x5EED));
  std::normal_distribution<Real> gauss(0.0, 1.0);
  std::uniform_real_distribution<Real> uni(0.0, 1.0);

  const int n = spec.rows;
  const int m = spec.features;
  const Real p = static_cast<Real>(spec.period);

  // shared components
  VecX walk(n);
  Real w = 0;
  for (int t = 0; t < n; ++t) {
    w += spec.drift * gauss(rng);
    walk[t] = w;
  }
  std::vector<Real> phase(m), amp_day(m), amp_week(m), amp_walk(m), rho(m);
  for (int f = 0; f < m; ++f) {
    phase[f] = 2 * M_PI * uni(rng);
    amp_day[f] = 0.7 + 0.6 * uni(rng);
    amp_week[f] = 0.2 + 0.4 * uni(rng);
    amp_walk[f] = 0.5 + uni(rng);
    rho[f] = 0.6 + 0.25 * uni(rng);
  }

  RawSeries out;
  out.values.resize(n, m);
  out.timestamps.resize(n);
  const std::int64_t t0 = parse_datetime("2016-07-01 00:00:00", "synthetic");
  for (int t = 0; t < n; ++t) out.timestamps[t] = t0 + std::int64_t(t) * 3600;

  for (int f = 0; f < m; ++f) {
    Real ar = 0;
    for (int t = 0; t < n; ++t) {
      const Real daily = std::sin(2 * M_PI * t / p + phase[f]);
      const Real weekly = std::sin(2 * M_PI * t / (7 * p) + 0.5 * phase[f]);
      ar = rho[f] * ar + spec.noise * gauss(rng);
      out.values(t, f) = amp_day[f] * daily * (1.0 + 0.3 * weekly) +
                         amp_week[f] * weekly + ar + amp_walk[f] * walk[t];
    }
  }
  out.feature_names.resize(m);
  for (int f = 0; f < m - 1; ++f) out.feature_names[f] = "F" + std::to_string(f + 1);
  out.feature_names[m - 1] = "OT";
  return out;
}

void write_series_csv(const fs::path& path, const RawSeries& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "date";
  for (const auto& n : s.feature_names) os << ',' << n;
  os << '\n';
  char buf[40];
  for (Index r = 0; r < s.length(); ++r) {
    os << format_datetime(s.timestamps[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < s.dim(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.17g", s.values(r, c));
      os << buf;
    }
    os << '\n';
  }
}

void persist_prepared(const fs::path& out_dir, const Splits& raw_splits,
                      const Normalizer& norm, const std::string& source_name,
                      std::uint64_t source_checksum) {
  fs::create_directories(out_dir);
  write_series_csv(out_dir / "train.csv", norm.apply(raw_splits.train));
  write_series_csv(out_dir / "val.csv", norm.apply(raw_splits.val));
  write_series_csv(out_dir / "test.csv", norm.apply(raw_splits.test));

  std::map<std::string, std::string> meta;
  meta["source"] = source_name;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(source_checksum));
  meta["source_checksum"] = buf;
  meta["rows_train"] = std::to_string(raw_splits.train.length());
  meta["rows_val"] = std::to_string(raw_splits.val.length());
  meta["rows_test"] = std::to_string(raw_splits.test.length());
  meta["features"] = std::to_string(raw_splits.train.dim());
  std::ostringstream mu, sigma;
  for (Index c = 0; c < norm.mu().size(); ++c) {
    if (c) {
      mu << ',';
      sigma << ',';
    }
    mu << norm.mu()[c];
    sigma << norm.sigma()[c];
  }
  meta["mu"] = mu.str();
  meta["sigma"] = sigma.str();
  write_kv_file(out_dir / "meta.txt", meta);
}

}  // namespace tscl
