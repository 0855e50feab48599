#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "binloc/core.hpp"
#include "binloc/crn.hpp"
#include "binloc/dataset.hpp"
#include "binloc/earnoise.hpp"
#include "binloc/gcc.hpp"
#include "binloc/srp.hpp"
#include "json.hpp"

namespace binloc {

inline double localization_error(double theta_true, double theta_est) {
  const auto check = [](double a, const char* what) {
    if (!(a >= -90.0 - 1e-9 && a <= 90.0 + 1e-9))
      throw Error(std::string("localization_error: ") + what + " azimuth " + std::to_string(a) +
                  " outside [-90, 90]");
  };
  check(theta_true, "true");
  check(theta_est, "estimated");
  return std::abs(theta_est - theta_true);
}

struct EvalRecord {
  std::string utterance_id;
  std::string method;
  double true_azimuth_deg = 0.0;
  double estimated_azimuth_deg = 0.0;
  double abs_error_deg = 0.0;
  double snr_db = 0.0;
};

struct BucketStats {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mean, median, std;  // population std; empty when count == 0

  double centre() const { return 0.5 * (lo + hi); }
};

struct EvalReport {
  std::vector<double> edges;
  std::vector<std::string> methods;  // in first-seen order
  std::vector<EvalRecord> records;
  std::map<std::string, std::vector<BucketStats>> buckets;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t bucket_count() const { return edges.size() - 1; }
};

/// Bucket edges -27.5 .. 27.5 in 5 dB steps: centres -25 .. +25.
inline std::vector<double> default_bucket_edges() {
  std::vector<double> e;
  for (int k = 0; k <= 11; ++k) e.push_back(-27.5 + 5.0 * k);
  return e;
}

/// Three buckets centred on -15, 0 and +15 dB.
inline std::vector<double> listening_bucket_edges() { return {-22.5, -7.5, 7.5, 22.5}; }

/// Bucket [e_k, e_k+1); values outside the edges fall into the first or last bucket.
inline std::size_t bucket_index(double snr_db, const std::vector<double>& edges) {
  const std::size_t n = edges.size() - 1;
  for (std::size_t k = 1; k < n; ++k)
    if (snr_db < edges[k]) return k - 1;
  return n - 1;
}

inline BucketStats bucket_stats(std::vector<double> errors, double lo, double hi) {
  BucketStats s{lo, hi, errors.size(), {}, {}, {}};
  if (errors.empty()) return s;
  std::sort(errors.begin(), errors.end());
  double sum = 0.0;
  for (double e : errors) sum += e;
  const double mean = sum / static_cast<double>(errors.size());
  double ss = 0.0;
  for (double e : errors) ss += (e - mean) * (e - mean);
  const std::size_t n = errors.size();
  s.mean = mean;
  s.median = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
  s.std = std::sqrt(ss / static_cast<double>(n));
  return s;
}

inline void validate_edges(const std::vector<double>& edges) {
  if (edges.size() < 2) throw Error("bucket edges: need at least 2 edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw Error("bucket edges must be strictly increasing");
}

/// Builds the per-method bucket statistics from `records`.
inline EvalReport summarize(std::vector<EvalRecord> records, const std::vector<double>& edges) {
  validate_edges(edges);
  EvalReport report;
  report.edges = edges;
  for (const auto& r : records)
    if (std::find(report.methods.begin(), report.methods.end(), r.method) == report.methods.end())
      report.methods.push_back(r.method);
  for (const auto& m : report.methods) {
    std::vector<std::vector<double>> errs(edges.size() - 1);
    for (const auto& r : records)
      if (r.method == m) errs[bucket_index(r.snr_db, edges)].push_back(r.abs_error_deg);
    auto& out = report.buckets[m];
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) out.push_back(bucket_stats(errs[k], edges[k], edges[k + 1]));
  }
  report.records = std::move(records);
  return report;
}

// ---------------------------------------------------------------------------
// Estimators

using FeatureEstimator = std::function<double(const GccFeature&)>;
using Estimator = std::function<double(const GccFeature&, const DatasetRecord&)>;

struct NamedEstimator {
  std::string name;
  Estimator fn;
};

inline Estimator from_features(FeatureEstimator f) {
  return [f = std::move(f)](const GccFeature& g, const DatasetRecord&) { return f(g); };
}

inline FeatureEstimator crn_estimator(ModelParams params) {
  return [p = std::move(params)](const GccFeature& g) { return crn_azimuth(g, p); };
}

inline FeatureEstimator srp_estimator(HeadModel head = {}, double grid_step_deg = 1.0) {
  return [head, grid_step_deg](const GccFeature& g) { return srp_phat(g, head, grid_step_deg).azimuth_deg; };
}

/// Reads the label: zero error by construction.
inline Estimator oracle_estimator() {
  return [](const GccFeature&, const DatasetRecord& r) { return r.azimuth_deg; };
}

inline Estimator constant_estimator(double azimuth_deg) {
  return [azimuth_deg](const GccFeature&, const DatasetRecord&) { return azimuth_deg; };
}

/// Runs every estimator on every record of `split`. Records are ordered by
/// utterance id, then by estimator order.
inline EvalReport evaluate(const std::vector<NamedEstimator>& estimators, const DatasetManifest& dataset,
                           const std::vector<double>& edges = default_bucket_edges(), Split split = Split::test) {
  validate_edges(edges);
  if (estimators.empty()) throw Error("evaluate: no estimators");
  auto subset = dataset.in_split(split);
  if (subset.empty()) throw Error(std::string("evaluate: split '") + to_string(split) + "' is empty");
  std::sort(subset.begin(), subset.end(), [](const auto* a, const auto* b) { return a->id() < b->id(); });
  std::vector<EvalRecord> records;
  for (const auto* rec : subset) {
    const auto lf = dataset.load(*rec);
    for (const auto& est : estimators) {
      EvalRecord r;
      r.utterance_id = rec->id();
      r.method = est.name;
      r.true_azimuth_deg = rec->azimuth_deg;
      r.estimated_azimuth_deg = est.fn(lf.features, *rec);
      r.abs_error_deg = localization_error(r.true_azimuth_deg, r.estimated_azimuth_deg);
      r.snr_db = rec->snr_db;
      records.push_back(std::move(r));
    }
  }
  auto report = summarize(std::move(records), edges);
  report.provenance = {{"dataset_config_hash", dataset.config_hash},
                       {"split", to_string(split)},
                       {"records", subset.size()}};
  return report;
}

// ---------------------------------------------------------------------------
// Cue preservation probe

struct ProbeOptions {
  bool with_ear_noise = true;
  const EarFilter* filter = nullptr;  // required when with_ear_noise
  double reference_level_db_spl = 62.35;
  std::uint64_t seed = 0;
  FeatureOptions features;
  std::string utterance_id = "probe";
  std::string method = "crn";
  double snr_db = std::numeric_limits<double>::quiet_NaN();
};

/// Localises externally processed binaural audio and scores it against the azimuth of
/// the unprocessed source.
inline EvalRecord cue_preservation_probe(const AudioBuffer& processed, double reference_azimuth_deg,
                                         const FeatureEstimator& model, const ProbeOptions& opts = {}) {
  if (!processed.is_stereo()) throw Error("cue_preservation_probe: expects a stereo input");
  AudioBuffer input = processed;
  if (opts.with_ear_noise) {
    if (!opts.filter) throw Error("cue_preservation_probe: ear noise requested without an ear filter");
    if (processed.sample_rate() != opts.filter->sample_rate)
      throw Error("cue_preservation_probe: input rate does not match the model rate");
    input = add_ear_noise(calibrate_level(processed, opts.reference_level_db_spl, opts.filter->levels), *opts.filter,
                          opts.seed);
  }
  EvalRecord r;
  r.utterance_id = opts.utterance_id;
  r.method = opts.method;
  r.true_azimuth_deg = reference_azimuth_deg;
  r.estimated_azimuth_deg = model(extract_features(input, opts.features));
  r.abs_error_deg = localization_error(reference_azimuth_deg, r.estimated_azimuth_deg);
  r.snr_db = opts.snr_db;
  return r;
}

/// Left channel replaced by the right: all interaural cues removed.
inline AudioBuffer diotic(const AudioBuffer& stereo) {
  if (!stereo.is_stereo()) throw Error("diotic: expects a stereo input");
  return AudioBuffer::stereo(stereo.sample_rate(), stereo.samples(1), stereo.samples(1));
}

inline AudioBuffer channel_swapped(const AudioBuffer& stereo) {
  if (!stereo.is_stereo()) throw Error("channel_swapped: expects a stereo input");
  return AudioBuffer::stereo(stereo.sample_rate(), stereo.samples(1), stereo.samples(0));
}

// ---------------------------------------------------------------------------
// Monotonicity

/// Ranks with ties sharing the average rank (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks; 0 when either side has no variance.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct MonotonicityResult {
  double rho = 0.0;
  bool pass = false;
  std::size_t buckets = 0;
};

/// Spearman correlation between bucket centre SNR and bucket mean error over the
/// non-empty buckets of `method`; passes iff rho <= -0.8.
inline MonotonicityResult monotonicity_check(const EvalReport& report, const std::string& method) {
  const auto it = report.buckets.find(method);
  if (it == report.buckets.end()) throw Error("monotonicity_check: no method '" + method + "' in report");
  std::vector<double> snr, err;
  for (const auto& b : it->second)
    if (b.count > 0) {
      snr.push_back(b.centre());
      err.push_back(*b.mean);
    }
  if (snr.size() < 3) throw Error("monotonicity_check: need >= 3 non-empty buckets, got " + std::to_string(snr.size()));
  MonotonicityResult r;
  r.buckets = snr.size();
  r.rho = spearman(snr, err);
  r.pass = r.rho <= -0.8;
  return r;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  return format_number(v);
}

inline void write_records_csv(const std::vector<EvalRecord>& records, std::ostream& out) {
  out << "utterance_id,method,true_azimuth_deg,estimated_azimuth_deg,abs_error_deg,snr_db\n";
  for (const auto& r : records)
    out << r.utterance_id << ',' << r.method << ',' << csv_number(r.true_azimuth_deg) << ','
        << csv_number(r.estimated_azimuth_deg) << ',' << csv_number(r.abs_error_deg) << ',' << csv_number(r.snr_db)
        << '\n';
}

inline std::vector<EvalRecord> read_records_csv(std::istream& in) {
  std::vector<EvalRecord> out;
  std::string line;
  if (!std::getline(in, line)) throw Error("read_records_csv: empty input");
  const auto num = [](const std::string& s) { return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (f.size() == 5) f.emplace_back();
    if (f.size() != 6) throw Error("read_records_csv: expected 6 columns: " + line);
    out.push_back({f[0], f[1], num(f[2]), num(f[3]), num(f[4]), num(f[5])});
  }
  return out;
}

inline nlohmann::json to_json(const EvalReport& report) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& m : report.methods) {
    nlohmann::json rows = nlohmann::json::array();
    std::size_t total = 0;
    for (const auto& b : report.buckets.at(m)) {
      rows.push_back({{"lo_db", b.lo},
                      {"hi_db", b.hi},
                      {"centre_db", b.centre()},
                      {"count", b.count},
                      {"mean_deg", opt(b.mean)},
                      {"median_deg", opt(b.median)},
                      {"std_deg", opt(b.std)}});
      total += b.count;
    }
    methods[m] = {{"count", total}, {"buckets", rows}};
  }
  return {{"edges_db", report.edges}, {"methods", methods}, {"provenance", report.provenance}};
}

/// records.csv, summary.json and plot_data.csv (bucket_db, method, mean_deg, std_deg, count).
inline void emit_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  if (report.records.empty()) throw Error("emit_report: empty report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const auto open = [&](const char* name) {
    std::ofstream f(out_dir / name);
    if (!f) throw Error("emit_report: cannot write " + (out_dir / name).string());
    return f;
  };
  {
    auto f = open("records.csv");
    write_records_csv(report.records, f);
  }
  {
    auto f = open("summary.json");
    f << to_json(report).dump(2) << '\n';
  }
  auto f = open("plot_data.csv");
  f << "bucket_db,method,mean_deg,std_deg,count\n";
  for (const auto& m : report.methods)
    for (const auto& b : report.buckets.at(m))
      f << format_number(b.centre()) << ',' << m << ',' << (b.mean ? format_number(*b.mean) : "") << ','
        << (b.std ? format_number(*b.std) : "") << ',' << b.count << '\n';
}

inline std::string format_report_table(const EvalReport& report) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "snr_db";
  for (const auto& m : report.methods) s << '\t' << m << "_mean\t" << m << "_n";
  s << '\n';
  for (std::size_t k = 0; k < report.bucket_count(); ++k) {
    s << 0.5 * (report.edges[k] + report.edges[k + 1]);
    for (const auto& m : report.methods) {
      const auto& b = report.buckets.at(m)[k];
      s << '\t';
      if (b.mean)
        s << *b.mean;
      else
        s << '-';
      s << '\t' << b.count;
    }
    s << '\n';
  }
  return s.str();
}

}  // namespace binloc
