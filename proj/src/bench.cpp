#include "fxattn/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "fxattn/error.hpp"

namespace fxattn {

const char* flavor_name(Flavor f) {
  switch (f) {
    case Flavor::B: return "b";
    case Flavor::C: return "c";
    case Flavor::Light: return "light";
  }
  return "?";
}

Flavor parse_flavor(std::string_view s) {
  if (s == "b") return Flavor::B;
  if (s == "c") return Flavor::C;
  if (s == "light") return Flavor::Light;
  throw std::invalid_argument("unknown label '" + std::string(s) + "'");
}

std::array<std::size_t, 3> Dataset::class_counts() const {
  std::array<std::size_t, 3> n{};
  for (const auto& s : samples) ++n[static_cast<std::size_t>(s.label)];
  return n;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

// Distribution draws built directly on the engine output: the standard
// library distributions are implementation-defined, and datasets must be
// byte-identical for a seed on every toolchain.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  // Open interval (0, 1).
  double uniform() { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; }
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  double exponential(double scale) { return -std::log(uniform()) * scale; }
  std::size_t integer(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

 private:
  std::mt19937_64 rng_;
};

Flavor draw_label(Sampler& s, const std::array<double, 3>& frac) {
  const double u = s.uniform() * (frac[0] + frac[1] + frac[2]);
  if (u < frac[0]) return Flavor::B;
  if (u < frac[0] + frac[1]) return Flavor::C;
  return Flavor::Light;
}

using TrackRow = std::array<double, kTrackFeatures>;

void fill_sample(JetSample& jet, std::vector<TrackRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TrackRow& a, const TrackRow& b) { return a[kSd0] > b[kSd0]; });
  if (rows.size() > kMaxTracks) rows.resize(kMaxTracks);
  jet.tracks = Matrix<double>(kMaxTracks, kTrackFeatures);
  jet.n_tracks = rows.size();
  for (std::size_t t = 0; t < rows.size(); ++t) {
    std::copy(rows[t].begin(), rows[t].end(), jet.tracks.row(t).begin());
  }
}

}  // namespace

Dataset generate_synthetic(std::size_t n, std::uint64_t seed, const SyntheticParams& p) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (p.min_tracks == 0 || p.min_tracks > p.max_tracks || p.max_tracks > kMaxTracks) {
    throw std::invalid_argument("generate_synthetic: need 1 <= min_tracks <= max_tracks <= 15");
  }
  Sampler s(seed);
  Dataset ds;
  ds.seed = seed;
  ds.samples.reserve(n);
  std::vector<TrackRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    JetSample jet;
    jet.jet_id = i;
    jet.label = draw_label(s, p.class_fraction);
    const auto k = static_cast<std::size_t>(jet.label);
    const std::size_t n_tracks = s.integer(p.min_tracks, p.max_tracks);

    rows.assign(n_tracks, TrackRow{});
    double pt_sum = s.exponential(1.0);  // share carried by neutrals and soft tracks
    for (auto& r : rows) {
      const bool displaced = s.uniform() < p.displaced_prob[k];
      const double sd0 = displaced ? p.displaced_loc[k] + s.exponential(p.displaced_scale[k]) : s.normal();
      const double sdz = displaced ? s.normal() * (1.0 + 0.5 * std::abs(sd0)) : s.normal();
      r[kSd0] = sd0;
      r[kSdz] = sdz;
      r[kD0] = sd0 * (p.d0_sigma_lo + p.d0_sigma_span * s.uniform());
      r[kDz] = sdz * (p.dz_sigma_lo + p.dz_sigma_span * s.uniform());
      r[kDeltaR] = std::min(0.5, std::abs(s.normal()) * p.delta_r_sigma[k]);
      r[kPtRel] = s.exponential(1.0);
      pt_sum += r[kPtRel];
    }
    for (auto& r : rows) r[kPtRel] /= pt_sum;
    fill_sample(jet, rows);
    ds.samples.push_back(std::move(jet));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, p);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = line.find(sep);
    out.push_back(line.substr(0, pos));
    if (pos == std::string_view::npos) break;
    line.remove_prefix(pos + 1);
  }
  return out;
}

}  // namespace

std::string dataset_to_csv(const Dataset& ds) {
  std::string out = "jet_id,label,d0,dz,sd0,sdz,dr,ptrel\n";
  for (const auto& jet : ds.samples) {
    for (std::size_t t = 0; t < jet.n_tracks; ++t) {
      out += std::to_string(jet.jet_id);
      out += ',';
      out += flavor_name(jet.label);
      for (double v : jet.tracks.row(t)) {
        out += ',';
        append_double(out, v);
      }
      out += '\n';
    }
  }
  return out;
}

void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open for writing");
  out << dataset_to_csv(ds);
  if (!out) throw ParseError(path, 0, "write failed");
}

Dataset parse_csv(const std::string& text, const std::string& origin) {
  struct Pending {
    std::uint64_t id;
    Flavor label;
    std::vector<TrackRow> rows;
  };
  std::vector<Pending> jets;
  std::unordered_map<std::uint64_t, std::size_t> index;

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("jet_id", 0) == 0) continue;

    const auto f = split(line, ',');
    if (f.size() != 2 + kTrackFeatures) {
      throw ParseError(origin, lineno, "expected " + std::to_string(2 + kTrackFeatures) + " fields, found " +
                                           std::to_string(f.size()));
    }
    std::uint64_t id = 0;
    {
      auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), id);
      if (ec != std::errc{} || p != f[0].data() + f[0].size()) {
        throw ParseError(origin, lineno, "bad jet_id '" + std::string(f[0]) + "'");
      }
    }
    Flavor label;
    try {
      label = parse_flavor(f[1]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(origin, lineno, e.what());
    }
    TrackRow row{};
    for (std::size_t c = 0; c < kTrackFeatures; ++c) {
      const auto s = f[2 + c];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), row[c]);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ParseError(origin, lineno, "bad number '" + std::string(s) + "'");
      }
    }

    auto [it, inserted] = index.try_emplace(id, jets.size());
    if (inserted) jets.push_back({id, label, {}});
    Pending& jet = jets[it->second];
    if (jet.label != label) throw ParseError(origin, lineno, "conflicting label for jet " + std::to_string(id));
    jet.rows.push_back(row);
  }

  Dataset ds;
  ds.samples.reserve(jets.size());
  for (auto& p : jets) {
    JetSample jet;
    jet.jet_id = p.id;
    jet.label = p.label;
    fill_sample(jet, p.rows);
    ds.samples.push_back(std::move(jet));
  }
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open dataset");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Metrics

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("roc_auc: NaN score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: need both positive and negative samples");
  const auto p = static_cast<double>(n_pos);
  const auto q = static_cast<double>(n_neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

AucSummary evaluate_auc(const std::vector<std::vector<double>>& probs, const Dataset& ds) {
  if (probs.size() != ds.samples.size()) throw std::invalid_argument("evaluate_auc: size mismatch");
  std::array<double, 3> auc{};
  std::vector<double> scores(probs.size());
  std::vector<std::uint8_t> pos(probs.size());
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i].at(k);
      pos[i] = static_cast<std::size_t>(ds.samples[i].label) == k;
    }
    auc[k] = roc_auc(scores, pos);
  }
  return AucSummary{auc[0], auc[1], auc[2], (auc[0] + auc[1] + auc[2]) / 3.0};
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::vector<double>> predict(const InferenceModel& model, const Dataset& ds, std::size_t jobs) {
  std::vector<std::vector<double>> out(ds.samples.size());
  parallel_for(ds.samples.size(), jobs, [&](std::size_t i) { out[i] = model.forward(ds.samples[i].tracks); });
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string PrecisionSweep::to_csv() const {
  std::string out = "int_bits,frac_bits,auc_b,auc_c,auc_light,auc_macro,auc_ratio\n";
  for (const auto& p : points) {
    out += std::to_string(p.int_bits) + "," + std::to_string(p.frac_bits) + "," + fmt6(p.auc.b) + "," +
           fmt6(p.auc.c) + "," + fmt6(p.auc.light) + "," + fmt6(p.auc.macro) + "," + fmt6(p.auc_ratio) + "\n";
  }
  return out;
}

const PrecisionPoint* PrecisionSweep::find(int int_bits, int frac_bits) const {
  for (const auto& p : points) {
    if (p.int_bits == int_bits && p.frac_bits == frac_bits) return &p;
  }
  return nullptr;
}

PrecisionSweep sweep_precision(const ModelConfig& cfg, const ModelWeights<double>& weights, const Dataset& ds,
                               std::span<const int> int_bits, std::span<const int> frac_bits,
                               Overflow overflow, Rounding rounding, std::size_t jobs) {
  const auto counts = ds.class_counts();
  if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) {
    throw std::invalid_argument("sweep_precision: dataset must contain b, c and light jets");
  }
  PrecisionSweep sweep;
  sweep.overflow = overflow;
  sweep.rounding = rounding;

  const InferenceModel reference(cfg, weights, ForwardMode::floating());
  sweep.float_auc = evaluate_auc(predict(reference, ds, jobs), ds);

  std::vector<FxFormat> formats;
  for (int i : int_bits) {
    for (int f : frac_bits) formats.emplace_back(i, f, overflow, rounding);
  }
  sweep.points.resize(formats.size());
  // Points are independent; each is single-threaded and lands in its own slot.
  parallel_for(formats.size(), jobs, [&](std::size_t k) {
    const InferenceModel model(cfg, weights, ForwardMode::fixed_point(formats[k]));
    PrecisionPoint& pt = sweep.points[k];
    pt.int_bits = formats[k].int_bits;
    pt.frac_bits = formats[k].frac_bits;
    pt.auc = evaluate_auc(predict(model, ds, 1), ds);
    pt.auc_ratio = pt.auc.macro / sweep.float_auc.macro;
  });
  return sweep;
}

std::string ReuseSweep::to_csv() const {
  std::string out = "rf,dsp,lut,ff,bram,latency_us,ii_ns\n";
  for (const auto& p : points) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", p.latency.ii_ns);
    const auto& t = p.resources.total;
    out += std::to_string(p.rf) + "," + std::to_string(t.dsp) + "," + std::to_string(t.lut) + "," +
           std::to_string(t.ff) + "," + std::to_string(t.bram) + "," + fmt6(p.latency.latency_us) + "," + buf +
           "\n";
  }
  return out;
}

ReuseSweep sweep_reuse(const ModelConfig& cfg, std::span<const std::uint64_t> rfs, FxFormat fmt,
                       const DeviceProfile& dev, const ResourceCalibration& res_calib,
                       const LatencyCalibration& lat_calib) {
  ReuseSweep sweep;
  for (auto rf : rfs) {
    const ReuseFactor r(rf);
    sweep.points.push_back({rf, estimate_resources(cfg, fmt, r, dev, res_calib),
                            estimate_latency(cfg, r, dev, lat_calib)});
  }
  return sweep;
}

}  // namespace fxattn
