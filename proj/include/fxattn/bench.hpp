#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fxattn/costmodel.hpp"
#include "fxattn/fxp.hpp"
#include "fxattn/model.hpp"
#include "fxattn/nn_core.hpp"

namespace fxattn {

enum class Flavor : std::uint8_t { B = 0, C = 1, Light = 2 };

const char* flavor_name(Flavor f);
Flavor parse_flavor(std::string_view s);

inline constexpr std::size_t kMaxTracks = 15;
inline constexpr std::size_t kTrackFeatures = 6;

// Column order of JetSample::tracks.
enum TrackFeature : std::size_t { kD0 = 0, kDz, kSd0, kSdz, kDeltaR, kPtRel };

struct JetSample {
  std::uint64_t jet_id = 0;
  Matrix<double> tracks{kMaxTracks, kTrackFeatures};  // rows past n_tracks are zero
  std::size_t n_tracks = 0;
  Flavor label = Flavor::Light;

  friend bool operator==(const JetSample&, const JetSample&) = default;
};

struct Dataset {
  std::vector<JetSample> samples;
  std::uint64_t seed = 0;

  std::array<std::size_t, 3> class_counts() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Every distribution constant of the toy generator.  Per-class arrays are
// indexed [b, c, light].  A track is "displaced" with probability
// displaced_prob; displaced tracks draw S(d0) = loc + Exp(scale), prompt
// tracks draw S(d0) ~ N(0, 1).  The constants only guarantee that mean
// S(d0) is ordered b > c > light; they make no claim of physical fidelity.
struct SyntheticParams {
  std::array<double, 3> class_fraction{0.3, 0.2, 0.5};
  std::size_t min_tracks = 4;
  std::size_t max_tracks = kMaxTracks;
  std::array<double, 3> displaced_prob{0.5, 0.3, 0.05};
  std::array<double, 3> displaced_loc{3.0, 2.0, 1.5};
  std::array<double, 3> displaced_scale{4.0, 2.0, 1.0};
  std::array<double, 3> delta_r_sigma{0.12, 0.11, 0.10};
  double d0_sigma_lo = 0.002, d0_sigma_span = 0.02;  // cm
  double dz_sigma_lo = 0.003, dz_sigma_span = 0.03;  // cm
};

Dataset generate_synthetic(std::size_t n, std::uint64_t seed, const SyntheticParams& params = {});

// One track per row: jet_id,label,d0,dz,sd0,sdz,dr,ptrel
std::string dataset_to_csv(const Dataset& ds);
void save_csv(const std::string& path, const Dataset& ds);
// Groups rows by jet_id (first-appearance order), sorts tracks by descending
// S(d0), keeps the first 15 and zero-pads.  Throws ParseError with the line.
Dataset parse_csv(const std::string& text, const std::string& origin);
Dataset load_csv(const std::string& path);

// Mann-Whitney AUC with midranks for ties.  positive[i] != 0 marks a positive.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct AucSummary {
  double b = 0.0;
  double c = 0.0;
  double light = 0.0;
  double macro = 0.0;  // mean of the three one-vs-rest values
};

// probs[i] holds [p_b, p_c, p_light] for samples[i].
AucSummary evaluate_auc(const std::vector<std::vector<double>>& probs, const Dataset& ds);

// Forward every sample; jobs > 1 splits samples over threads.
std::vector<std::vector<double>> predict(const InferenceModel& model, const Dataset& ds,
                                         std::size_t jobs = 1);

struct PrecisionPoint {
  int int_bits = 0;
  int frac_bits = 0;
  AucSummary auc;
  double auc_ratio = 0.0;  // auc.macro / float macro AUC
};

struct PrecisionSweep {
  AucSummary float_auc;
  Overflow overflow = Overflow::Saturate;
  Rounding rounding = Rounding::RoundNearestEven;
  std::vector<PrecisionPoint> points;  // int_bits major, frac_bits minor

  // int_bits,frac_bits,auc_b,auc_c,auc_light,auc_macro,auc_ratio
  std::string to_csv() const;
  const PrecisionPoint* find(int int_bits, int frac_bits) const;
};

// Throws std::invalid_argument unless every class is present in ds.
PrecisionSweep sweep_precision(const ModelConfig& cfg, const ModelWeights<double>& weights,
                               const Dataset& ds, std::span<const int> int_bits,
                               std::span<const int> frac_bits,
                               Overflow overflow = Overflow::Saturate,
                               Rounding rounding = Rounding::RoundNearestEven, std::size_t jobs = 1);

struct ReusePoint {
  std::uint64_t rf = 1;
  ResourceReport resources;
  LatencyReport latency;
};

struct ReuseSweep {
  std::vector<ReusePoint> points;

  // rf,dsp,lut,ff,bram,latency_us,ii_ns
  std::string to_csv() const;
};

ReuseSweep sweep_reuse(const ModelConfig& cfg, std::span<const std::uint64_t> rfs, FxFormat fmt,
                       const DeviceProfile& dev, const ResourceCalibration& res_calib = {},
                       const LatencyCalibration& lat_calib = LatencyCalibration::shipped());

// Runs fn(i) for i in [0, count) on up to `jobs` threads.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace fxattn
