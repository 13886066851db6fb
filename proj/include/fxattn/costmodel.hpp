#pragma once

// First-order resource and latency estimates for the streaming model under a
// global reuse factor.  A layer with M multiplies uses ceil(M / rf) DSPs;
// the initiation interval scales with rf and latency is affine in rf.

#include <cstdint>
#include <string>
#include <vector>

#include "fxattn/fxp.hpp"
#include "fxattn/model.hpp"

namespace fxattn {

struct DeviceProfile {
  std::string name;
  std::uint64_t dsp_total = 0;
  std::uint64_t lut_total = 0;
  std::uint64_t ff_total = 0;
  std::uint64_t bram_total = 0;  // 18 Kb blocks
  double clock_ns = 0.0;

  // xcvu13p-fhga2104-2L-e at a 6.58 ns clock.
  static DeviceProfile vu13p();
  // JSON object with the field names above; throws ParseError.
  static DeviceProfile load(const std::string& path);
  // "vu13p" or "custom:<file>".
  static DeviceProfile from_name(const std::string& spec);
  void validate() const;
};

struct ReuseFactor {
  std::uint64_t rf = 1;

  explicit ReuseFactor(std::uint64_t value);
};

enum class LayerKind { Dense, MhaProjection, MhaScores, MhaSoftmax, MhaApply, MhaOutput, Softmax };

struct LayerMultipliers {
  std::string layer;
  LayerKind kind;
  std::uint64_t mults = 0;
  std::uint64_t storage_bits_per_bit = 0;  // BRAM-mapped words (tables, FIFOs)
};

// Hardware multipliers per layer.  Dense in->out: in*out.  Per MHA block:
//   qkv      heads * d_model * (2 d_k + d_v)
//   scores   heads * seq_len * d_k  +  heads * seq_len  (1/sqrt(d_k) scaling)
//   softmax  heads * seq_len         (normalization multiply)
//   apply    heads * seq_len * d_v
//   out      heads * d_v * d_model
// The output softmax adds num_classes normalization multiplies.
std::vector<LayerMultipliers> count_multipliers(const ModelConfig& cfg);
std::uint64_t total_multipliers(const std::vector<LayerMultipliers>& layers);

// Linear LUT/FF coefficients.  The defaults are placeholders, not fitted to
// synthesis results.
struct ResourceCalibration {
  double lut_per_mult_bit = 4.0;
  double ff_per_mult_bit = 3.0;
  double lut_per_layer = 250.0;
  double ff_per_layer = 400.0;
  std::uint64_t bram_block_bits = 18432;
  bool calibrated = false;
};

struct LayerResources {
  std::string layer;
  std::uint64_t mults = 0;
  std::uint64_t dsp = 0;
  std::uint64_t lut = 0;
  std::uint64_t ff = 0;
  std::uint64_t bram = 0;
};

struct ResourceReport {
  std::vector<LayerResources> layers;
  LayerResources total;
  double dsp_util = 0.0;
  double lut_util = 0.0;
  double ff_util = 0.0;
  double bram_util = 0.0;
  bool calibrated = false;

  bool over_subscribed() const {
    return dsp_util > 1.0 || lut_util > 1.0 || ff_util > 1.0 || bram_util > 1.0;
  }
  // layer,mults,dsp,lut,ff,bram with a trailing total row.
  std::string to_csv() const;
  std::string summary(const DeviceProfile& dev) const;
};

ResourceReport estimate_resources(const ModelConfig& cfg, FxFormat fmt, ReuseFactor rf,
                                  const DeviceProfile& dev, const ResourceCalibration& calib = {});

struct LatencyCalibration {
  std::uint64_t base_ii = 49;
  double fixed_depth_cycles = 0.0;
  double per_rf_depth_cycles = 0.0;

  // base_ii = 49 and per_rf_depth = base_ii; fixed_depth chosen so that rf = 1
  // gives 2.077 us at 6.58 ns.
  static LatencyCalibration shipped();
};

struct LatencyReport {
  double latency_cycles = 0.0;  // fractional: the calibrated depth is not a whole cycle count
  double latency_us = 0.0;
  std::uint64_t ii_cycles = 0;
  double ii_ns = 0.0;
};

LatencyReport estimate_latency(const ModelConfig& cfg, ReuseFactor rf, const DeviceProfile& dev,
                               const LatencyCalibration& calib = LatencyCalibration::shipped());

// Published synthesis latencies for rf = 1, 2, 4; 0 for other rf.
double reference_latency_us(std::uint64_t rf);

}  // namespace fxattn
