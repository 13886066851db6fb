#include "fxattn/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fxattn/error.hpp"

namespace fxattn {

DeviceProfile DeviceProfile::vu13p() {
  return DeviceProfile{"vu13p", 12288, 1728000, 3456000, 5376, 6.58};
}

void DeviceProfile::validate() const {
  if (dsp_total == 0 || lut_total == 0 || ff_total == 0 || bram_total == 0 || !(clock_ns > 0.0)) {
    throw std::invalid_argument("device profile '" + name + "': all capacities and clock_ns must be positive");
  }
}

DeviceProfile DeviceProfile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open device profile");
  DeviceProfile d;
  try {
    const auto j = nlohmann::json::parse(in);
    d.name = j.value("name", std::string("custom"));
    d.dsp_total = j.at("dsp_total").get<std::uint64_t>();
    d.lut_total = j.at("lut_total").get<std::uint64_t>();
    d.ff_total = j.at("ff_total").get<std::uint64_t>();
    d.bram_total = j.at("bram_total").get<std::uint64_t>();
    d.clock_ns = j.at("clock_ns").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 0, e.what());
  }
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, 0, e.what());
  }
  return d;
}

DeviceProfile DeviceProfile::from_name(const std::string& spec) {
  if (spec == "vu13p") return vu13p();
  constexpr std::string_view prefix = "custom:";
  if (spec.rfind(prefix, 0) == 0) return load(spec.substr(prefix.size()));
  throw std::invalid_argument("unknown device '" + spec + "', expected vu13p or custom:<file>");
}

ReuseFactor::ReuseFactor(std::uint64_t value) : rf(value) {
  if (value == 0) throw std::invalid_argument("reuse factor must be >= 1");
}

std::vector<LayerMultipliers> count_multipliers(const ModelConfig& cfg) {
  cfg.validate();
  const auto& m = cfg.encoder.mha;
  const std::uint64_t h = m.num_heads;
  const std::uint64_t n = m.seq_len;
  const std::uint64_t sm_table = cfg.softmax.exp_size + cfg.softmax.inv_size;

  std::vector<LayerMultipliers> out;
  for (std::size_t b = 0; b < cfg.num_encoder_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.push_back({p + "mha.qkv", LayerKind::MhaProjection, h * m.d_model * (2 * m.d_k + m.d_v),
                   h * n * (2 * m.d_k + m.d_v)});
    out.push_back({p + "mha.scores", LayerKind::MhaScores, h * n * m.d_k + h * n, h * n * n});
    out.push_back({p + "mha.softmax", LayerKind::MhaSoftmax, h * n, h * sm_table});
    out.push_back({p + "mha.apply", LayerKind::MhaApply, h * n * m.d_v, 3 * h * n * m.d_v});
    out.push_back({p + "mha.out", LayerKind::MhaOutput, h * m.d_v * m.d_model, n * m.d_model});
    out.push_back({p + "ff0", LayerKind::Dense, m.d_model * cfg.encoder.ff_dims[0], 0});
    out.push_back({p + "ff1", LayerKind::Dense, cfg.encoder.ff_dims[0] * cfg.encoder.ff_dims[1], 0});
  }
  std::uint64_t in = cfg.flatten_width();
  for (std::size_t i = 0; i < cfg.head_dims.size(); ++i) {
    out.push_back({"head" + std::to_string(i), LayerKind::Dense, in * cfg.head_dims[i], 0});
    in = cfg.head_dims[i];
  }
  out.push_back({"output", LayerKind::Dense, in * cfg.num_classes, 0});
  out.push_back({"output.softmax", LayerKind::Softmax, cfg.num_classes, sm_table});
  return out;
}

std::uint64_t total_multipliers(const std::vector<LayerMultipliers>& layers) {
  std::uint64_t t = 0;
  for (const auto& l : layers) t += l.mults;
  return t;
}

ResourceReport estimate_resources(const ModelConfig& cfg, FxFormat fmt, ReuseFactor rf,
                                  const DeviceProfile& dev, const ResourceCalibration& calib) {
  dev.validate();
  const auto width = static_cast<double>(fmt.width());
  ResourceReport rep;
  rep.calibrated = calib.calibrated;
  rep.total.layer = "total";
  for (const auto& l : count_multipliers(cfg)) {
    LayerResources r;
    r.layer = l.layer;
    r.mults = l.mults;
    r.dsp = (l.mults + rf.rf - 1) / rf.rf;
    const double dsp = static_cast<double>(r.dsp);
    r.lut = static_cast<std::uint64_t>(std::ceil(calib.lut_per_mult_bit * width * dsp + calib.lut_per_layer));
    r.ff = static_cast<std::uint64_t>(std::ceil(calib.ff_per_mult_bit * width * dsp + calib.ff_per_layer));
    const std::uint64_t bits = l.storage_bits_per_bit * fmt.width();
    r.bram = (bits + calib.bram_block_bits - 1) / calib.bram_block_bits;

    rep.total.mults += r.mults;
    rep.total.dsp += r.dsp;
    rep.total.lut += r.lut;
    rep.total.ff += r.ff;
    rep.total.bram += r.bram;
    rep.layers.push_back(std::move(r));
  }
  rep.dsp_util = static_cast<double>(rep.total.dsp) / static_cast<double>(dev.dsp_total);
  rep.lut_util = static_cast<double>(rep.total.lut) / static_cast<double>(dev.lut_total);
  rep.ff_util = static_cast<double>(rep.total.ff) / static_cast<double>(dev.ff_total);
  rep.bram_util = static_cast<double>(rep.total.bram) / static_cast<double>(dev.bram_total);
  return rep;
}

std::string ResourceReport::to_csv() const {
  std::ostringstream os;
  os << "layer,mults,dsp,lut,ff,bram\n";
  const auto row = [&](const LayerResources& r) {
    os << r.layer << ',' << r.mults << ',' << r.dsp << ',' << r.lut << ',' << r.ff << ',' << r.bram << '\n';
  };
  for (const auto& r : layers) row(r);
  row(total);
  return os.str();
}

std::string ResourceReport::summary(const DeviceProfile& dev) const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s: DSP %llu/%llu (%.1f%%)  LUT %llu/%llu (%.1f%%)  FF %llu/%llu (%.1f%%)  "
                "BRAM %llu/%llu (%.1f%%)%s%s",
                dev.name.c_str(), static_cast<unsigned long long>(total.dsp),
                static_cast<unsigned long long>(dev.dsp_total), 100.0 * dsp_util,
                static_cast<unsigned long long>(total.lut), static_cast<unsigned long long>(dev.lut_total),
                100.0 * lut_util, static_cast<unsigned long long>(total.ff),
                static_cast<unsigned long long>(dev.ff_total), 100.0 * ff_util,
                static_cast<unsigned long long>(total.bram), static_cast<unsigned long long>(dev.bram_total),
                100.0 * bram_util, calibrated ? "" : "  [LUT/FF uncalibrated]",
                over_subscribed() ? "  OVER-SUBSCRIBED" : "");
  return buf;
}

LatencyCalibration LatencyCalibration::shipped() {
  LatencyCalibration c;
  c.base_ii = 49;
  c.per_rf_depth_cycles = 49.0;
  c.fixed_depth_cycles = 2077.0 / 6.58 - c.per_rf_depth_cycles;
  return c;
}

LatencyReport estimate_latency(const ModelConfig& cfg, ReuseFactor rf, const DeviceProfile& dev,
                               const LatencyCalibration& calib) {
  cfg.validate();
  dev.validate();
  LatencyReport r;
  const auto f = static_cast<double>(rf.rf);
  r.ii_cycles = calib.base_ii * rf.rf;
  r.ii_ns = static_cast<double>(r.ii_cycles) * dev.clock_ns;
  r.latency_cycles = calib.fixed_depth_cycles + calib.per_rf_depth_cycles * f;
  r.latency_us = r.latency_cycles * dev.clock_ns / 1000.0;
  return r;
}

double reference_latency_us(std::uint64_t rf) {
  switch (rf) {
    case 1: return 2.077;
    case 2: return 3.467;
    case 4: return 5.853;
    default: return 0.0;
  }
}

}  // namespace fxattn
