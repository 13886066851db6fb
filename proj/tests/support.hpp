#pragma once

// Shared helpers for the test binaries.

#include <cstdint>
#include <random>
#include <vector>

#include "fxattn/fxp.hpp"
#include "fxattn/mha.hpp"
#include "fxattn/nn_core.hpp"

namespace fxattn::test {

// Frozen worst-case |softmax_lut - softmax_exact| for 1024-entry tables at
// fixed<20,10>, measured over kEpsVectors vectors from eps_vector().
inline constexpr double kEpsTable = 0x1.891b2377a718p-7;  // 0.011996643369734938
inline constexpr std::size_t kEpsVectors = 100000;
inline constexpr std::uint64_t kEpsSeed = 20240611;

// Portable draws: std distributions differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Length-n scores uniform in [-4, 4), quantized to fmt.
inline std::vector<FxValue> eps_vector(Rng& rng, std::size_t n, FxFormat fmt) {
  std::vector<FxValue> v;
  v.reserve(n);
  for (std::size_t i = 0; i < n; ++i) v.push_back(quantize(rng.uniform(-4.0, 4.0), fmt));
  return v;
}

inline Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix<double> m(rows, cols);
  for (auto& x : m.data) x = rng.uniform(-scale, scale);
  return m;
}

inline DenseLayer<double> random_layer(Rng& rng, std::size_t out, std::size_t in, double scale,
                                       Activation act = Activation::None) {
  DenseLayer<double> l;
  l.weights = random_matrix(rng, out, in, scale);
  l.bias.resize(out);
  for (auto& b : l.bias) b = rng.uniform(-scale, scale);
  l.activation = act;
  return l;
}

inline MhaWeights<double> random_mha(Rng& rng, const MhaConfig& cfg, double scale) {
  MhaWeights<double> w;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    w.query.push_back(random_layer(rng, cfg.d_k, cfg.d_model, scale));
    w.key.push_back(random_layer(rng, cfg.d_k, cfg.d_model, scale));
    w.value.push_back(random_layer(rng, cfg.d_v, cfg.d_model, scale));
  }
  w.output = random_layer(rng, cfg.d_model, cfg.concat_width(), scale);
  return w;
}

}  // namespace fxattn::test
