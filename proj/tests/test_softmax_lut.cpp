#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "fxattn/softmax_lut.hpp"
#include "support.hpp"

using namespace fxattn;

namespace {

const FxFormat kFmt(10, 10);

std::vector<double> values(const std::vector<FxValue>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.push_back(dequantize(x));
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("exp table") {
  const auto t = build_exp_table(1024, -8.0, 0.0, kFmt);
  CHECK(t.entries.size() == 1024);
  CHECK(t.index_of(-8.0) == 0);
  CHECK(t.index_of(-100.0) == 0);
  CHECK(t.index_of(-1e-9) == 1023);
  CHECK(t.index_of(0.0) == 1023);
  CHECK(t.index_of(5.0) == 1023);
  CHECK(t.lookup(-1e-9) == quantize(std::exp(t.bin_start(1023)), kFmt));
  CHECK(t.bin_start(512) == -4.0);

  const double bin = 8.0 / 1024;
  for (std::size_t k = 0; k < t.size; ++k) {
    const double x = -8.0 + bin * static_cast<double>(k);
    REQUIRE(std::fabs(dequantize(t.entries[k]) - std::exp(x)) <= 0x1.0p-11);
    // Any input inside the bin sees at most the sampling error on top.
    REQUIRE(std::fabs(dequantize(t.entries[k]) - std::exp(x + bin)) <= 0x1.0p-11 + std::exp(x) * std::expm1(bin));
    if (k > 0) REQUIRE(t.entries[k].raw >= t.entries[k - 1].raw);
  }

  // With a bin edge at exactly 0 the top entry is quantize(1.0).
  const auto edge = build_exp_table(4, -1.0, 1.0, kFmt);
  CHECK(edge.lookup(0.1) == quantize(1.0, kFmt));

  CHECK_THROWS_AS(build_exp_table(1000, -8.0, 0.0, kFmt), std::invalid_argument);
  CHECK_THROWS_AS(build_exp_table(0, -8.0, 0.0, kFmt), std::invalid_argument);
  CHECK_THROWS_AS(build_exp_table(1024, 0.0, -8.0, kFmt), std::invalid_argument);
}

TEST_CASE("inverse table") {
  const auto t = build_inv_table(1024, 1.0, 16.0, kFmt);
  CHECK(t.entries[0] == quantize(1.0, kFmt));
  CHECK(t.lookup(1.0) == quantize(1.0, kFmt));
  for (std::size_t k = 0; k < t.size; ++k) {
    REQUIRE(std::fabs(dequantize(t.entries[k]) - 1.0 / t.bin_start(k)) <= 0x1.0p-10);
    if (k > 0) REQUIRE(t.entries[k].raw <= t.entries[k - 1].raw);
  }
  CHECK_THROWS_AS(build_inv_table(1024, 0.0, 16.0, kFmt), std::invalid_argument);
  CHECK_THROWS_AS(build_inv_table(1024, -1.0, 16.0, kFmt), std::invalid_argument);
  CHECK_THROWS_AS(build_inv_table(1024, 4.0, 2.0, kFmt), std::invalid_argument);
}

TEST_CASE("inverse range follows the vector length") {
  const auto cfg = make_softmax_config(SoftmaxLutSpec{}, 15, kFmt);
  CHECK(cfg.inv_table.lo == 1.0);
  CHECK(cfg.inv_table.hi == 16.0);
  CHECK(cfg.exp_table.lo == -8.0);
  CHECK(cfg.exp_table.hi == 0.0);
  CHECK(cfg.io_format == kFmt);
}

TEST_CASE("exact softmax") {
  const auto half = softmax_exact(std::vector<double>{0.0, 0.0});
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  const auto thirds = softmax_exact(std::vector<double>{0.0, std::log(2.0)});
  CHECK(thirds[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(thirds[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto big = softmax_exact(std::vector<double>{1000.0, 1000.0});
  CHECK(big[0] == 0.5);

  using Hp = boost::multiprecision::cpp_bin_float_50;
  test::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng.index(20));
    for (auto& x : v) x = rng.uniform(-30.0, 30.0);
    const auto p = softmax_exact(v);
    std::vector<double> shifted(v);
    for (auto& x : shifted) x += 7.25;
    const auto q = softmax_exact(shifted);

    Hp denom = 0;
    for (double x : v) denom += boost::multiprecision::exp(Hp(x));
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double oracle = static_cast<double>(boost::multiprecision::exp(Hp(v[i])) / denom);
      REQUIRE(std::fabs(p[i] - oracle) <= 1e-12);
      REQUIRE(std::fabs(p[i] - q[i]) <= 1e-12);
      sum += p[i];
    }
    REQUIRE(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("table softmax basics") {
  const auto cfg = make_softmax_config(SoftmaxLutSpec{}, 15, kFmt);

  std::vector<FxValue> uniform(15, quantize(1.3, kFmt));
  const auto u = softmax_lut(cfg, uniform);
  for (const auto& x : u) CHECK(std::llabs(x.raw - u[0].raw) <= 1);
  CHECK(dequantize(u[0]) == doctest::Approx(1.0 / 15).epsilon(0.05));

  const auto one_cfg = make_softmax_config(SoftmaxLutSpec{}, 1, kFmt);
  const auto single = softmax_lut(one_cfg, std::vector<FxValue>{quantize(-3.0, kFmt)});
  CHECK(std::fabs(dequantize(single[0]) - 1.0) <= test::kEpsTable);

  // Extreme inputs clamp instead of failing.
  const FxFormat f(10, 10);
  std::vector<FxValue> extreme{FxValue{f.raw_max(), f}, FxValue{f.raw_min(), f}, quantize(0.0, f)};
  const auto e = softmax_lut(make_softmax_config(SoftmaxLutSpec{}, 3, f), extreme);
  CHECK(dequantize(e[0]) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(e[1].raw >= 0);
  CHECK(e[2].raw >= 0);
}

TEST_CASE("frozen table error bound and sum tolerance") {
  const auto cfg = make_softmax_config(SoftmaxLutSpec{}, 15, kFmt);
  const double delta = 15.0 * (test::kEpsTable + kFmt.lsb());
  test::Rng rng(test::kEpsSeed);
  double worst = 0.0;
  for (std::size_t k = 0; k < test::kEpsVectors; ++k) {
    const auto v = test::eps_vector(rng, 15, kFmt);
    const auto exact = softmax_exact(values(v));
    const auto lut = values(softmax_lut(cfg, v));
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      worst = std::max(worst, std::fabs(lut[i] - exact[i]));
      REQUIRE(lut[i] >= 0.0);
      REQUIRE(lut[i] <= 1.0 + kFmt.lsb());
      sum += lut[i];
    }
    REQUIRE(std::fabs(sum - 1.0) <= delta);
  }
  CHECK(worst <= test::kEpsTable);
  // A regression that lowers the error should refreeze the bound rather than
  // leave it slack.
  CHECK(worst == test::kEpsTable);
}

TEST_CASE("argmax survives when the top two are well separated") {
  const auto cfg = make_softmax_config(SoftmaxLutSpec{}, 15, kFmt);
  test::Rng rng(99);
  int checked = 0;
  for (int k = 0; k < 20000; ++k) {
    const auto v = test::eps_vector(rng, 15, kFmt);
    auto exact = softmax_exact(values(v));
    auto sorted = exact;
    std::sort(sorted.rbegin(), sorted.rend());
    if (sorted[0] - sorted[1] <= 2.0 * test::kEpsTable) continue;
    ++checked;
    REQUIRE(argmax(values(softmax_lut(cfg, v))) == argmax(exact));
  }
  CHECK(checked > 1000);
}
