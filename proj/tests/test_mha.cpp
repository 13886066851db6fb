#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fxattn/mha.hpp"
#include "mha_cases.hpp"
#include "support.hpp"

using namespace fxattn;

namespace {

const FloatArith fa;

template <class T>
StreamChannel<T> channel_of(const Matrix<T>& m, const std::string& name = "in") {
  StreamChannel<T> c(name, m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) c.write(std::vector<T>(m.row(r).begin(), m.row(r).end()));
  return c;
}

template <class T>
Matrix<T> drain(StreamChannel<T>& c, std::size_t rows) {
  Matrix<T> m(rows, c.width());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = c.read();
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

Matrix<double> identity(std::size_t n) {
  Matrix<double> m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseLayer<double> zero_layer(std::size_t out, std::size_t in) {
  return {Matrix<double>(out, in), std::vector<double>(out, 0.0), Activation::None};
}

MhaWeights<double> zero_mha(const MhaConfig& cfg) {
  MhaWeights<double> w;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    w.query.push_back(zero_layer(cfg.d_k, cfg.d_model));
    w.key.push_back(zero_layer(cfg.d_k, cfg.d_model));
    w.value.push_back(zero_layer(cfg.d_v, cfg.d_model));
  }
  w.output = zero_layer(cfg.d_model, cfg.concat_width());
  return w;
}

// y = x W^T + b, row by row.
Matrix<double> dense_rows(const Matrix<double>& x, const DenseLayer<double>& l) {
  Matrix<double> y(x.rows, l.weights.rows);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t i = 0; i < l.weights.rows; ++i) {
      double s = l.bias[i];
      for (std::size_t j = 0; j < x.cols; ++j) s += l.weights(i, j) * x(t, j);
      y(t, i) = s;
    }
  }
  return y;
}

Matrix<double> matmul(const Matrix<double>& a, const Matrix<double>& b) {
  Matrix<double> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j)
      for (std::size_t k = 0; k < a.cols; ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

void check_close(const Matrix<double>& a, const Matrix<double>& b, double tol) {
  REQUIRE(a.rows == b.rows);
  REQUIRE(a.cols == b.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(tol));
}

Matrix<double> permute_rows(const Matrix<double>& m, const std::vector<std::size_t>& p) {
  Matrix<double> out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) std::copy(m.row(p[r]).begin(), m.row(p[r]).end(), out.row(r).begin());
  return out;
}

}  // namespace

TEST_CASE("stream channel contract") {
  StreamChannel<int> c("c", 2, 1);
  c.write({1});
  c.write({2});
  CHECK_THROWS_AS(c.write({3}), StreamError);
  CHECK(c.read() == std::vector<int>{1});
  CHECK_THROWS_AS(c.write({4, 5}), StreamError);
  CHECK(c.read() == std::vector<int>{2});
  CHECK_THROWS_AS(c.read(), StreamError);
  CHECK_NOTHROW(c.expect_drained(2));
  CHECK_THROWS_AS(c.expect_drained(3), StreamError);
}

TEST_CASE("stage 1 projections") {
  MhaConfig cfg{3, 1, 3, 3, 4};
  auto w = zero_mha(cfg);
  w.query[0].weights = w.key[0].weights = w.value[0].weights = identity(3);
  test::Rng rng(1);
  const auto x = test::random_matrix(rng, 4, 3, 1.0);
  auto in = channel_of(x);
  auto heads = stage1_project(fa, cfg, w, in);
  CHECK(drain(heads[0].q, 4) == x);
  CHECK(drain(heads[0].k, 4) == x);
  CHECK(drain(heads[0].v, 4) == x);

  const auto zeros = zero_mha(cfg);
  auto in2 = channel_of(x);
  auto zh = stage1_project(fa, cfg, zeros, in2);
  CHECK(zh[0].q.size() == 4);
  CHECK(drain(zh[0].v, 4) == Matrix<double>(4, 3));

  MhaConfig two{3, 2, 2, 1, 4};
  const auto rw = test::random_mha(rng, two, 1.0);
  auto in3 = channel_of(x);
  auto rh = stage1_project(fa, two, rw, in3);
  for (std::size_t h = 0; h < 2; ++h) {
    check_close(drain(rh[h].q, 4), dense_rows(x, rw.query[h]), 1e-12);
    check_close(drain(rh[h].k, 4), dense_rows(x, rw.key[h]), 1e-12);
    check_close(drain(rh[h].v, 4), dense_rows(x, rw.value[h]), 1e-12);
  }

  auto short_in = channel_of(test::random_matrix(rng, 3, 3, 1.0));
  CHECK_THROWS_AS(stage1_project(fa, cfg, w, short_in), StreamError);
}

TEST_CASE("stage 2 scores") {
  MhaConfig cfg{4, 1, 4, 4, 4};
  const Matrix<double> zeros(4, 4);
  auto q = channel_of(zeros, "q");
  auto k = channel_of(zeros, "k");
  auto s = stage2_scores(fa, cfg, nullptr, q, k);
  const auto scores = drain(s, 4);
  for (double p : scores.data) CHECK(p == 0.25);

  MhaConfig one{2, 1, 2, 2, 1};
  const FixedArith fx{FxFormat(10, 10)};
  const auto sm1 = make_softmax_config(SoftmaxLutSpec{}, 1, fx.fmt);
  auto q1 = channel_of(convert(fx, Matrix<double>(1, 2, std::vector<double>{0.5, -1.0})), "q");
  auto k1 = channel_of(convert(fx, Matrix<double>(1, 2, std::vector<double>{2.0, 0.25})), "k");
  auto s1 = stage2_scores(fx, one, &sm1, q1, k1);
  CHECK(std::fabs(dequantize(s1.read()[0]) - 1.0) <= test::kEpsTable);

  // Random 4x4 fixed case against the float formula on the same quantized inputs.
  test::Rng rng(2);
  const auto sm = make_softmax_config(SoftmaxLutSpec{}, 4, fx.fmt);
  const double tol = test::kEpsTable + 8.0 * fx.fmt.lsb();
  for (int trial = 0; trial < 100; ++trial) {
    const auto qm = convert(fx, test::random_matrix(rng, 4, 4, 1.5));
    const auto km = convert(fx, test::random_matrix(rng, 4, 4, 1.5));
    auto qc = channel_of(qm, "q");
    auto kc = channel_of(km, "k");
    auto sc = stage2_scores(fx, cfg, &sm, qc, kc);
    for (std::size_t t = 0; t < 4; ++t) {
      const auto row = sc.read();
      std::vector<double> logits(4);
      for (std::size_t j = 0; j < 4; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < 4; ++c) d += dequantize(qm(t, c)) * dequantize(km(j, c));
        logits[j] = d / 2.0;
      }
      const auto exact = softmax_exact(logits);
      double sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        REQUIRE(std::fabs(dequantize(row[j]) - exact[j]) <= tol);
        REQUIRE(row[j].raw >= 0);
        sum += dequantize(row[j]);
      }
      REQUIRE(std::fabs(sum - 1.0) <= 4.0 * (test::kEpsTable + fx.fmt.lsb()));
    }
  }

  auto qbad = channel_of(zeros, "q");
  auto kbad = channel_of(Matrix<double>(3, 4), "k");
  CHECK_THROWS_AS(stage2_scores(fa, cfg, nullptr, qbad, kbad), StreamError);
}

TEST_CASE("stage 3 apply") {
  MhaConfig cfg{2, 1, 2, 3, 4};
  test::Rng rng(3);
  const auto v = test::random_matrix(rng, 4, 3, 2.0);

  auto s_id = channel_of(identity(4), "s");
  auto v_id = channel_of(v, "v");
  auto out_id = stage3_apply(fa, cfg, s_id, v_id);
  CHECK(drain(out_id, 4) == v);

  auto s_u = channel_of(Matrix<double>(4, 4, 0.25), "s");
  auto v_u = channel_of(v, "v");
  auto out_u = stage3_apply(fa, cfg, s_u, v_u);
  const auto mean_out = drain(out_u, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double mean = (v(0, c) + v(1, c) + v(2, c) + v(3, c)) / 4.0;
      CHECK(mean_out(t, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  const auto s = test::random_matrix(rng, 4, 4, 1.0);
  auto s_r = channel_of(s, "s");
  auto v_r = channel_of(v, "v");
  auto out_r = stage3_apply(fa, cfg, s_r, v_r);
  check_close(drain(out_r, 4), matmul(s, v), 1e-12);

  auto s_bad = channel_of(s, "s");
  auto v_bad = channel_of(test::random_matrix(rng, 5, 3, 1.0), "v");
  CHECK_THROWS_AS(stage3_apply(fa, cfg, s_bad, v_bad), StreamError);
}

TEST_CASE("stage 4 concat and project") {
  test::Rng rng(4);
  MhaConfig one{3, 1, 3, 3, 4};
  auto w = zero_mha(one);
  w.output.weights = identity(3);
  const auto h0 = test::random_matrix(rng, 4, 3, 1.0);
  std::vector<StreamChannel<double>> heads;
  heads.push_back(channel_of(h0, "h0"));
  auto out = stage4_concat_project(fa, one, w, heads);
  CHECK(drain(out, 4) == h0);

  auto wb = zero_mha(one);
  wb.output.bias = {1.0, -2.0, 0.5};
  std::vector<StreamChannel<double>> hb;
  hb.push_back(channel_of(h0, "h0"));
  auto outb = stage4_concat_project(fa, one, wb, hb);
  const auto rows = drain(outb, 4);
  for (std::size_t t = 0; t < 4; ++t) CHECK(std::vector<double>(rows.row(t).begin(), rows.row(t).end()) == wb.output.bias);

  MhaConfig two{3, 2, 2, 2, 4};
  const auto w2 = test::random_mha(rng, two, 1.0);
  const auto a = test::random_matrix(rng, 4, 2, 1.0);
  const auto b = test::random_matrix(rng, 4, 2, 1.0);
  Matrix<double> concat(4, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    concat(t, 0) = a(t, 0);
    concat(t, 1) = a(t, 1);
    concat(t, 2) = b(t, 0);
    concat(t, 3) = b(t, 1);
  }
  std::vector<StreamChannel<double>> h2;
  h2.push_back(channel_of(a, "h0"));
  h2.push_back(channel_of(b, "h1"));
  auto out2 = stage4_concat_project(fa, two, w2, h2);
  check_close(drain(out2, 4), dense_rows(concat, w2.output), 1e-12);

  std::vector<StreamChannel<double>> uneven;
  uneven.push_back(channel_of(a, "h0"));
  uneven.push_back(channel_of(test::random_matrix(rng, 3, 2, 1.0), "h1"));
  CHECK_THROWS_AS(stage4_concat_project(fa, two, w2, uneven), StreamError);
}

TEST_CASE("full attention small cases") {
  MhaConfig cfg{2, 1, 2, 2, 1};
  test::Rng rng(5);
  auto w = zero_mha(cfg);
  w.query[0].weights = w.key[0].weights = w.value[0].weights = identity(2);
  w.output = test::random_layer(rng, 2, 2, 1.0);
  const Matrix<double> x(1, 2, std::vector<double>{0.7, -1.2});
  const auto y = run_mha_streaming(fa, cfg, w, nullptr, x);
  check_close(y, dense_rows(x, w.output), 1e-14);

  MhaConfig dflt;
  auto zw = zero_mha(dflt);
  zw.output.bias = {1, 2, 3, 4, 5, 6};
  const auto zx = test::random_matrix(rng, dflt.seq_len, dflt.d_model, 1.0);
  const auto zy = run_mha_streaming(fa, dflt, zw, nullptr, zx);
  for (std::size_t t = 0; t < dflt.seq_len; ++t)
    CHECK(std::vector<double>(zy.row(t).begin(), zy.row(t).end()) == zw.output.bias);

  // One head with d_k = d_model reduces to softmax(Q K^T / sqrt(d_k)) V W_o^T.
  MhaConfig sh{3, 1, 3, 3, 5};
  const auto sw = test::random_mha(rng, sh, 1.0);
  const auto sx = test::random_matrix(rng, 5, 3, 1.0);
  const auto qm = dense_rows(sx, sw.query[0]);
  const auto km = dense_rows(sx, sw.key[0]);
  const auto vm = dense_rows(sx, sw.value[0]);
  Matrix<double> p(5, 5);
  for (std::size_t t = 0; t < 5; ++t) {
    std::vector<double> logits(5);
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t c = 0; c < 3; ++c) logits[j] += qm(t, c) * km(j, c);
      logits[j] /= std::sqrt(3.0);
    }
    const auto pr = softmax_exact(logits);
    std::copy(pr.begin(), pr.end(), p.row(t).begin());
  }
  check_close(run_mha_reference(fa, sh, sw, nullptr, sx), dense_rows(matmul(p, vm), sw.output), 1e-12);
}

TEST_CASE("streaming and reference agree bit-exactly") {
  test::Rng rng(6);
  for (std::size_t i = 0; i < 60; ++i) {
    const auto c = test::random_mha_case(rng, i);
    CAPTURE(c.describe());
    REQUIRE(test::streaming_matches_reference(c));
  }
}

TEST_CASE("row permutation equivariance") {
  test::Rng rng(7);
  MhaConfig cfg;
  const auto w = test::random_mha(rng, cfg, 1.0);
  const FixedArith fx{FxFormat(10, 10)};
  const auto wf = convert(fx, w);
  const auto sm = make_softmax_config(SoftmaxLutSpec{}, cfg.seq_len, fx.fmt);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = test::random_matrix(rng, cfg.seq_len, cfg.d_model, 2.0);
    std::vector<std::size_t> perm(cfg.seq_len);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    const auto px = permute_rows(x, perm);

    const auto y = run_mha_streaming(fa, cfg, w, nullptr, x);
    const auto py = run_mha_streaming(fa, cfg, w, nullptr, px);
    // Float sums run in a different key order after permutation.
    check_close(py, permute_rows(y, perm), 1e-12);

    const auto yf = run_mha_streaming(fx, cfg, wf, &sm, convert(fx, x));
    const auto pyf = run_mha_streaming(fx, cfg, wf, &sm, convert(fx, px));
    for (std::size_t r = 0; r < cfg.seq_len; ++r) {
      for (std::size_t c = 0; c < cfg.d_model; ++c) REQUIRE(pyf(r, c) == yf(perm[r], c));
    }
  }
}

TEST_CASE("key mask excludes positions") {
  MhaConfig cfg{2, 1, 2, 2, 3};
  test::Rng rng(8);
  auto w = zero_mha(cfg);
  w.value[0].weights = identity(2);
  w.output.weights = identity(2);
  const auto x = test::random_matrix(rng, 3, 2, 1.0);
  const std::vector<std::uint8_t> mask{1, 1, 0};
  const auto y = run_mha_streaming(fa, cfg, w, nullptr, x, mask);
  const auto yr = run_mha_reference(fa, cfg, w, nullptr, x, mask);
  CHECK(y == yr);
  for (std::size_t c = 0; c < 2; ++c) CHECK(y(2, c) == doctest::Approx((x(0, c) + x(1, c)) / 2));

  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS(run_mha_streaming(fa, cfg, w, nullptr, x, none));
  const std::vector<std::uint8_t> short_mask{1, 1};
  CHECK_THROWS_AS(run_mha_streaming(fa, cfg, w, nullptr, x, short_mask), ShapeError);
}

TEST_CASE("shape validation") {
  MhaConfig cfg;
  auto w = zero_mha(cfg);
  w.key[1].weights = Matrix<double>(cfg.d_model, cfg.d_k);
  const Matrix<double> x(cfg.seq_len, cfg.d_model);
  CHECK_THROWS_AS(run_mha_streaming(fa, cfg, w, nullptr, x), ShapeError);
  CHECK_THROWS_AS(run_mha_reference(fa, cfg, zero_mha(cfg), nullptr, Matrix<double>(3, 6)), ShapeError);
  CHECK_THROWS_AS(run_mha_streaming(fa, cfg, zero_mha(cfg), nullptr, Matrix<double>(3, 6)), ShapeError);
  CHECK_THROWS_AS((MhaConfig{6, 0, 3, 3, 15}.validate()), std::invalid_argument);
  CHECK(MhaConfig::with_default_head_dims(6, 2, 15) == MhaConfig{});
  CHECK_THROWS_AS(MhaConfig::with_default_head_dims(6, 4, 15), std::invalid_argument);
}
