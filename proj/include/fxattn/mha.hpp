#pragma once

// Four-stage streaming multi-head attention.
//
//   stage 1  per-row Q/K/V projection for every head, rows pushed to FIFOs
//   stage 2  K preloaded into a seq_len x d_k register block; each Q row is
//            scored against it, scaled by a quantized 1/sqrt(d_k) and passed
//            through the table softmax
//   stage 3  V buffered with row and column access; score rows times V
//   stage 4  head outputs concatenated in head order, then projected by W_o
//
// Stages run to completion one after another over bounded channels, so a run
// is deterministic.  run_mha_reference evaluates the same arithmetic with
// whole matrices in the same order and is bit-exact with the streaming path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fxattn/error.hpp"
#include "fxattn/nn_core.hpp"
#include "fxattn/softmax_lut.hpp"

namespace fxattn {

struct MhaConfig {
  std::size_t d_model = 6;
  std::size_t num_heads = 2;
  std::size_t d_k = 3;
  std::size_t d_v = 3;
  std::size_t seq_len = 15;

  // d_k = d_v = d_model / num_heads.
  static MhaConfig with_default_head_dims(std::size_t d_model, std::size_t num_heads,
                                          std::size_t seq_len);
  void validate() const;
  std::size_t concat_width() const { return num_heads * d_v; }

  friend bool operator==(const MhaConfig&, const MhaConfig&) = default;
};

inline MhaConfig MhaConfig::with_default_head_dims(std::size_t d_model, std::size_t num_heads,
                                                   std::size_t seq_len) {
  if (num_heads == 0 || d_model % num_heads != 0) {
    throw std::invalid_argument("d_model must be a positive multiple of num_heads");
  }
  return MhaConfig{d_model, num_heads, d_model / num_heads, d_model / num_heads, seq_len};
}

inline void MhaConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || d_k == 0 || d_v == 0 || seq_len == 0) {
    throw std::invalid_argument("MhaConfig: all dimensions must be >= 1");
  }
}

template <class T>
struct MhaWeights {
  std::vector<DenseLayer<T>> query;  // per head, d_k x d_model
  std::vector<DenseLayer<T>> key;    // per head, d_k x d_model
  std::vector<DenseLayer<T>> value;  // per head, d_v x d_model
  DenseLayer<T> output;              // d_model x (num_heads * d_v)

  void validate(const MhaConfig& cfg) const;

  friend bool operator==(const MhaWeights&, const MhaWeights&) = default;
};

namespace detail {

template <class T>
void check_layer(const DenseLayer<T>& l, std::size_t out, std::size_t in, const std::string& name) {
  if (l.weights.rows != out || l.weights.cols != in || l.bias.size() != out) {
    throw ShapeError(name + ": expected " + std::to_string(out) + "x" + std::to_string(in) +
                     ", found " + std::to_string(l.weights.rows) + "x" +
                     std::to_string(l.weights.cols) + " with bias " + std::to_string(l.bias.size()));
  }
}

}  // namespace detail

template <class T>
void MhaWeights<T>::validate(const MhaConfig& cfg) const {
  cfg.validate();
  if (query.size() != cfg.num_heads || key.size() != cfg.num_heads || value.size() != cfg.num_heads) {
    throw ShapeError("MhaWeights: expected " + std::to_string(cfg.num_heads) + " heads");
  }
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::string tag = ".head" + std::to_string(h);
    detail::check_layer(query[h], cfg.d_k, cfg.d_model, "w_q" + tag);
    detail::check_layer(key[h], cfg.d_k, cfg.d_model, "w_k" + tag);
    detail::check_layer(value[h], cfg.d_v, cfg.d_model, "w_v" + tag);
  }
  detail::check_layer(output, cfg.d_model, cfg.concat_width(), "w_o");
}

template <class A>
MhaWeights<typename A::value_type> convert(const A& arith, const MhaWeights<double>& w) {
  MhaWeights<typename A::value_type> out;
  for (const auto& l : w.query) out.query.push_back(convert(arith, l));
  for (const auto& l : w.key) out.key.push_back(convert(arith, l));
  for (const auto& l : w.value) out.value.push_back(convert(arith, l));
  out.output = convert(arith, w.output);
  return out;
}

// Bounded FIFO of fixed-width rows.  Writing to a full channel, reading an
// empty one, or writing a row of the wrong width throws StreamError.
template <class T>
class StreamChannel {
 public:
  using Row = std::vector<T>;

  StreamChannel(std::string name, std::size_t capacity, std::size_t width)
      : name_(std::move(name)), capacity_(capacity), width_(width) {}

  void write(Row row) {
    if (row.size() != width_) {
      throw StreamError(name_ + ": row width " + std::to_string(row.size()) + " != " +
                        std::to_string(width_));
    }
    if (rows_.size() >= capacity_) throw StreamError(name_ + ": overflow (capacity " + std::to_string(capacity_) + ")");
    rows_.push_back(std::move(row));
    ++writes_;
  }

  Row read() {
    if (rows_.empty()) {
      throw StreamError(name_ + ": read past end after " + std::to_string(reads_) + " rows");
    }
    Row r = std::move(rows_.front());
    rows_.pop_front();
    ++reads_;
    return r;
  }

  bool empty() const { return rows_.empty(); }
  std::size_t size() const { return rows_.size(); }
  std::size_t width() const { return width_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t writes() const { return writes_; }
  std::size_t reads() const { return reads_; }
  const std::string& name() const { return name_; }

  // Every row produced was consumed and exactly `n` rows passed through.
  void expect_drained(std::size_t n) const {
    if (writes_ != n || reads_ != n || !rows_.empty()) {
      throw StreamError(name_ + ": expected " + std::to_string(n) + " rows through, saw " +
                        std::to_string(writes_) + " writes / " + std::to_string(reads_) + " reads");
    }
  }

 private:
  std::string name_;
  std::size_t capacity_;
  std::size_t width_;
  std::deque<Row> rows_;
  std::size_t writes_ = 0;
  std::size_t reads_ = 0;
};

template <class A>
using Channel = StreamChannel<typename A::value_type>;

template <class A>
struct HeadStreams {
  Channel<A> q;
  Channel<A> k;
  Channel<A> v;
};

// One byte per key position, nonzero = attend.  Empty means no mask.
using KeyMask = std::span<const std::uint8_t>;

namespace detail {

template <class A>
typename A::value_type inv_sqrt_dk(const A& arith, std::size_t d_k) {
  return arith.from_real(1.0 / std::sqrt(static_cast<double>(d_k)));
}

// Row softmax restricted to attended keys; masked keys get zero weight.
template <class A>
Vec<A> masked_softmax(const A& arith, const SoftmaxConfig* sm, Vec<A> scores, KeyMask mask) {
  if (mask.empty()) return arith.softmax(sm, scores);
  if (mask.size() != scores.size()) throw ShapeError("key mask length != seq_len");
  Vec<A> kept;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (mask[j]) kept.push_back(scores[j]);
  }
  if (kept.empty()) throw std::invalid_argument("key mask excludes every position");
  const Vec<A> probs = arith.softmax(sm, kept);
  std::size_t k = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = mask[j] ? probs[k++] : arith.zero();
  return scores;
}

template <class A>
void expect_exhausted(const Channel<A>& c) {
  if (!c.empty()) {
    throw StreamError(c.name() + ": " + std::to_string(c.size()) + " unexpected extra rows");
  }
}

}  // namespace detail

template <class A>
std::vector<HeadStreams<A>> stage1_project(const A& arith, const MhaConfig& cfg,
                                           const MhaWeights<typename A::value_type>& w,
                                           Channel<A>& input) {
  std::vector<HeadStreams<A>> heads;
  heads.reserve(cfg.num_heads);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::string tag = ".head" + std::to_string(h);
    heads.push_back({Channel<A>("q" + tag, cfg.seq_len, cfg.d_k),
                     Channel<A>("k" + tag, cfg.seq_len, cfg.d_k),
                     Channel<A>("v" + tag, cfg.seq_len, cfg.d_v)});
  }
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    const auto x = input.read();
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      heads[h].q.write(affine(arith, w.query[h].weights, x, w.query[h].bias));
      heads[h].k.write(affine(arith, w.key[h].weights, x, w.key[h].bias));
      heads[h].v.write(affine(arith, w.value[h].weights, x, w.value[h].bias));
    }
  }
  detail::expect_exhausted<A>(input);
  return heads;
}

template <class A>
Channel<A> stage2_scores(const A& arith, const MhaConfig& cfg, const SoftmaxConfig* sm,
                         Channel<A>& q, Channel<A>& k, KeyMask mask = {}) {
  using T = typename A::value_type;
  Matrix<T> k_reg(cfg.seq_len, cfg.d_k, arith.zero());
  for (std::size_t j = 0; j < cfg.seq_len; ++j) {
    const auto row = k.read();
    std::copy(row.begin(), row.end(), k_reg.row(j).begin());
  }
  detail::expect_exhausted<A>(k);

  const T scale = detail::inv_sqrt_dk(arith, cfg.d_k);
  Channel<A> scores("scores." + q.name(), cfg.seq_len, cfg.seq_len);
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    const auto q_row = q.read();
    Vec<A> raw;
    raw.reserve(cfg.seq_len);
    for (std::size_t j = 0; j < cfg.seq_len; ++j) {
      raw.push_back(arith.mul(arith.dot(q_row, k_reg.row(j), arith.zero()), scale));
    }
    scores.write(detail::masked_softmax(arith, sm, std::move(raw), mask));
  }
  detail::expect_exhausted<A>(q);
  return scores;
}

// V stored twice: row-major as received and transposed for column reads.
template <class T>
struct DualAccessBuffer {
  Matrix<T> rows;
  Matrix<T> cols;
};

template <class A>
Channel<A> stage3_apply(const A& arith, const MhaConfig& cfg, Channel<A>& scores, Channel<A>& v) {
  using T = typename A::value_type;
  DualAccessBuffer<T> buf{Matrix<T>(cfg.seq_len, cfg.d_v, arith.zero()),
                          Matrix<T>(cfg.d_v, cfg.seq_len, arith.zero())};
  for (std::size_t j = 0; j < cfg.seq_len; ++j) {
    const auto row = v.read();
    for (std::size_t c = 0; c < cfg.d_v; ++c) {
      buf.rows(j, c) = row[c];
      buf.cols(c, j) = row[c];
    }
  }
  detail::expect_exhausted<A>(v);

  Channel<A> out("attn." + v.name(), cfg.seq_len, cfg.d_v);
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    const auto s = scores.read();
    if (s.size() != cfg.seq_len) throw StreamError("score row width != seq_len");
    Vec<A> o;
    o.reserve(cfg.d_v);
    for (std::size_t c = 0; c < cfg.d_v; ++c) o.push_back(arith.dot(s, buf.cols.row(c), arith.zero()));
    out.write(std::move(o));
  }
  detail::expect_exhausted<A>(scores);
  return out;
}

template <class A>
Channel<A> stage4_concat_project(const A& arith, const MhaConfig& cfg,
                                 const MhaWeights<typename A::value_type>& w,
                                 std::vector<Channel<A>>& head_out) {
  if (head_out.size() != cfg.num_heads) throw StreamError("stage4: head stream count != num_heads");
  Channel<A> out("mha.out", cfg.seq_len, cfg.d_model);
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    Vec<A> concat;
    concat.reserve(cfg.concat_width());
    for (auto& ch : head_out) {
      const auto row = ch.read();
      if (row.size() != cfg.d_v) throw StreamError(ch.name() + ": head row width != d_v");
      concat.insert(concat.end(), row.begin(), row.end());
    }
    out.write(affine(arith, w.output.weights, concat, w.output.bias));
  }
  for (const auto& ch : head_out) detail::expect_exhausted<A>(ch);
  return out;
}

template <class A>
Matrix<typename A::value_type> run_mha_streaming(const A& arith, const MhaConfig& cfg,
                                                 const MhaWeights<typename A::value_type>& w,
                                                 const SoftmaxConfig* sm,
                                                 const Matrix<typename A::value_type>& x,
                                                 KeyMask mask = {}) {
  w.validate(cfg);
  if (x.rows != cfg.seq_len || x.cols != cfg.d_model) {
    throw ShapeError("mha input: expected " + std::to_string(cfg.seq_len) + "x" +
                     std::to_string(cfg.d_model) + ", found " + std::to_string(x.rows) + "x" +
                     std::to_string(x.cols));
  }

  Channel<A> input("mha.in", cfg.seq_len, cfg.d_model);
  for (std::size_t t = 0; t < x.rows; ++t) input.write(Vec<A>(x.row(t).begin(), x.row(t).end()));

  auto heads = stage1_project(arith, cfg, w, input);
  std::vector<Channel<A>> head_out;
  head_out.reserve(cfg.num_heads);
  for (auto& h : heads) {
    auto scores = stage2_scores(arith, cfg, sm, h.q, h.k, mask);
    head_out.push_back(stage3_apply(arith, cfg, scores, h.v));
    scores.expect_drained(cfg.seq_len);
  }
  auto out = stage4_concat_project(arith, cfg, w, head_out);

  Matrix<typename A::value_type> y(cfg.seq_len, cfg.d_model, arith.zero());
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    const auto row = out.read();
    std::copy(row.begin(), row.end(), y.row(t).begin());
  }

  input.expect_drained(cfg.seq_len);
  for (const auto& h : heads) {
    h.q.expect_drained(cfg.seq_len);
    h.k.expect_drained(cfg.seq_len);
    h.v.expect_drained(cfg.seq_len);
  }
  for (const auto& c : head_out) c.expect_drained(cfg.seq_len);
  out.expect_drained(cfg.seq_len);
  return y;
}

template <class A>
Matrix<typename A::value_type> run_mha_reference(const A& arith, const MhaConfig& cfg,
                                                 const MhaWeights<typename A::value_type>& w,
                                                 const SoftmaxConfig* sm,
                                                 const Matrix<typename A::value_type>& x,
                                                 KeyMask mask = {}) {
  using T = typename A::value_type;
  w.validate(cfg);
  if (x.rows != cfg.seq_len || x.cols != cfg.d_model) throw ShapeError("mha input shape mismatch");

  const auto project = [&](const DenseLayer<T>& l) {
    Matrix<T> m(x.rows, l.out_dim(), arith.zero());
    for (std::size_t t = 0; t < x.rows; ++t) {
      const auto r = affine(arith, l.weights, x.row(t), l.bias);
      std::copy(r.begin(), r.end(), m.row(t).begin());
    }
    return m;
  };

  const T scale = detail::inv_sqrt_dk(arith, cfg.d_k);
  const std::size_t n = cfg.seq_len;
  Matrix<T> concat(n, cfg.concat_width(), arith.zero());
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const Matrix<T> q = project(w.query[h]);
    const Matrix<T> k = project(w.key[h]);
    const Matrix<T> v = project(w.value[h]);

    Matrix<T> probs(n, n, arith.zero());
    for (std::size_t t = 0; t < n; ++t) {
      Vec<A> s(n, arith.zero());
      for (std::size_t j = 0; j < n; ++j) s[j] = arith.mul(arith.dot(q.row(t), k.row(j), arith.zero()), scale);
      const auto p = detail::masked_softmax(arith, sm, std::move(s), mask);
      std::copy(p.begin(), p.end(), probs.row(t).begin());
    }

    Matrix<T> v_t(cfg.d_v, n, arith.zero());
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < cfg.d_v; ++c) v_t(c, j) = v(j, c);
    }
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t c = 0; c < cfg.d_v; ++c) {
        concat(t, h * cfg.d_v + c) = arith.dot(probs.row(t), v_t.row(c), arith.zero());
      }
    }
  }

  Matrix<T> y(n, cfg.d_model, arith.zero());
  for (std::size_t t = 0; t < n; ++t) {
    const auto r = affine(arith, w.output.weights, concat.row(t), w.output.bias);
    std::copy(r.begin(), r.end(), y.row(t).begin());
  }
  return y;
}

}  // namespace fxattn
