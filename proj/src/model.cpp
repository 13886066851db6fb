#include "fxattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <variant>

#include <nlohmann/json.hpp>

#include "fxattn/error.hpp"

namespace fxattn {

using ojson = nlohmann::ordered_json;

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  encoder.mha.validate();
  if (num_features == 0 || seq_len == 0 || num_classes == 0) fail("dimensions must be >= 1");
  if (encoder.mha.seq_len != seq_len) fail("mha.seq_len must equal seq_len");
  if (num_features != d_model()) fail("num_features must equal d_model (tracks feed the encoder directly)");
  if (encoder.ff_dims[0] == 0) fail("ff_dims[0] must be >= 1");
  if (encoder.ff_dims[1] != d_model()) fail("ff_dims[1] must equal d_model");
  if (encoder.layer_norm) fail("layer normalization is not supported");
  for (auto d : head_dims) {
    if (d == 0) fail("head_dims entries must be >= 1");
  }
}

namespace {

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b) + "."; }

template <class T>
DenseLayer<T> zero_layer(std::size_t out, std::size_t in, Activation act) {
  return DenseLayer<T>{Matrix<T>(out, in), std::vector<T>(out), act};
}

// (name, layer) pairs in file order.
template <class W, class F>
void for_each_layer(const ModelConfig& cfg, W& w, F&& fn) {
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    const std::string p = block_prefix(b);
    auto& blk = w.blocks[b];
    for (std::size_t h = 0; h < blk.mha.query.size(); ++h) {
      const std::string hs = ".head" + std::to_string(h);
      fn(p + "mha.w_q" + hs, p + "mha.b_q" + hs, blk.mha.query[h], cfg.encoder.mha.d_k, cfg.d_model());
      fn(p + "mha.w_k" + hs, p + "mha.b_k" + hs, blk.mha.key[h], cfg.encoder.mha.d_k, cfg.d_model());
      fn(p + "mha.w_v" + hs, p + "mha.b_v" + hs, blk.mha.value[h], cfg.encoder.mha.d_v, cfg.d_model());
    }
    fn(p + "mha.w_o", p + "mha.b_o", blk.mha.output, cfg.d_model(), cfg.encoder.mha.concat_width());
    fn(p + "ff0.weight", p + "ff0.bias", blk.ff0, cfg.encoder.ff_dims[0], cfg.d_model());
    fn(p + "ff1.weight", p + "ff1.bias", blk.ff1, cfg.encoder.ff_dims[1], cfg.encoder.ff_dims[0]);
  }
  std::size_t in = cfg.flatten_width();
  for (std::size_t i = 0; i < w.head.size(); ++i) {
    const std::string p = "head" + std::to_string(i) + ".";
    fn(p + "weight", p + "bias", w.head[i], cfg.head_dims[i], in);
    in = cfg.head_dims[i];
  }
  fn(std::string("output.weight"), std::string("output.bias"), w.output, cfg.num_classes, in);
}

template <class A>
ModelWeights<typename A::value_type> convert_weights(const A& arith, const ModelWeights<double>& w) {
  ModelWeights<typename A::value_type> out;
  for (const auto& b : w.blocks) {
    out.blocks.push_back({convert(arith, b.mha), convert(arith, b.ff0), convert(arith, b.ff1)});
  }
  for (const auto& l : w.head) out.head.push_back(convert(arith, l));
  out.output = convert(arith, w.output);
  return out;
}

}  // namespace

template <class T>
void ModelWeights<T>::validate(const ModelConfig& cfg) const {
  cfg.validate();
  if (blocks.size() != cfg.num_encoder_blocks) {
    throw ShapeError("expected " + std::to_string(cfg.num_encoder_blocks) + " encoder blocks, found " +
                     std::to_string(blocks.size()));
  }
  if (head.size() != cfg.head_dims.size()) {
    throw ShapeError("expected " + std::to_string(cfg.head_dims.size()) + " head layers, found " +
                     std::to_string(head.size()));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& m = blocks[b].mha;
    if (m.query.size() != cfg.encoder.mha.num_heads || m.key.size() != cfg.encoder.mha.num_heads ||
        m.value.size() != cfg.encoder.mha.num_heads) {
      throw ShapeError(block_prefix(b) + "mha: expected " + std::to_string(cfg.encoder.mha.num_heads) +
                       " heads");
    }
  }
  for_each_layer(cfg, *this, [](const std::string& wname, const std::string&, const DenseLayer<T>& l,
                                std::size_t out, std::size_t in) {
    detail::check_layer(l, out, in, wname);
  });
}

template struct ModelWeights<double>;
template struct ModelWeights<FxValue>;

std::vector<std::string> tensor_names(const ModelConfig& cfg) {
  auto w = make_zero_weights(cfg);
  std::vector<std::string> names;
  for_each_layer(cfg, w, [&](const std::string& wn, const std::string& bn, auto&, std::size_t, std::size_t) {
    names.push_back(wn);
    names.push_back(bn);
  });
  return names;
}

ModelWeights<double> make_zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const auto& m = cfg.encoder.mha;
  ModelWeights<double> w;
  for (std::size_t b = 0; b < cfg.num_encoder_blocks; ++b) {
    EncoderBlockWeights<double> blk;
    for (std::size_t h = 0; h < m.num_heads; ++h) {
      blk.mha.query.push_back(zero_layer<double>(m.d_k, m.d_model, Activation::None));
      blk.mha.key.push_back(zero_layer<double>(m.d_k, m.d_model, Activation::None));
      blk.mha.value.push_back(zero_layer<double>(m.d_v, m.d_model, Activation::None));
    }
    blk.mha.output = zero_layer<double>(m.d_model, m.concat_width(), Activation::None);
    blk.ff0 = zero_layer<double>(cfg.encoder.ff_dims[0], m.d_model, cfg.encoder.ff_activation);
    blk.ff1 = zero_layer<double>(cfg.encoder.ff_dims[1], cfg.encoder.ff_dims[0], Activation::None);
    w.blocks.push_back(std::move(blk));
  }
  std::size_t in = cfg.flatten_width();
  for (auto d : cfg.head_dims) {
    w.head.push_back(zero_layer<double>(d, in, Activation::ReLU));
    in = d;
  }
  w.output = zero_layer<double>(cfg.num_classes, in, Activation::Softmax);
  return w;
}

ModelWeights<double> make_analytic_weights(const ModelConfig& cfg, std::size_t feature_index) {
  return make_analytic_weights(cfg, feature_index, AnalyticThresholds{});
}

ModelWeights<double> make_analytic_weights(const ModelConfig& cfg, std::size_t feature_index,
                                           const AnalyticThresholds& th) {
  cfg.validate();
  if (feature_index >= cfg.num_features) {
    throw std::invalid_argument("feature_index " + std::to_string(feature_index) + " >= num_features");
  }
  if (cfg.num_classes != 3) throw std::invalid_argument("analytic weights need exactly 3 classes");
  if (cfg.head_dims.empty()) throw std::invalid_argument("analytic weights need at least one head layer");
  for (auto d : cfg.head_dims) {
    if (d < 2) throw std::invalid_argument("analytic weights need head layers of width >= 2");
  }
  const bool has_blocks = cfg.num_encoder_blocks > 0;
  if (has_blocks && !(cfg.encoder.residual_mha && cfg.encoder.residual_ff)) {
    throw std::invalid_argument("analytic weights need residual connections around MHA and FF");
  }

  auto w = make_zero_weights(cfg);
  const std::size_t d = cfg.d_model();
  const auto n = static_cast<double>(cfg.seq_len);

  // Uniform attention makes every MHA output row equal to mean_t(v_t); with
  // V selecting the feature and W_o writing it back, block 0 adds the
  // feature mean m to each track's feature column.
  if (has_blocks) {
    w.blocks[0].mha.value[0].weights(0, feature_index) = 1.0;
    w.blocks[0].mha.output.weights(feature_index, 0) = 1.0;
  }

  // Column sum over tracks is n*m + n*m with the block-0 add, n*m without.
  const double scale = 1.0 / (has_blocks ? 2.0 * n : n);
  auto& first = w.head[0].weights;
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    first(0, t * d + feature_index) = scale;
    first(1, t * d + feature_index) = -scale;
  }
  for (std::size_t i = 1; i < w.head.size(); ++i) {
    w.head[i].weights(0, 0) = 1.0;
    w.head[i].weights(1, 1) = 1.0;
  }

  // Classes are ordered [b, c, light]; with u0 - u1 = m:
  //   logit_b = g (m - b_vs_c), logit_c = 0, logit_light = g (c_vs_light - m).
  auto& out = w.output;
  out.weights(0, 0) = th.gain;
  out.weights(0, 1) = -th.gain;
  out.bias[0] = -th.gain * th.b_vs_c;
  out.weights(2, 0) = -th.gain;
  out.weights(2, 1) = th.gain;
  out.bias[2] = th.gain * th.c_vs_light;
  return w;
}

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
  const auto& m = cfg.encoder.mha;
  const std::size_t mha = m.num_heads * (2 * dense(m.d_model, m.d_k) + dense(m.d_model, m.d_v)) +
                          dense(m.concat_width(), m.d_model);
  const std::size_t ff = dense(m.d_model, cfg.encoder.ff_dims[0]) +
                         dense(cfg.encoder.ff_dims[0], cfg.encoder.ff_dims[1]);
  std::size_t total = cfg.num_encoder_blocks * (mha + ff);
  std::size_t in = cfg.flatten_width();
  for (auto d : cfg.head_dims) {
    total += dense(in, d);
    in = d;
  }
  return total + dense(in, cfg.num_classes);
}

// ---------------------------------------------------------------------------
// Engine

template <class A>
Engine<A>::Engine(const ModelConfig& cfg, const ModelWeights<double>& weights, A arith)
    : cfg_(cfg), arith_(arith) {
  weights.validate(cfg_);
  weights_ = convert_weights(arith_, weights);
  if constexpr (std::is_same_v<A, FixedArith>) {
    attn_softmax_ = make_softmax_config(cfg_.softmax, cfg_.seq_len, arith_.fmt);
    output_softmax_ = make_softmax_config(cfg_.softmax, cfg_.num_classes, arith_.fmt);
  }
}

template <class A>
std::vector<double> Engine<A>::forward(const Matrix<double>& sample) const {
  if (sample.rows != cfg_.seq_len || sample.cols != cfg_.num_features) {
    throw ShapeError("sample: expected " + std::to_string(cfg_.seq_len) + "x" +
                     std::to_string(cfg_.num_features) + ", found " + std::to_string(sample.rows) +
                     "x" + std::to_string(sample.cols));
  }
  for (double v : sample.data) {
    if (std::isnan(v)) throw std::domain_error("sample contains NaN");
  }

  const SoftmaxConfig* attn_sm = attn_softmax_ ? &*attn_softmax_ : nullptr;
  const SoftmaxConfig* out_sm = output_softmax_ ? &*output_softmax_ : nullptr;
  const auto& enc = cfg_.encoder;

  Matrix<T> x = convert(arith_, sample);
  for (const auto& blk : weights_.blocks) {
    Matrix<T> a = run_mha_streaming(arith_, enc.mha, blk.mha, attn_sm, x);
    if (enc.residual_mha) {
      for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = arith_.add(x.data[i], a.data[i]);
    } else {
      x = std::move(a);
    }
    for (std::size_t t = 0; t < x.rows; ++t) {
      const auto hidden = dense_forward(arith_, blk.ff0, x.row(t));
      const auto f = dense_forward(arith_, blk.ff1, std::span<const T>(hidden));
      auto row = x.row(t);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = enc.residual_ff ? arith_.add(row[c], f[c]) : f[c];
    }
  }

  Vec<A> v = flatten(x);
  for (const auto& layer : weights_.head) v = dense_forward(arith_, layer, std::span<const T>(v));
  const Vec<A> probs = dense_forward(arith_, weights_.output, std::span<const T>(v), out_sm);

  std::vector<double> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(arith_.to_real(p));
  return out;
}

template class Engine<FloatArith>;
template class Engine<FixedArith>;

struct InferenceModel::Impl {
  std::variant<Engine<FloatArith>, Engine<FixedArith>> engine;
};

InferenceModel::InferenceModel(const ModelConfig& cfg, const ModelWeights<double>& weights,
                               ForwardMode mode)
    : mode_(mode) {
  if (mode.fixed) {
    impl_ = std::make_unique<Impl>(Impl{Engine<FixedArith>(cfg, weights, FixedArith{*mode.fixed})});
  } else {
    impl_ = std::make_unique<Impl>(Impl{Engine<FloatArith>(cfg, weights, FloatArith{})});
  }
}

InferenceModel::~InferenceModel() = default;
InferenceModel::InferenceModel(InferenceModel&&) noexcept = default;
InferenceModel& InferenceModel::operator=(InferenceModel&&) noexcept = default;

std::vector<double> InferenceModel::forward(const Matrix<double>& sample) const {
  return std::visit([&](const auto& e) { return e.forward(sample); }, impl_->engine);
}

std::vector<double> forward(const ModelConfig& cfg, const ModelWeights<double>& weights,
                            const Matrix<double>& sample, ForwardMode mode) {
  return InferenceModel(cfg, weights, mode).forward(sample);
}

// ---------------------------------------------------------------------------
// Weight file

double round_to_significant(double x, int digits) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return std::strtod(buf, nullptr);
}

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::Softmax: return "softmax";
  }
  return "none";
}

Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::ReLU;
  if (s == "softmax") return Activation::Softmax;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

ojson config_to_json(const ModelConfig& cfg) {
  const auto& m = cfg.encoder.mha;
  ojson enc = {{"d_model", m.d_model},
               {"num_heads", m.num_heads},
               {"d_k", m.d_k},
               {"d_v", m.d_v},
               {"ff_dims", cfg.encoder.ff_dims},
               {"ff_activation", activation_name(cfg.encoder.ff_activation)},
               {"residual_mha", cfg.encoder.residual_mha},
               {"residual_ff", cfg.encoder.residual_ff},
               {"layer_norm", cfg.encoder.layer_norm}};
  ojson sm = {{"exp_size", cfg.softmax.exp_size},
              {"exp_range", {cfg.softmax.exp_lo, cfg.softmax.exp_hi}},
              {"inv_size", cfg.softmax.inv_size}};
  return ojson{{"num_encoder_blocks", cfg.num_encoder_blocks},
               {"seq_len", cfg.seq_len},
               {"num_features", cfg.num_features},
               {"num_classes", cfg.num_classes},
               {"head_dims", cfg.head_dims},
               {"encoder", enc},
               {"softmax", sm}};
}

ModelConfig config_from_json(const ojson& j) {
  ModelConfig cfg;
  cfg.num_encoder_blocks = j.at("num_encoder_blocks").get<std::size_t>();
  cfg.seq_len = j.at("seq_len").get<std::size_t>();
  cfg.num_features = j.at("num_features").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.head_dims = j.at("head_dims").get<std::vector<std::size_t>>();
  const auto& e = j.at("encoder");
  cfg.encoder.mha = MhaConfig{e.at("d_model").get<std::size_t>(), e.at("num_heads").get<std::size_t>(),
                              e.at("d_k").get<std::size_t>(), e.at("d_v").get<std::size_t>(), cfg.seq_len};
  cfg.encoder.ff_dims = e.at("ff_dims").get<std::array<std::size_t, 2>>();
  cfg.encoder.ff_activation = parse_activation(e.value("ff_activation", std::string("relu")));
  cfg.encoder.residual_mha = e.at("residual_mha").get<bool>();
  cfg.encoder.residual_ff = e.at("residual_ff").get<bool>();
  cfg.encoder.layer_norm = e.value("layer_norm", false);
  if (j.contains("softmax")) {
    const auto& s = j.at("softmax");
    cfg.softmax.exp_size = s.at("exp_size").get<std::size_t>();
    const auto range = s.at("exp_range").get<std::array<double, 2>>();
    cfg.softmax.exp_lo = range[0];
    cfg.softmax.exp_hi = range[1];
    cfg.softmax.inv_size = s.at("inv_size").get<std::size_t>();
  }
  return cfg;
}

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte; ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace

std::string weights_to_json(const ModelConfig& cfg, const ModelWeights<double>& w) {
  w.validate(cfg);
  ojson tensors = ojson::object();
  for_each_layer(cfg, w, [&](const std::string& wn, const std::string& bn, const DenseLayer<double>& l,
                                std::size_t, std::size_t) {
    ojson rows = ojson::array();
    for (std::size_t r = 0; r < l.weights.rows; ++r) {
      ojson row = ojson::array();
      for (double v : l.weights.row(r)) row.push_back(round_to_significant(v));
      rows.push_back(std::move(row));
    }
    ojson bias = ojson::array();
    for (double v : l.bias) bias.push_back(round_to_significant(v));
    tensors[wn] = std::move(rows);
    tensors[bn] = std::move(bias);
  });
  ojson doc = {{"format", "fxattn-weights"}, {"version", 1}, {"config", config_to_json(cfg)},
               {"tensors", std::move(tensors)}};
  return doc.dump(1) + "\n";
}

void save_weights(const std::string& path, const ModelConfig& cfg, const ModelWeights<double>& w) {
  const std::string text = weights_to_json(cfg, w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open for writing");
  out << text;
  if (!out) throw ParseError(path, 0, "write failed");
}

LoadedModel weights_from_json(const std::string& text, const std::string& origin) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw ParseError(origin, line_of_byte(text, e.byte), e.what());
  }

  LoadedModel out;
  try {
    if (doc.value("format", std::string()) != "fxattn-weights") {
      throw ParseError(origin, 0, "not an fxattn weight file (format field)");
    }
    out.config = config_from_json(doc.at("config"));
    out.config.validate();
  } catch (const ojson::exception& e) {
    throw ParseError(origin, 0, std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(origin, 0, e.what());
  }

  if (!doc.contains("tensors") || !doc["tensors"].is_object()) {
    throw ParseError(origin, 0, "missing 'tensors' object");
  }
  const ojson& tensors = doc["tensors"];
  out.weights = make_zero_weights(out.config);

  std::size_t consumed = 0;
  for_each_layer(out.config, out.weights, [&](const std::string& wn, const std::string& bn,
                                              DenseLayer<double>& l, std::size_t rows, std::size_t cols) {
    for (const auto* name : {&wn, &bn}) {
      if (!tensors.contains(*name)) throw ParseError(origin, 0, "missing tensor '" + *name + "'");
    }
    const ojson& m = tensors[wn];
    const ojson& b = tensors[bn];
    try {
      const auto values = m.get<std::vector<std::vector<double>>>();
      const std::size_t found_cols = values.empty() ? 0 : values.front().size();
      for (const auto& r : values) {
        if (r.size() != found_cols) throw ShapeError("tensor '" + wn + "': ragged rows");
      }
      if (values.size() != rows || found_cols != cols) {
        throw ShapeError("tensor '" + wn + "': expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", found " + std::to_string(values.size()) + "x" +
                         std::to_string(found_cols));
      }
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(values[r].begin(), values[r].end(), l.weights.row(r).begin());
      }
      auto bias = b.get<std::vector<double>>();
      if (bias.size() != rows) {
        throw ShapeError("tensor '" + bn + "': expected length " + std::to_string(rows) + ", found " +
                         std::to_string(bias.size()));
      }
      l.bias = std::move(bias);
    } catch (const ojson::exception& e) {
      throw ParseError(origin, 0, "tensor '" + wn + "': " + e.what());
    }
    consumed += 2;
  });
  if (consumed != tensors.size()) {
    for (auto it = tensors.begin(); it != tensors.end(); ++it) {
      const auto names = tensor_names(out.config);
      if (std::find(names.begin(), names.end(), it.key()) == names.end()) {
        throw ParseError(origin, 0, "unexpected tensor '" + it.key() + "'");
      }
    }
  }
  return out;
}

LoadedModel load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open weight file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return weights_from_json(ss.str(), path);
}

}  // namespace fxattn
