#pragma once

// Encoder-stack flavor tagger: N encoder blocks (MHA + two-layer feed
// forward, optional residual adds, no layer norm), flatten, a ReLU dense
// head and a softmax output layer.

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fxattn/fxp.hpp"
#include "fxattn/mha.hpp"
#include "fxattn/nn_core.hpp"
#include "fxattn/softmax_lut.hpp"

namespace fxattn {

struct EncoderBlockConfig {
  MhaConfig mha{};
  std::array<std::size_t, 2> ff_dims{8, 6};
  bool residual_mha = true;
  bool residual_ff = true;
  bool layer_norm = false;  // not supported; must stay false
  Activation ff_activation = Activation::ReLU;

  friend bool operator==(const EncoderBlockConfig&, const EncoderBlockConfig&) = default;
};

struct ModelConfig {
  std::size_t num_encoder_blocks = 3;
  EncoderBlockConfig encoder{};
  std::vector<std::size_t> head_dims{32, 16, 8};
  std::size_t num_classes = 3;
  std::size_t seq_len = 15;
  std::size_t num_features = 6;
  SoftmaxLutSpec softmax{};

  std::size_t d_model() const { return encoder.mha.d_model; }
  std::size_t flatten_width() const { return seq_len * d_model(); }
  // Throws std::invalid_argument describing the first inconsistency.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct EncoderBlockWeights {
  MhaWeights<T> mha;
  DenseLayer<T> ff0;
  DenseLayer<T> ff1;

  friend bool operator==(const EncoderBlockWeights&, const EncoderBlockWeights&) = default;
};

template <class T>
struct ModelWeights {
  std::vector<EncoderBlockWeights<T>> blocks;
  std::vector<DenseLayer<T>> head;
  DenseLayer<T> output;

  // Throws ShapeError naming the offending tensor.
  void validate(const ModelConfig& cfg) const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Float when `fixed` is empty.
struct ForwardMode {
  std::optional<FxFormat> fixed;

  static ForwardMode floating() { return {}; }
  static ForwardMode fixed_point(FxFormat fmt) { return {fmt}; }
  std::string to_string() const { return fixed ? fixed->to_string() : "float"; }
};

// Weights converted once for one arithmetic; forward() may be called from
// several threads concurrently.
template <class A>
class Engine {
 public:
  Engine(const ModelConfig& cfg, const ModelWeights<double>& weights, A arith);

  // sample: seq_len x num_features.  Returns class probabilities [b, c, light].
  std::vector<double> forward(const Matrix<double>& sample) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  using T = typename A::value_type;

  ModelConfig cfg_;
  A arith_;
  ModelWeights<T> weights_;
  std::optional<SoftmaxConfig> attn_softmax_;
  std::optional<SoftmaxConfig> output_softmax_;
};

extern template class Engine<FloatArith>;
extern template class Engine<FixedArith>;

// Either engine behind one interface.
class InferenceModel {
 public:
  InferenceModel(const ModelConfig& cfg, const ModelWeights<double>& weights, ForwardMode mode);
  ~InferenceModel();
  InferenceModel(InferenceModel&&) noexcept;
  InferenceModel& operator=(InferenceModel&&) noexcept;

  std::vector<double> forward(const Matrix<double>& sample) const;
  const ForwardMode& mode() const { return mode_; }

 private:
  struct Impl;
  ForwardMode mode_;
  std::unique_ptr<Impl> impl_;
};

// One-shot convenience; prefer InferenceModel when evaluating many samples.
std::vector<double> forward(const ModelConfig& cfg, const ModelWeights<double>& weights,
                            const Matrix<double>& sample, ForwardMode mode);

std::size_t param_count(const ModelConfig& cfg);

// All-zero weights with the shapes implied by cfg.
ModelWeights<double> make_zero_weights(const ModelConfig& cfg);

// Handcrafted weights whose b-class logit increases with the per-jet mean of
// one track feature.  Block 0 attends uniformly (zero Q/K) and routes that
// feature's mean through V and W_o onto the residual stream; the other blocks
// are pass-through; the dense head carries the mean as relu(m), relu(-m) and
// the output layer turns it into three ordered logits.
ModelWeights<double> make_analytic_weights(const ModelConfig& cfg, std::size_t feature_index);

struct AnalyticThresholds {
  double b_vs_c = 1.0;      // b logit crosses zero at this mean
  double c_vs_light = 0.3;  // light logit crosses zero at this mean
  double gain = 3.0;
};
ModelWeights<double> make_analytic_weights(const ModelConfig& cfg, std::size_t feature_index,
                                           const AnalyticThresholds& thresholds);

struct LoadedModel {
  ModelConfig config;
  ModelWeights<double> weights;
};

// JSON document {"format", "version", "config", "tensors"}; see README.
// Values are written at 9 significant digits.
void save_weights(const std::string& path, const ModelConfig& cfg, const ModelWeights<double>& w);
std::string weights_to_json(const ModelConfig& cfg, const ModelWeights<double>& w);
// Throws ParseError (syntax, missing tensor) or ShapeError (dims).
LoadedModel load_weights(const std::string& path);
LoadedModel weights_from_json(const std::string& text, const std::string& origin);

// Tensor names in file order, e.g. block0.mha.w_q.head0.
std::vector<std::string> tensor_names(const ModelConfig& cfg);

double round_to_significant(double x, int digits = 9);

}  // namespace fxattn
