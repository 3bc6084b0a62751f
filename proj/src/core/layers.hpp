// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core/params.hpp"
#include "core/tensor.hpp"

namespace bpc {

enum class LayerKind {
  Conv1d,
  Linear,
  ReLU,
  PReLU,
  BatchNorm1d,
  InstanceNorm1d,
  MaxPool1d,
  AvgPool1d,
  Upsample,
  Add,
  Concat,
  Identity,
  Choice,
  ActQuant,
};

const char* kind_name(LayerKind k);
LayerKind kind_from_name(std::string_view s);

/// Per-sample activation shape; the batch dimension is implicit.
struct ActShape {
  int channels = 0;
  int length = 0;
  bool operator==(const ActShape&) const = default;
};

/// Which non-differentiable steps are replaced by their straight-through
/// surrogate in the forward pass. Only gradient checks turn these on.
struct Surrogate {
  bool mask = false;          // H(theta) -> clamp(theta, -1, 1)
  bool weight_round = false;  // fake_quant(w) -> w
  bool act_round = false;     // PaCT rounding -> clip only
};

struct RunOptions {
  bool training = true;
  Surrogate surrogate{};
  double tau = 1.0;  // softmax temperature of bit-width logits
};

struct RunContext {
  ParamStore& params;
  const RunOptions& opts;
};

/// Per-output-channel gating by a slot of a pruning mask parameter.
struct ChannelGate {
  std::vector<int> param;  // mask parameter per channel, -1 when ungated
  std::vector<int> slot;

  bool active() const;
  std::vector<double> values(const ParamStore& ps, const Surrogate& s) const;
  void apply(Tensor& y, std::span<const double> m) const;
  /// Accumulates STE mask gradients and rescales `dy` into the pre-gate gradient.
  void backward(const Tensor& pre, const Tensor& dy, std::span<const double> m, ParamStore& ps,
                Tensor& dpre) const;
};

inline double heaviside(double t) { return t >= 0.0 ? 1.0 : 0.0; }
inline double ste_grad(double t) { return (t >= -1.0 && t <= 1.0) ? 1.0 : 0.0; }

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual ActShape infer(std::span<const ActShape> in) const = 0;
  virtual Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) = 0;
  /// Accumulates into `din` (one per input) and into parameter gradients.
  virtual void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                        std::span<Tensor* const> din, RunContext& ctx) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Deployable parameter count (weights, biases, affine terms, slopes).
  virtual std::size_t param_count(const ParamStore&) const { return 0; }
  virtual nlohmann::json to_json(const ParamStore&) const { return nlohmann::json::object(); }
  /// Every parameter index the layer references, for re-homing into another store.
  virtual std::vector<int*> param_slots() { return {}; }

  void remap(const ParamStore& from, ParamStore& to);
};

std::unique_ptr<Layer> layer_from_json(LayerKind kind, const nlohmann::json& attrs, const ParamStore& ps);

// ---------------------------------------------------------------------------

struct ConvSpec {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int pad = 0;
  bool bias = true;

  int out_length(int in_len) const { return (in_len + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  bool depthwise() const { return groups > 1 && groups == in_ch && groups == out_ch; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_ch) * (in_ch / groups) * kernel;
  }
};

/// "Same" padding for odd kernels.
inline int same_pad(int kernel, int dilation = 1) { return dilation * (kernel - 1) / 2; }

struct WeightQuant {
  int theta = -1;          // bit-width logits, one per entry of `bits`
  std::vector<int> bits;   // candidate precisions
  int frozen = 0;          // selected precision once the search is over
};

/// 1D convolution; also serves as Linear on (N, C, 1) inputs.
class Conv1d : public Layer {
 public:
  Conv1d(ConvSpec spec, int weight, int bias, bool linear = false);

  static Conv1d create(ParamStore& ps, const std::string& name, ConvSpec spec, std::mt19937_64& rng,
                       bool linear = false);

  LayerKind kind() const override { return linear_ ? LayerKind::Linear : LayerKind::Conv1d; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1d>(*this); }
  std::size_t param_count(const ParamStore&) const override;
  nlohmann::json to_json(const ParamStore& ps) const override;
  std::vector<int*> param_slots() override;

  const ConvSpec& spec() const { return spec_; }
  ConvSpec& spec() { return spec_; }
  int weight() const { return weight_; }
  int bias() const { return bias_; }
  bool is_linear() const { return linear_; }

  ChannelGate gate;
  std::optional<WeightQuant> wq;

  /// Weight tensor actually used by the forward pass under `ctx`.
  std::vector<double> effective_weight(const ParamStore& ps, const RunOptions& opts) const;
  /// Mixing coefficients softmax(theta / tau) when a bit-width search is attached.
  std::vector<double> bit_mix(const ParamStore& ps, double tau) const;

 private:
  ConvSpec spec_;
  int weight_ = -1;
  int bias_ = -1;
  bool linear_ = false;

  // forward cache
  std::vector<double> w_eff_;
  std::vector<std::vector<double>> variants_;
  std::vector<double> mix_;
  std::vector<double> gate_m_;
  Tensor pre_gate_;
};

class ReLU : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::ReLU; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

class PReLU : public Layer {
 public:
  explicit PReLU(int slope) : slope_(slope) {}
  static PReLU create(ParamStore& ps, const std::string& name, int channels, double init = 0.25);

  LayerKind kind() const override { return LayerKind::PReLU; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PReLU>(*this); }
  std::size_t param_count(const ParamStore& ps) const override { return ps.value(slope_).size(); }
  nlohmann::json to_json(const ParamStore& ps) const override;
  std::vector<int*> param_slots() override { return {&slope_}; }
  int slope() const { return slope_; }

 private:
  int slope_;
};

/// Batch or instance normalization with affine terms and running statistics.
/// Instance normalization with running statistics tracked uses them in eval mode,
/// which is what makes it foldable into a preceding convolution.
class Norm1d : public Layer {
 public:
  Norm1d(bool instance, int gamma, int beta, int mean, int var, double eps = 1e-5, double momentum = 0.1,
         bool track_running = true);
  static Norm1d create(ParamStore& ps, const std::string& name, int channels, bool instance = false);

  LayerKind kind() const override { return instance_ ? LayerKind::InstanceNorm1d : LayerKind::BatchNorm1d; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Norm1d>(*this); }
  std::size_t param_count(const ParamStore& ps) const override { return 2 * ps.value(gamma_).size(); }
  nlohmann::json to_json(const ParamStore& ps) const override;
  std::vector<int*> param_slots() override;

  bool instance() const { return instance_; }
  bool uses_batch_stats(bool training) const { return training || !track_running_; }
  int gamma() const { return gamma_; }
  int beta() const { return beta_; }
  int running_mean() const { return mean_; }
  int running_var() const { return var_; }
  double eps() const { return eps_; }
  bool tracks_running() const { return track_running_; }

  ChannelGate gate;

 private:
  bool instance_;
  int gamma_, beta_, mean_, var_;
  double eps_, momentum_;
  bool track_running_;

  Tensor xhat_;
  std::vector<double> inv_std_;  // per (group) statistic
  bool batch_stats_ = false;
  std::vector<double> gate_m_;
  Tensor pre_gate_;
};

class Pool1d : public Layer {
 public:
  Pool1d(bool max, int kernel, int stride) : max_(max), kernel_(kernel), stride_(stride) {}

  LayerKind kind() const override { return max_ ? LayerKind::MaxPool1d : LayerKind::AvgPool1d; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Pool1d>(*this); }
  nlohmann::json to_json(const ParamStore&) const override;
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

 private:
  bool max_;
  int kernel_, stride_;
  std::vector<int> argmax_;
};

class Upsample : public Layer {
 public:
  explicit Upsample(int factor) : factor_(factor) {}
  LayerKind kind() const override { return LayerKind::Upsample; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample>(*this); }
  nlohmann::json to_json(const ParamStore&) const override;
  int factor() const { return factor_; }

 private:
  int factor_;
};

class Add : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Add; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Add>(*this); }
};

/// Channel-wise concatenation.
class Concat : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Concat; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Concat>(*this); }
};

class Identity : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Identity; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Identity>(*this); }
};

/// Signed PaCT activation fake-quantizer with a trainable clip alpha.
class ActQuant : public Layer {
 public:
  ActQuant(int alpha, int bits = 8) : alpha_(alpha), bits_(bits) {}

  LayerKind kind() const override { return LayerKind::ActQuant; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ActQuant>(*this); }
  nlohmann::json to_json(const ParamStore& ps) const override;
  std::vector<int*> param_slots() override { return {&alpha_}; }

  int alpha() const { return alpha_; }
  int bits() const { return bits_; }

 private:
  int alpha_;
  int bits_;
};

/// One alternative of a choice site: a chain of convolutions, empty for identity.
struct Alternative {
  std::string label;
  std::vector<Conv1d> chain;
};

/// Architecture decision site. Output = sum_j softmax(theta)_j * alternative_j(x).
class Choice : public Layer {
 public:
  Choice(int theta, std::vector<Alternative> alts);

  LayerKind kind() const override { return LayerKind::Choice; }
  ActShape infer(std::span<const ActShape> in) const override;
  Tensor forward(std::span<const Tensor* const> in, RunContext& ctx) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din, RunContext& ctx) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Choice>(*this); }
  /// Parameter count of the currently selected alternative.
  std::size_t param_count(const ParamStore& ps) const override;
  nlohmann::json to_json(const ParamStore& ps) const override;
  std::vector<int*> param_slots() override;

  int theta() const { return theta_; }
  const std::vector<Alternative>& alternatives() const { return alts_; }
  std::vector<Alternative>& alternatives() { return alts_; }
  std::vector<double> probabilities(const ParamStore& ps) const;
  std::vector<double> alt_costs(const ParamStore& ps) const;
  /// argmax of theta; ties go to the lowest index.
  int selected(const ParamStore& ps) const;

  /// When non-negative, the mixture is exactly one-hot on this alternative.
  int forced = -1;

 private:
  int theta_;
  std::vector<Alternative> alts_;
  std::vector<double> mix_;
  std::vector<std::vector<Tensor>> acts_;  // per alternative: input of each chain element, then output
};

/// Gradient span of a parameter, allocated on first use.
std::span<double> param_grad(ParamStore& ps, int idx);

}  // namespace bpc
