#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mmd/common.hpp"

namespace mmd::nn {

enum class Activation : std::uint8_t { Identity, ReLU, SELU, Tanh };

std::string_view name(Activation a);
Activation parse_activation(std::string_view s);

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

double activate(Activation a, double z);
/// Derivative with respect to the pre-activation z.
double activate_derivative(Activation a, double z);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Stack of affine layers with elementwise activations.
class DenseNet {
 public:
  DenseNet() = default;
  /// Throws UsageError if dims do not chain or NumericalError on non-finite parameters.
  explicit DenseNet(std::vector<Layer> layers);

  std::span<const Layer> layers() const { return layers_; }
  std::span<Layer> mutable_layers() { return layers_; }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_parameters() const;
  bool empty() const { return layers_.empty(); }

  /// Flat view of all parameters, layer by layer: W (row-major) then b.
  Vector flatten() const;
  void assign(const Vector& flat);

  bool operator==(const DenseNet& other) const;

 private:
  std::vector<Layer> layers_;
};

/// Zero-mean normal weights with variance 2/in (1/in for SELU), zero biases.
/// Every layer but the last uses `hidden`; the last uses `output`.
DenseNet init_net(std::span<const std::size_t> dims, Activation hidden, Activation output,
                  std::uint64_t seed);
/// Same activation on every layer.
DenseNet init_net(std::span<const std::size_t> dims, Activation activation, std::uint64_t seed);

/// Cached per-layer inputs and pre-activations of one forward pass.
struct Tape {
  std::vector<Vector> inputs;
  std::vector<Vector> pre;
  const DenseNet* net = nullptr;
};

struct ForwardResult {
  Vector output;
  Tape tape;
};

ForwardResult forward(const DenseNet& net, const Vector& x);
/// Forward without keeping a tape.
Vector predict(const DenseNet& net, const Vector& x);

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

class GradientSet {
 public:
  GradientSet() = default;
  /// Zero gradients shaped like `net`.
  explicit GradientSet(const DenseNet& net);

  std::span<const LayerGrad> layers() const { return layers_; }
  std::span<LayerGrad> layers() { return layers_; }
  void set_zero();
  GradientSet& operator+=(const GradientSet& other);
  GradientSet& operator*=(double s);
  bool all_finite() const;
  Vector flatten() const;
  bool matches(const DenseNet& net) const;

 private:
  std::vector<LayerGrad> layers_;
};

struct BackwardResult {
  GradientSet grads;
  Vector input_grad;
};

/// Gradients of upstream . y with respect to parameters and input.
BackwardResult backward(const DenseNet& net, const Tape& tape, const Vector& upstream);
/// Adds parameter gradients into `acc` and returns the input gradient.
Vector backward_accumulate(const DenseNet& net, const Tape& tape, const Vector& upstream,
                           GradientSet& acc);

enum class Optimizer : std::uint8_t { SGD, Adam };

/// Per-network optimizer state. Adam uses beta1=0.9, beta2=0.999, eps=1e-8 with bias correction.
struct OptimizerState {
  Optimizer algorithm = Optimizer::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  GradientSet first;
  GradientSet second;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const DenseNet& net, Optimizer algorithm, double learning_rate);
};

/// Applies one update. Refuses (NumericalError, net untouched) when a gradient is non-finite.
void optimizer_step(DenseNet& net, const GradientSet& grads, OptimizerState& state);

/// Central differences (f(p + h e_k) - f(p - h e_k)) / 2h.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& p,
                        double h = 1e-5);

/// Relative error |a - b| / max(|a|, |b|, floor); used by every gradient check.
double relative_error(double a, double b, double floor = 1e-8);
/// Max elementwise relative error between two gradient vectors.
double max_relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-8);

// Checkpoint text format (bit-exact via hexadecimal floating point):
//   net <num_layers>
//   layer <in> <out> <activation>
//   <out lines of `in` hex floats: the weight rows>
//   <one line of `out` hex floats: the bias>
void write_net(std::ostream& out, const DenseNet& net);
DenseNet read_net(std::istream& in);

std::string format_hex(double v);
double parse_hex(const std::string& token);

}  // namespace mmd::nn
