#include "mmd/nn.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace mmd::nn {

std::string_view name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::SELU: return "selu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  for (const auto a : {Activation::Identity, Activation::ReLU, Activation::SELU, Activation::Tanh}) {
    if (s == name(a)) return a;
  }
  throw DataError("unknown activation '" + std::string(s) + "'");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::SELU: return z > 0.0 ? kSeluLambda * z : kSeluLambda * kSeluAlpha * std::expm1(z);
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::SELU: return z > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(z);
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

// ---- DenseNet -------------------------------------------------------------

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.bias.size() != l.weight.rows()) {
      throw UsageError("layer " + std::to_string(k) + ": bias length does not match weight rows");
    }
    if (l.weight.rows() == 0 || l.weight.cols() == 0) {
      throw UsageError("layer " + std::to_string(k) + ": empty weight matrix");
    }
    if (k > 0 && l.in_dim() != layers_[k - 1].out_dim()) {
      throw UsageError("layer " + std::to_string(k) + ": input dim " + std::to_string(l.in_dim()) +
                       " does not chain with previous output " +
                       std::to_string(layers_[k - 1].out_dim()));
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw NumericalError("layer " + std::to_string(k) + ": non-finite parameters");
    }
  }
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t DenseNet::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector DenseNet::flatten() const {
  Vector flat(static_cast<Eigen::Index>(num_parameters()));
  Eigen::Index pos = 0;
  for (const auto& l : layers_) {
    flat.segment(pos, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    pos += l.weight.size();
    flat.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return flat;
}

void DenseNet::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_parameters()) {
    throw UsageError("parameter vector length mismatch");
  }
  Eigen::Index pos = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vector>(l.weight.data(), l.weight.size()) = flat.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& a = layers_[k];
    const auto& b = other.layers_[k];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias) {
      return false;
    }
  }
  return true;
}

DenseNet init_net(std::span<const std::size_t> dims, Activation hidden, Activation output,
                  std::uint64_t seed) {
  if (dims.size() < 2) throw UsageError("init_net needs at least two dims");
  for (const auto d : dims) {
    if (d == 0) throw UsageError("init_net dims must be >= 1");
  }
  Rng rng(seed);
  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(dims[k]);
    const auto out = static_cast<Eigen::Index>(dims[k + 1]);
    Layer l;
    l.activation = k + 2 == dims.size() ? output : hidden;
    const double var = (l.activation == Activation::SELU ? 1.0 : 2.0) / static_cast<double>(in);
    const double sd = std::sqrt(var);
    l.weight.resize(out, in);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = sd * rng.normal();
    l.bias = Vector::Zero(out);
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

DenseNet init_net(std::span<const std::size_t> dims, Activation activation, std::uint64_t seed) {
  return init_net(dims, activation, activation, seed);
}

// ---- forward / backward ---------------------------------------------------

ForwardResult forward(const DenseNet& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
    throw UsageError("forward: input has " + std::to_string(x.size()) + " entries, net expects " +
                     std::to_string(net.input_dim()));
  }
  if (!x.allFinite()) throw NumericalError("forward: non-finite input");
  ForwardResult r;
  r.tape.net = &net;
  r.tape.inputs.reserve(net.layers().size());
  r.tape.pre.reserve(net.layers().size());
  Vector a = x;
  for (const auto& l : net.layers()) {
    Vector z = l.bias;
    z.noalias() += l.weight * a;
    r.tape.inputs.push_back(std::move(a));
    a = z.unaryExpr([&](double v) { return activate(l.activation, v); });
    r.tape.pre.push_back(std::move(z));
  }
  r.output = std::move(a);
  return r;
}

Vector predict(const DenseNet& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
    throw UsageError("predict: input dimension mismatch");
  }
  Vector a = x;
  for (const auto& l : net.layers()) {
    Vector z = l.bias;
    z.noalias() += l.weight * a;
    a = z.unaryExpr([&](double v) { return activate(l.activation, v); });
  }
  return a;
}

GradientSet::GradientSet(const DenseNet& net) {
  for (const auto& l : net.layers()) {
    layers_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
}

void GradientSet::set_zero() {
  for (auto& g : layers_) {
    g.weight.setZero();
    g.bias.setZero();
  }
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
  if (other.layers_.size() != layers_.size()) throw UsageError("gradient set shape mismatch");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layers_[k].weight += other.layers_[k].weight;
    layers_[k].bias += other.layers_[k].bias;
  }
  return *this;
}

GradientSet& GradientSet::operator*=(double s) {
  for (auto& g : layers_) {
    g.weight *= s;
    g.bias *= s;
  }
  return *this;
}

bool GradientSet::all_finite() const {
  for (const auto& g : layers_) {
    if (!g.weight.allFinite() || !g.bias.allFinite()) return false;
  }
  return true;
}

Vector GradientSet::flatten() const {
  Eigen::Index n = 0;
  for (const auto& g : layers_) n += g.weight.size() + g.bias.size();
  Vector flat(n);
  Eigen::Index pos = 0;
  for (const auto& g : layers_) {
    flat.segment(pos, g.weight.size()) = Eigen::Map<const Vector>(g.weight.data(), g.weight.size());
    pos += g.weight.size();
    flat.segment(pos, g.bias.size()) = g.bias;
    pos += g.bias.size();
  }
  return flat;
}

bool GradientSet::matches(const DenseNet& net) const {
  if (layers_.size() != net.layers().size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = net.layers()[k];
    if (layers_[k].weight.rows() != l.weight.rows() || layers_[k].weight.cols() != l.weight.cols() ||
        layers_[k].bias.size() != l.bias.size()) {
      return false;
    }
  }
  return true;
}

Vector backward_accumulate(const DenseNet& net, const Tape& tape, const Vector& upstream,
                           GradientSet& acc) {
  const auto layers = net.layers();
  if (tape.net != &net || tape.inputs.size() != layers.size()) {
    throw UsageError("backward: tape was not produced by this net");
  }
  if (!acc.matches(net)) throw UsageError("backward: gradient set shape mismatch");
  if (static_cast<std::size_t>(upstream.size()) != net.output_dim()) {
    throw UsageError("backward: upstream gradient has wrong length");
  }
  Vector delta = upstream;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    const auto act = l.activation;
    Vector dz = delta.binaryExpr(tape.pre[k], [act](double d, double z) {
      return d * activate_derivative(act, z);
    });
    auto& g = acc.layers()[k];
    g.weight.noalias() += dz * tape.inputs[k].transpose();
    g.bias += dz;
    delta.noalias() = l.weight.transpose() * dz;
  }
  return delta;
}

BackwardResult backward(const DenseNet& net, const Tape& tape, const Vector& upstream) {
  BackwardResult r{GradientSet(net), {}};
  r.input_grad = backward_accumulate(net, tape, upstream, r.grads);
  return r;
}

// ---- optimizers -----------------------------------------------------------

OptimizerState::OptimizerState(const DenseNet& net, Optimizer algo, double lr)
    : algorithm(algo), learning_rate(lr) {
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  if (algo == Optimizer::Adam) {
    first = GradientSet(net);
    second = GradientSet(net);
  }
}

void optimizer_step(DenseNet& net, const GradientSet& grads, OptimizerState& state) {
  if (!grads.matches(net)) throw UsageError("optimizer_step: gradient shapes do not match net");
  if (!grads.all_finite()) throw NumericalError("optimizer_step: non-finite gradient, step refused");
  auto layers = net.mutable_layers();
  if (state.algorithm == Optimizer::SGD) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].weight -= state.learning_rate * grads.layers()[k].weight;
      layers[k].bias -= state.learning_rate * grads.layers()[k].bias;
    }
    ++state.step;
    return;
  }
  if (!state.first.matches(net)) throw UsageError("optimizer_step: Adam moments do not match net");
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < layers.size(); ++k) {
    update(layers[k].weight, grads.layers()[k].weight, state.first.layers()[k].weight,
           state.second.layers()[k].weight);
    update(layers[k].bias, grads.layers()[k].bias, state.first.layers()[k].bias,
           state.second.layers()[k].bias);
  }
}

// ---- finite differences ---------------------------------------------------

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& p, double h) {
  if (!(h > 0.0)) throw UsageError("finite_diff_grad: step must be positive");
  Vector g(p.size());
  Vector q = p;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    q[k] = p[k] + h;
    const double up = f(q);
    q[k] = p[k] - h;
    const double down = f(q);
    q[k] = p[k];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("finite_diff_grad: non-finite evaluation at coordinate " +
                           std::to_string(k));
    }
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(double a, double b, double floor) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

double max_relative_error(const Vector& analytic, const Vector& numeric, double floor) {
  if (analytic.size() != numeric.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    worst = std::max(worst, relative_error(analytic[k], numeric[k], floor));
  }
  return worst;
}

// ---- checkpoint -----------------------------------------------------------

std::string format_hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (token.empty() || end != token.c_str() + token.size()) {
    throw DataError("checkpoint: bad number '" + token + "'");
  }
  return v;
}

void write_net(std::ostream& out, const DenseNet& net) {
  out << "net " << net.layers().size() << '\n';
  for (const auto& l : net.layers()) {
    out << "layer " << l.in_dim() << ' ' << l.out_dim() << ' ' << name(l.activation) << '\n';
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out << (c ? " " : "") << format_hex(l.weight(r, c));
      out << '\n';
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out << (r ? " " : "") << format_hex(l.bias[r]);
    out << '\n';
  }
}

DenseNet read_net(std::istream& in) {
  std::string tag;
  std::size_t n_layers = 0;
  if (!(in >> tag >> n_layers) || tag != "net") throw DataError("checkpoint: expected 'net <count>'");
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < n_layers; ++k) {
    std::size_t in_dim = 0, out_dim = 0;
    std::string act;
    if (!(in >> tag >> in_dim >> out_dim >> act) || tag != "layer") {
      throw DataError("checkpoint: expected 'layer <in> <out> <activation>'");
    }
    Layer l;
    l.activation = parse_activation(act);
    l.weight.resize(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim));
    l.bias.resize(static_cast<Eigen::Index>(out_dim));
    std::string tok;
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      if (!(in >> tok)) throw DataError("checkpoint: truncated weights");
      l.weight.data()[i] = parse_hex(tok);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      if (!(in >> tok)) throw DataError("checkpoint: truncated bias");
      l.bias[i] = parse_hex(tok);
    }
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

}  // namespace mmd::nn
