#pragma once

// Small feed-forward network stack with hand-written backprop.
//
// Everything is batched column-wise: an input of shape (in_dim x batch)
// produces an output of shape (out_dim x batch). Layers compute
//
//   z = W x + b,  h = layer_norm ? gain * normalize(z) + shift : z,  y = act(h)
//
// and the tape keeps exactly what backward() needs to reproduce the
// gradient of a scalar loss with respect to every parameter.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wombet::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Activation { identity, relu, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    default: return "identity";
  }
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ContractViolation("unknown activation '" + s + "'");
}

// Variance offset used by layer normalization; a constant input vector
// normalizes to exactly zero.
inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct Layer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;
  Activation activation = Activation::identity;
  bool layer_norm = false;
  Vector<Scalar> gain;   // empty unless layer_norm
  Vector<Scalar> shift;  // empty unless layer_norm

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

template <typename Scalar>
struct Mlp {
  std::vector<Layer<Scalar>> layers;

  Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size() + l.gain.size() + l.shift.size());
    return n;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (const auto& l : layers) {
      Layer<Other> c;
      c.weight = l.weight.template cast<Other>();
      c.bias = l.bias.template cast<Other>();
      c.activation = l.activation;
      c.layer_norm = l.layer_norm;
      c.gain = l.gain.template cast<Other>();
      c.shift = l.shift.template cast<Other>();
      out.layers.push_back(std::move(c));
    }
    return out;
  }
};

struct LayerSpec {
  Eigen::Index out_dim;
  Activation activation = Activation::relu;
  bool layer_norm = false;
};

// Checks that consecutive layers compose and that normalization vectors
// match their layer width.
template <typename Scalar>
void validate(const Mlp<Scalar>& net) {
  if (net.layers.empty()) throw ContractViolation("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.bias.size() != l.out_dim()) throw ContractViolation("bias size mismatch in layer " + std::to_string(i));
    if (l.layer_norm && (l.gain.size() != l.out_dim() || l.shift.size() != l.out_dim()))
      throw ContractViolation("layer-norm parameter size mismatch in layer " + std::to_string(i));
    if (!l.layer_norm && (l.gain.size() != 0 || l.shift.size() != 0))
      throw ContractViolation("layer-norm parameters on a plain layer " + std::to_string(i));
    if (i > 0 && net.layers[i - 1].out_dim() != l.in_dim())
      throw ContractViolation("layer " + std::to_string(i) + " does not compose with its predecessor");
  }
}

// Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
Mlp<Scalar> make_mlp(Eigen::Index in_dim, std::span<const LayerSpec> specs, std::mt19937_64& rng) {
  Mlp<Scalar> net;
  Eigen::Index fan_in = in_dim;
  for (const auto& spec : specs) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer<Scalar> l;
    l.weight.resize(spec.out_dim, fan_in);
    for (Eigen::Index c = 0; c < fan_in; ++c)
      for (Eigen::Index r = 0; r < spec.out_dim; ++r) l.weight(r, c) = static_cast<Scalar>(dist(rng));
    l.bias.resize(spec.out_dim);
    for (Eigen::Index r = 0; r < spec.out_dim; ++r) l.bias(r) = static_cast<Scalar>(dist(rng));
    l.activation = spec.activation;
    l.layer_norm = spec.layer_norm;
    if (spec.layer_norm) {
      l.gain = Vector<Scalar>::Ones(spec.out_dim);
      l.shift = Vector<Scalar>::Zero(spec.out_dim);
    }
    net.layers.push_back(std::move(l));
    fan_in = spec.out_dim;
  }
  return net;
}

template <typename Scalar>
Mlp<Scalar> make_mlp(Eigen::Index in_dim, std::initializer_list<LayerSpec> specs, std::mt19937_64& rng) {
  return make_mlp<Scalar>(in_dim, std::span<const LayerSpec>(specs.begin(), specs.size()), rng);
}

// ---------------------------------------------------------------------------
// forward / backward

template <typename Scalar>
struct LayerRecord {
  Matrix<Scalar> input;       // in x B
  Matrix<Scalar> normalized;  // out x B, only with layer norm
  RowVector<Scalar> inv_std;  // 1 x B, only with layer norm
  Matrix<Scalar> pre_activation;
  Matrix<Scalar> output;
};

template <typename Scalar>
struct Tape {
  std::vector<LayerRecord<Scalar>> records;
  std::vector<Eigen::Index> shape;  // (in, out, layer_norm) per recorded layer
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> output;
  Tape<Scalar> tape;
};

namespace detail {

template <typename Scalar>
std::vector<Eigen::Index> shape_of(const Mlp<Scalar>& net) {
  std::vector<Eigen::Index> s;
  s.reserve(net.layers.size() * 3);
  for (const auto& l : net.layers) {
    s.push_back(l.in_dim());
    s.push_back(l.out_dim());
    s.push_back(l.layer_norm ? 1 : 0);
  }
  return s;
}

template <typename Scalar>
void apply_activation(Activation a, const Matrix<Scalar>& h, Matrix<Scalar>& y) {
  switch (a) {
    case Activation::relu: y = h.cwiseMax(Scalar(0)); break;
    case Activation::tanh: y = h.array().tanh().matrix(); break;
    default: y = h; break;
  }
}

// Column-wise layer normalization of z in place; returns normalized values.
template <typename Scalar>
void normalize_columns(const Matrix<Scalar>& z, Matrix<Scalar>& zhat, RowVector<Scalar>& inv_std) {
  const Scalar d = static_cast<Scalar>(z.rows());
  const RowVector<Scalar> mean = z.colwise().sum() / d;
  zhat = z.rowwise() - mean;
  const RowVector<Scalar> var = zhat.colwise().squaredNorm() / d;
  inv_std = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt().matrix();
  zhat = zhat * inv_std.asDiagonal();
}

}  // namespace detail

template <typename Scalar>
ForwardResult<Scalar> forward(const Mlp<Scalar>& net, const Matrix<Scalar>& input) {
  if (net.layers.empty()) throw ContractViolation("forward on an empty network");
  if (input.rows() != net.in_dim())
    throw ContractViolation("input dimension " + std::to_string(input.rows()) + " does not match network input " +
                            std::to_string(net.in_dim()));
  ForwardResult<Scalar> out;
  out.tape.shape = detail::shape_of(net);
  out.tape.records.resize(net.layers.size());
  const Matrix<Scalar>* x = nullptr;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    auto& rec = out.tape.records[i];
    rec.input = (i == 0) ? Matrix<Scalar>(input) : out.tape.records[i - 1].output;
    x = &rec.input;
    Matrix<Scalar> z = l.weight * *x;
    z.colwise() += l.bias;
    if (l.layer_norm) {
      detail::normalize_columns(z, rec.normalized, rec.inv_std);
      rec.pre_activation = l.gain.asDiagonal() * rec.normalized;
      rec.pre_activation.colwise() += l.shift;
    } else {
      rec.pre_activation = std::move(z);
    }
    detail::apply_activation(l.activation, rec.pre_activation, rec.output);
  }
  out.output = out.tape.records.back().output;
  return out;
}

// Single-sample convenience; the output is a one-column matrix.
template <typename Scalar>
ForwardResult<Scalar> forward(const Mlp<Scalar>& net, const Vector<Scalar>& input) {
  return forward(net, Matrix<Scalar>(input));
}

// Output only, no tape. Used on hot paths (planning, evaluation, targets).
template <typename Scalar>
Matrix<Scalar> predict(const Mlp<Scalar>& net, const Matrix<Scalar>& input) {
  if (input.rows() != net.in_dim()) throw ContractViolation("input dimension does not match network input");
  Matrix<Scalar> x = input;
  Matrix<Scalar> z, zhat, y;
  RowVector<Scalar> inv_std;
  for (const auto& l : net.layers) {
    z.noalias() = l.weight * x;
    z.colwise() += l.bias;
    if (l.layer_norm) {
      detail::normalize_columns(z, zhat, inv_std);
      z.noalias() = l.gain.asDiagonal() * zhat;
      z.colwise() += l.shift;
    }
    detail::apply_activation(l.activation, z, y);
    x.swap(y);
  }
  return x;
}

template <typename Scalar>
struct LayerGradients {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;
  Vector<Scalar> gain;
  Vector<Scalar> shift;
};

template <typename Scalar>
struct Gradients {
  std::vector<LayerGradients<Scalar>> layers;

  static Gradients zeros_like(const Mlp<Scalar>& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      LayerGradients<Scalar> lg;
      lg.weight = Matrix<Scalar>::Zero(l.weight.rows(), l.weight.cols());
      lg.bias = Vector<Scalar>::Zero(l.bias.size());
      lg.gain = Vector<Scalar>::Zero(l.gain.size());
      lg.shift = Vector<Scalar>::Zero(l.shift.size());
      g.layers.push_back(std::move(lg));
    }
    return g;
  }

  Gradients& operator+=(const Gradients& other) {
    if (other.layers.size() != layers.size()) throw ContractViolation("gradient shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += other.layers[i].weight;
      layers[i].bias += other.layers[i].bias;
      layers[i].gain += other.layers[i].gain;
      layers[i].shift += other.layers[i].shift;
    }
    return *this;
  }

  Gradients& operator*=(Scalar s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
      l.gain *= s;
      l.shift *= s;
    }
    return *this;
  }
};

template <typename Scalar>
bool congruent(const Mlp<Scalar>& net, const Gradients<Scalar>& g) {
  if (net.layers.size() != g.layers.size()) return false;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const auto& lg = g.layers[i];
    if (lg.weight.rows() != l.weight.rows() || lg.weight.cols() != l.weight.cols() || lg.bias.size() != l.bias.size() ||
        lg.gain.size() != l.gain.size() || lg.shift.size() != l.shift.size())
      return false;
  }
  return true;
}

// Gradient of a scalar loss L given dL/d(output). If input_grad is non-null
// it receives dL/d(input).
template <typename Scalar>
Gradients<Scalar> backward(const Mlp<Scalar>& net, const Tape<Scalar>& tape,
                           const Matrix<Scalar>& output_grad, Matrix<Scalar>* input_grad = nullptr) {
  if (tape.shape != detail::shape_of(net) || tape.records.size() != net.layers.size())
    throw ContractViolation("stale tape: network shape changed since forward");
  const auto& last = tape.records.back();
  if (output_grad.rows() != last.output.rows() || output_grad.cols() != last.output.cols())
    throw ContractViolation("output gradient shape does not match forward output");

  Gradients<Scalar> g;
  g.layers.resize(net.layers.size());
  Matrix<Scalar> delta = output_grad;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& l = net.layers[k];
    const auto& rec = tape.records[k];
    auto& lg = g.layers[k];
    switch (l.activation) {
      case Activation::relu:
        delta = (rec.pre_activation.array() > Scalar(0)).select(delta, Scalar(0));
        break;
      case Activation::tanh:
        delta = (delta.array() * (Scalar(1) - rec.output.array().square())).matrix();
        break;
      default: break;
    }
    if (l.layer_norm) {
      lg.gain = (delta.cwiseProduct(rec.normalized)).rowwise().sum();
      lg.shift = delta.rowwise().sum();
      const Matrix<Scalar> dzhat = l.gain.asDiagonal() * delta;
      const Scalar d = static_cast<Scalar>(dzhat.rows());
      const RowVector<Scalar> mean_d = dzhat.colwise().sum() / d;
      const RowVector<Scalar> mean_dx = dzhat.cwiseProduct(rec.normalized).colwise().sum() / d;
      Matrix<Scalar> dz = dzhat.rowwise() - mean_d;
      dz -= rec.normalized * mean_dx.asDiagonal();
      delta = dz * rec.inv_std.asDiagonal();
    } else {
      lg.gain.resize(0);
      lg.shift.resize(0);
    }
    lg.weight.noalias() = delta * rec.input.transpose();
    lg.bias = delta.rowwise().sum();
    if (k > 0 || input_grad != nullptr) {
      Matrix<Scalar> next = l.weight.transpose() * delta;
      delta.swap(next);
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Flat parameter views, shared by the optimizer, Polyak averaging,
// checkpoints and finite-difference checks.

template <typename Scalar>
std::vector<Eigen::Map<Vector<Scalar>>> parameter_views(Mlp<Scalar>& net) {
  std::vector<Eigen::Map<Vector<Scalar>>> v;
  for (auto& l : net.layers) {
    v.emplace_back(l.weight.data(), l.weight.size());
    v.emplace_back(l.bias.data(), l.bias.size());
    v.emplace_back(l.gain.data(), l.gain.size());
    v.emplace_back(l.shift.data(), l.shift.size());
  }
  return v;
}

template <typename Scalar>
std::vector<Eigen::Map<const Vector<Scalar>>> parameter_views(const Mlp<Scalar>& net) {
  std::vector<Eigen::Map<const Vector<Scalar>>> v;
  for (const auto& l : net.layers) {
    v.emplace_back(l.weight.data(), l.weight.size());
    v.emplace_back(l.bias.data(), l.bias.size());
    v.emplace_back(l.gain.data(), l.gain.size());
    v.emplace_back(l.shift.data(), l.shift.size());
  }
  return v;
}

template <typename Scalar>
std::vector<Eigen::Map<const Vector<Scalar>>> gradient_views(const Gradients<Scalar>& g) {
  std::vector<Eigen::Map<const Vector<Scalar>>> v;
  for (const auto& l : g.layers) {
    v.emplace_back(l.weight.data(), l.weight.size());
    v.emplace_back(l.bias.data(), l.bias.size());
    v.emplace_back(l.gain.data(), l.gain.size());
    v.emplace_back(l.shift.data(), l.shift.size());
  }
  return v;
}

template <typename Scalar>
Vector<Scalar> flatten(const Mlp<Scalar>& net) {
  Vector<Scalar> out(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index at = 0;
  for (const auto& p : parameter_views(net)) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> flatten(const Gradients<Scalar>& g) {
  Eigen::Index n = 0;
  for (const auto& p : gradient_views(g)) n += p.size();
  Vector<Scalar> out(n);
  Eigen::Index at = 0;
  for (const auto& p : gradient_views(g)) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

template <typename Scalar>
void unflatten(const Vector<Scalar>& flat, Mlp<Scalar>& net) {
  if (flat.size() != static_cast<Eigen::Index>(net.parameter_count()))
    throw ContractViolation("flat parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (auto& p : parameter_views(net)) {
    p = flat.segment(at, p.size());
    at += p.size();
  }
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
  Gradients<Scalar> first_moment;
  Gradients<Scalar> second_moment;
  long step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_network(const Mlp<Scalar>& net, double lr) {
    AdamState s;
    s.first_moment = Gradients<Scalar>::zeros_like(net);
    s.second_moment = Gradients<Scalar>::zeros_like(net);
    s.learning_rate = lr;
    return s;
  }
};

template <typename Scalar>
void adam_step(Mlp<Scalar>& net, const Gradients<Scalar>& grads, AdamState<Scalar>& state) {
  if (!congruent(net, grads) || !congruent(net, state.first_moment) || !congruent(net, state.second_moment))
    throw ContractViolation("adam_step: parameter, gradient and moment shapes differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Scalar step_size = static_cast<Scalar>(state.learning_rate / c1);
  const Scalar inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar eps = static_cast<Scalar>(state.epsilon);

  auto params = parameter_views(net);
  auto g = gradient_views(grads);
  std::vector<Eigen::Map<Vector<Scalar>>> m;
  std::vector<Eigen::Map<Vector<Scalar>>> v;
  for (auto& l : state.first_moment.layers) {
    m.emplace_back(l.weight.data(), l.weight.size());
    m.emplace_back(l.bias.data(), l.bias.size());
    m.emplace_back(l.gain.data(), l.gain.size());
    m.emplace_back(l.shift.data(), l.shift.size());
  }
  for (auto& l : state.second_moment.layers) {
    v.emplace_back(l.weight.data(), l.weight.size());
    v.emplace_back(l.bias.data(), l.bias.size());
    v.emplace_back(l.gain.data(), l.gain.size());
    v.emplace_back(l.shift.data(), l.shift.size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() == 0) continue;
    m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
    v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i].cwiseAbs2();
    params[i].array() -= step_size * m[i].array() / (v[i].array().sqrt() * inv_sqrt_c2 + eps);
  }
}

// target <- (1 - tau) target + tau source
template <typename Scalar>
void polyak_average(Mlp<Scalar>& target, const Mlp<Scalar>& source, double tau) {
  auto t = parameter_views(target);
  auto s = parameter_views(source);
  if (t.size() != s.size()) throw ContractViolation("polyak: network shapes differ");
  const Scalar a = static_cast<Scalar>(tau);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].size() != s[i].size()) throw ContractViolation("polyak: network shapes differ");
    if (tau == 1.0) {
      t[i] = s[i];
    } else if (tau != 0.0) {
      t[i] = (Scalar(1) - a) * t[i] + a * s[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Heads and losses

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

// Smooth squashing of an unconstrained value into [lo, hi], plus its
// derivative. Used for the actor's log-std output.
template <typename Scalar>
struct SoftClamp {
  Matrix<Scalar> value;
  Matrix<Scalar> derivative;
};

template <typename Scalar>
SoftClamp<Scalar> soft_clamp(const Matrix<Scalar>& raw, double lo, double hi) {
  SoftClamp<Scalar> out;
  const Matrix<Scalar> t = raw.array().tanh().matrix();
  const Scalar half = static_cast<Scalar>(0.5 * (hi - lo));
  out.value = ((t.array() + Scalar(1)) * half + static_cast<Scalar>(lo)).matrix();
  out.derivative = ((Scalar(1) - t.array().square()) * half).matrix();
  return out;
}

template <typename Scalar>
struct SquashedSample {
  Matrix<Scalar> action;    // tanh(pre_tanh), act_dim x B
  Matrix<Scalar> pre_tanh;  // mean + exp(log_std) * noise
  RowVector<Scalar> log_prob;
};

// Numerically stable log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
template <typename Scalar>
Scalar log_one_minus_tanh_sq(Scalar u) {
  const Scalar x = Scalar(-2) * u;
  const Scalar softplus = x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return Scalar(2) * (static_cast<Scalar>(std::log(2.0)) - u - softplus);
}

// Squashed Gaussian sample with the change-of-variables log density.
// log_std is expected to already lie in [kLogStdMin, kLogStdMax].
template <typename Scalar>
SquashedSample<Scalar> tanh_gaussian_sample(const Matrix<Scalar>& mean,
                                            const Matrix<Scalar>& log_std,
                                            const Matrix<Scalar>& noise) {
  if (mean.rows() != log_std.rows() || mean.cols() != log_std.cols() || mean.rows() != noise.rows() ||
      mean.cols() != noise.cols())
    throw ContractViolation("tanh_gaussian_sample: shape mismatch");
  SquashedSample<Scalar> s;
  s.pre_tanh = (mean.array() + log_std.array().exp() * noise.array()).matrix();
  s.action = s.pre_tanh.array().tanh().matrix();
  const Scalar half_log_2pi = static_cast<Scalar>(0.5 * std::log(2.0 * M_PI));
  s.log_prob.resize(mean.cols());
  for (Eigen::Index b = 0; b < mean.cols(); ++b) {
    Scalar lp = 0;
    for (Eigen::Index j = 0; j < mean.rows(); ++j) {
      const Scalar e = noise(j, b);
      lp += Scalar(-0.5) * e * e - log_std(j, b) - half_log_2pi - log_one_minus_tanh_sq(s.pre_tanh(j, b));
    }
    s.log_prob(b) = lp;
  }
  return s;
}

template <typename Scalar>
struct NllResult {
  Scalar loss = 0;
  Matrix<Scalar> d_mean;
  Matrix<Scalar> d_log_var;
};

// Gaussian negative log-likelihood averaged over all entries (constant
// dropped): 0.5 * ((y - mu)^2 exp(-log_var) + log_var).
template <typename Scalar>
NllResult<Scalar> gaussian_nll(const Matrix<Scalar>& mean,
                               const Matrix<Scalar>& log_var,
                               const Matrix<Scalar>& target) {
  if (mean.rows() != target.rows() || mean.cols() != target.cols() || log_var.rows() != mean.rows() ||
      log_var.cols() != mean.cols())
    throw ContractViolation("gaussian_nll: shape mismatch");
  NllResult<Scalar> r;
  const Scalar n = static_cast<Scalar>(mean.size());
  const Matrix<Scalar> inv_var = (-log_var.array()).exp().matrix();
  const Matrix<Scalar> diff = mean - target;
  r.loss = Scalar(0.5) * (diff.array().square() * inv_var.array() + log_var.array()).sum() / n;
  r.d_mean = (diff.array() * inv_var.array() / n).matrix();
  r.d_log_var = (Scalar(0.5) * (Scalar(1) - diff.array().square() * inv_var.array()) / n).matrix();
  return r;
}

// Two-sided softplus clamp of log-variance into [lo, hi] with derivative.
// The result can exceed hi by at most log(1 + exp(lo - hi)).
template <typename Scalar>
SoftClamp<Scalar> soft_clamp_log_var(const Matrix<Scalar>& raw, double lo, double hi) {
  SoftClamp<Scalar> out;
  out.value.resizeLike(raw);
  out.derivative.resizeLike(raw);
  const Scalar l = static_cast<Scalar>(lo);
  const Scalar h = static_cast<Scalar>(hi);
  auto softplus = [](Scalar x) { return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  auto sigmoid = [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); };
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const Scalar x = raw.data()[i];
    const Scalar upper = h - softplus(h - x);
    const Scalar d_upper = sigmoid(h - x);
    const Scalar v = l + softplus(upper - l);
    out.value.data()[i] = v;
    out.derivative.data()[i] = sigmoid(upper - l) * d_upper;
  }
  return out;
}

template <typename Scalar>
struct GaussianHeadLoss {
  Scalar loss = 0;
  Matrix<Scalar> output_grad;
};

// NLL of a network whose output stacks [mean; raw log-variance] (2n x B),
// with the log-variance soft-clamped into [lo, hi]. Returns dL/d(output).
template <typename Scalar>
GaussianHeadLoss<Scalar> gaussian_head_nll(const Matrix<Scalar>& output, const Matrix<Scalar>& target, double lo,
                                           double hi) {
  const Eigen::Index n = target.rows();
  if (output.rows() != 2 * n || output.cols() != target.cols())
    throw ContractViolation("gaussian_head_nll: output must stack mean and log-variance");
  const Matrix<Scalar> mean = output.topRows(n);
  const auto lv = soft_clamp_log_var<Scalar>(output.bottomRows(n), lo, hi);
  const auto nll = gaussian_nll<Scalar>(mean, lv.value, target);
  GaussianHeadLoss<Scalar> out;
  out.loss = nll.loss;
  out.output_grad.resize(output.rows(), output.cols());
  out.output_grad.topRows(n) = nll.d_mean;
  out.output_grad.bottomRows(n) = nll.d_log_var.cwiseProduct(lv.derivative);
  return out;
}

}  // namespace wombet::nn
