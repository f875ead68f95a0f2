// SPDX-License-Identifier: Apache-2.0
#include "proxel/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "proxel/io.hpp"
#include "proxel/rng.hpp"

namespace proxel {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  throw std::logic_error("unknown activation");
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      return cdf + x * pdf;
    }
  }
  throw std::logic_error("unknown activation");
}

Vector apply_activation(Activation a, const Vector& u) {
  return u.unaryExpr([a](double x) { return activate(a, x); });
}

Vector apply_activation_grad(Activation a, const Vector& u) {
  return u.unaryExpr([a](double x) { return activate_grad(a, x); });
}

}  // namespace

std::string activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "gelu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "gelu") return Activation::Gelu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Index Layer::in_dim() const {
  return is_dense() ? dense().W.cols() : factored().B.cols();
}

Index Layer::out_dim() const {
  return is_dense() ? dense().W.rows() : factored().A.rows();
}

const Vector& Layer::bias() const {
  return is_dense() ? dense().bias : factored().bias;
}

Vector& Layer::bias() {
  return is_dense() ? dense().bias : factored().bias;
}

Matrix Layer::effective_weight() const {
  return is_dense() ? dense().W : Matrix(factored().A * factored().B);
}

std::int64_t Layer::param_count() const {
  if (is_dense()) return dense().W.size();
  return factored().A.size() + factored().B.size();
}

Index Model::input_dim() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  return layers.front().in_dim();
}

Index Model::output_dim() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  return layers.back().out_dim();
}

void Model::validate() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    if (layer.bias().size() != layer.out_dim())
      throw std::invalid_argument("layer " + std::to_string(l) + ": bias length mismatch");
    if (!layer.is_dense()) {
      const FactoredLayer& f = layer.factored();
      if (f.A.cols() != f.B.rows())
        throw std::invalid_argument("layer " + std::to_string(l) + ": A/B inner dim mismatch");
      if (f.A.cols() > std::min(f.A.rows(), f.B.cols()))
        throw std::invalid_argument("layer " + std::to_string(l) + ": factor rank exceeds min(m,n)");
    }
    if (l + 1 < layers.size() && layers[l + 1].in_dim() != layer.out_dim())
      throw std::invalid_argument("layer " + std::to_string(l + 1) + ": input width " +
                                  std::to_string(layers[l + 1].in_dim()) +
                                  " does not chain from " + std::to_string(layer.out_dim()));
  }
}

Model make_mlp(const std::vector<Index>& widths, Activation act, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  Rng rng(seed);
  Model model;
  model.activation = act;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index n = widths[l], m = widths[l + 1];
    if (n < 1 || m < 1) throw std::invalid_argument("make_mlp: widths must be positive");
    DenseLayer layer;
    layer.W.resize(m, n);
    const double sigma = std::sqrt(2.0 / static_cast<double>(n));
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < m; ++i) layer.W(i, j) = sigma * rng.normal();
    layer.bias = Vector::Zero(m);
    model.layers.push_back(Layer{std::move(layer)});
  }
  return model;
}

Trace forward(const Model& model, const Vector& x) {
  if (x.size() != model.input_dim())
    throw std::invalid_argument("forward: input length " + std::to_string(x.size()) +
                                " does not match model input width " +
                                std::to_string(model.input_dim()));
  Trace t;
  const std::size_t L = model.layers.size();
  t.inputs.resize(L);
  t.preacts.resize(L);

  Vector h = x;
  for (std::size_t l = 0; l < L; ++l) {
    const Layer& layer = model.layers[l];
    t.inputs[l] = h;
    Vector u;
    if (layer.is_dense()) {
      u = layer.dense().W * h + layer.dense().bias;
    } else {
      u = layer.factored().A * (layer.factored().B * h) + layer.factored().bias;
    }
    if (!u.allFinite())
      throw std::invalid_argument("forward: non-finite pre-activation at layer " +
                                  std::to_string(l));
    t.preacts[l] = u;
    if (l + 1 < L) h = apply_activation(model.activation, u);
  }
  t.logits = t.preacts.back();
  return t;
}

Gradients make_zero_gradients(const Model& model) {
  Gradients g;
  g.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    if (layer.is_dense()) {
      g.layers[l].W = Matrix::Zero(layer.dense().W.rows(), layer.dense().W.cols());
    } else {
      g.layers[l].A = Matrix::Zero(layer.factored().A.rows(), layer.factored().A.cols());
      g.layers[l].B = Matrix::Zero(layer.factored().B.rows(), layer.factored().B.cols());
    }
    g.layers[l].bias = Vector::Zero(layer.bias().size());
  }
  return g;
}

void accumulate(Gradients& acc, const Gradients& g, double weight) {
  if (acc.layers.size() != g.layers.size())
    throw std::invalid_argument("accumulate: layer count mismatch");
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    if (g.layers[l].W.size()) acc.layers[l].W += weight * g.layers[l].W;
    if (g.layers[l].A.size()) acc.layers[l].A += weight * g.layers[l].A;
    if (g.layers[l].B.size()) acc.layers[l].B += weight * g.layers[l].B;
    acc.layers[l].bias += weight * g.layers[l].bias;
  }
}

void scale(Gradients& g, double s) {
  for (auto& layer : g.layers) {
    layer.W *= s;
    layer.A *= s;
    layer.B *= s;
    layer.bias *= s;
  }
}

double dot(const Gradients& a, const Gradients& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("dot: layer count mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].W.size()) s += a.layers[l].W.cwiseProduct(b.layers[l].W).sum();
    if (a.layers[l].A.size()) s += a.layers[l].A.cwiseProduct(b.layers[l].A).sum();
    if (a.layers[l].B.size()) s += a.layers[l].B.cwiseProduct(b.layers[l].B).sum();
    s += a.layers[l].bias.dot(b.layers[l].bias);
  }
  return s;
}

double squared_norm(const Gradients& g) { return dot(g, g); }

void require_finite(const Gradients& g, const char* where) {
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    const LayerGrads& lg = g.layers[l];
    const bool ok = lg.W.allFinite() && lg.A.allFinite() && lg.B.allFinite() && lg.bias.allFinite();
    if (!ok)
      throw std::invalid_argument(std::string(where) + ": non-finite gradient at layer " +
                                  std::to_string(l));
  }
}

namespace {

Gradients backward_impl(const Model& model, Trace& trace, Vector delta_out) {
  const std::size_t L = model.layers.size();
  if (trace.inputs.size() != L || trace.preacts.size() != L)
    throw std::invalid_argument("backward: trace does not match model");

  Gradients g;
  g.layers.resize(L);
  trace.deltas.assign(L, Vector());

  Vector delta = std::move(delta_out);
  for (std::size_t l = L; l-- > 0;) {
    const Layer& layer = model.layers[l];
    const Vector& h = trace.inputs[l];
    trace.deltas[l] = delta;

    Vector back;  // gradient with respect to h_{l-1}
    if (layer.is_dense()) {
      g.layers[l].W = delta * h.transpose();
      if (l > 0) back = layer.dense().W.transpose() * delta;
    } else {
      const FactoredLayer& f = layer.factored();
      const Vector bh = f.B * h;
      const Vector atd = f.A.transpose() * delta;
      g.layers[l].A = delta * bh.transpose();
      g.layers[l].B = atd * h.transpose();
      if (l > 0) back = f.B.transpose() * atd;
    }
    g.layers[l].bias = delta;

    if (l > 0)
      delta = back.cwiseProduct(apply_activation_grad(model.activation, trace.preacts[l - 1]));
  }
  return g;
}

}  // namespace

Gradients backward(const Model& model, Trace& trace, int label) {
  if (label < 0 || label >= trace.logits.size())
    throw std::invalid_argument("backward: label " + std::to_string(label) + " out of range");
  trace.loss = cross_entropy(trace.logits, label);
  Vector delta = softmax(trace.logits);
  delta[label] -= 1.0;
  return backward_impl(model, trace, std::move(delta));
}

Gradients backward_from_logit_grad(const Model& model, Trace& trace, const Vector& dlogits) {
  if (dlogits.size() != trace.logits.size())
    throw std::invalid_argument("backward_from_logit_grad: gradient length mismatch");
  return backward_impl(model, trace, dlogits);
}

double log_sum_exp(const Vector& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

double cross_entropy(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range");
  return log_sum_exp(logits) - logits[label];
}

double kl_temperature(const Vector& teacher_logits, const Vector& student_logits, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("kl_temperature: tau must be positive");
  if (teacher_logits.size() != student_logits.size())
    throw std::invalid_argument("kl_temperature: logit length mismatch");
  const Vector t = teacher_logits / tau;
  const Vector s = student_logits / tau;
  const Vector p = softmax(t);
  const double lse_t = log_sum_exp(t);
  const double lse_s = log_sum_exp(s);
  double kl = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    // p_i * (log p_i - log q_i) with both logs expanded through log-sum-exp
    kl += p[i] * ((t[i] - lse_t) - (s[i] - lse_s));
  }
  return std::max(0.0, tau * tau * kl);
}

Vector kl_temperature_grad_student(const Vector& teacher_logits, const Vector& student_logits,
                                   double tau) {
  if (tau <= 0.0) throw std::invalid_argument("kl_temperature: tau must be positive");
  const Vector p = softmax(Vector(teacher_logits / tau));
  const Vector q = softmax(Vector(student_logits / tau));
  return tau * (q - p);
}

void optimizer_step(Model& params, const Gradients& grads, const SgdConfig& config,
                    SgdState& state) {
  if (grads.layers.size() != params.layers.size())
    throw std::invalid_argument("optimizer_step: gradient layer count mismatch");
  require_finite(grads, "optimizer_step");

  if (state.velocity.empty()) {
    state.velocity = make_zero_gradients(params).layers;
  }
  if (state.velocity.size() != params.layers.size())
    throw std::invalid_argument("optimizer_step: optimizer state does not match model");

  auto update = [&](Matrix& param, const Matrix& grad, Matrix& vel) {
    if (!param.size()) return;
    vel = config.momentum * vel + (grad + config.weight_decay * param);
    param -= config.lr * vel;
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Layer& layer = params.layers[l];
    LayerGrads& vel = state.velocity[l];
    const LayerGrads& g = grads.layers[l];
    if (layer.is_dense()) {
      update(layer.dense().W, g.W, vel.W);
    } else {
      update(layer.factored().A, g.A, vel.A);
      update(layer.factored().B, g.B, vel.B);
    }
    Vector& bv = vel.bias;
    bv = config.momentum * bv + (g.bias + config.weight_decay * layer.bias());
    layer.bias() -= config.lr * bv;
  }
}

std::string model_to_json(const Model& model) {
  model.validate();
  JsonWriter w;
  w.begin_object();
  w.field("format_version", 1);
  w.field("activation", activation_name(model.activation));
  w.begin_array("layers");
  for (const Layer& layer : model.layers) {
    w.object_in_array();
    w.field("kind", layer.is_dense() ? "dense" : "factored");
    auto emit_matrix = [&w](std::string_view key, const Matrix& M) {
      w.begin_array(key);
      for (Index i = 0; i < M.rows(); ++i) {
        w.array_in_array();
        for (Index j = 0; j < M.cols(); ++j) w.value(M(i, j));
        w.end_array();
      }
      w.end_array();
    };
    if (layer.is_dense()) {
      emit_matrix("W", layer.dense().W);
    } else {
      emit_matrix("A", layer.factored().A);
      emit_matrix("B", layer.factored().B);
    }
    w.begin_array("bias");
    for (Index i = 0; i < layer.bias().size(); ++i) w.value(layer.bias()[i]);
    w.end_array();
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

namespace {

Matrix matrix_from_json(const nlohmann::json& rows, const char* what) {
  if (!rows.is_array() || rows.empty())
    throw std::invalid_argument(std::string("model file: ") + what + " must be a non-empty array");
  const std::size_t m = rows.size();
  const std::size_t n = rows[0].size();
  Matrix M(static_cast<Index>(m), static_cast<Index>(n));
  for (std::size_t i = 0; i < m; ++i) {
    if (!rows[i].is_array() || rows[i].size() != n)
      throw std::invalid_argument(std::string("model file: ragged rows in ") + what);
    for (std::size_t j = 0; j < n; ++j)
      M(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j].get<double>();
  }
  return M;
}

Vector vector_from_json(const nlohmann::json& arr, const char* what) {
  if (!arr.is_array())
    throw std::invalid_argument(std::string("model file: ") + what + " must be an array");
  Vector v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

Model model_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1)
    throw std::invalid_argument("model file: unsupported format_version");
  Model model;
  model.activation = activation_from_name(doc.at("activation").get<std::string>());
  for (const auto& spec : doc.at("layers")) {
    const std::string kind = spec.at("kind").get<std::string>();
    if (kind == "dense") {
      DenseLayer layer;
      layer.W = matrix_from_json(spec.at("W"), "W");
      layer.bias = vector_from_json(spec.at("bias"), "bias");
      model.layers.push_back(Layer{std::move(layer)});
    } else if (kind == "factored") {
      FactoredLayer layer;
      layer.A = matrix_from_json(spec.at("A"), "A");
      layer.B = matrix_from_json(spec.at("B"), "B");
      layer.bias = vector_from_json(spec.at("bias"), "bias");
      model.layers.push_back(Layer{std::move(layer)});
    } else {
      throw std::invalid_argument("model file: unknown layer kind '" + kind + "'");
    }
  }
  model.validate();
  return model;
}

void save_model(const Model& model, const std::string& path) {
  write_text_file(path, model_to_json(model));
}

Model load_model(const std::string& path) { return model_from_json(read_text_file(path)); }

std::string model_id(const Model& model) {
  const std::string doc = model_to_json(model);
  std::uint64_t h = 1469598103934665603ull;
  for (char c : doc) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[20];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = hex[h & 0xf];
    h >>= 4;
  }
  return "m" + std::string(buf, 16);
}

}  // namespace proxel
