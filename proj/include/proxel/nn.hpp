// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "proxel/linalg.hpp"

namespace proxel {

enum class Activation { Tanh, Gelu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  Matrix W;     // m x n
  Vector bias;  // m
};

/// Low-rank replacement for a dense layer; the effective weight is A * B.
struct FactoredLayer {
  Matrix A;     // m x r
  Matrix B;     // r x n
  Vector bias;  // m
};

struct Layer {
  std::variant<DenseLayer, FactoredLayer> body;

  bool is_dense() const { return std::holds_alternative<DenseLayer>(body); }
  const DenseLayer& dense() const { return std::get<DenseLayer>(body); }
  DenseLayer& dense() { return std::get<DenseLayer>(body); }
  const FactoredLayer& factored() const { return std::get<FactoredLayer>(body); }
  FactoredLayer& factored() { return std::get<FactoredLayer>(body); }

  Index in_dim() const;
  Index out_dim() const;
  const Vector& bias() const;
  Vector& bias();
  /// W for dense layers, A*B for factored ones.
  Matrix effective_weight() const;
  std::int64_t param_count() const;  // weights only, bias excluded
};

/// Plain MLP: hidden layers use the configured smooth activation, the last
/// layer emits raw logits.
struct Model {
  std::vector<Layer> layers;
  Activation activation = Activation::Tanh;

  Index input_dim() const;
  Index output_dim() const;
  /// Throws std::invalid_argument when layer dimensions do not chain.
  void validate() const;
};

/// Uniform He-style random init for a dense MLP with the given widths
/// (widths.front() = input dim, widths.back() = class count).
Model make_mlp(const std::vector<Index>& widths, Activation act, std::uint64_t seed);

/// Per-sample record of a forward pass; backward fills the deltas and loss.
struct Trace {
  std::vector<Vector> inputs;   // inputs[l] = h_{l-1}
  std::vector<Vector> preacts;  // preacts[l], pre-activation output of layer l
  std::vector<Vector> deltas;   // deltas[l] = dLoss/dpreacts[l]
  Vector logits;
  double loss = 0.0;  // filled by backward, which knows the label
};

/// Throws std::invalid_argument on dimension mismatch or non-finite
/// activations (the diagnostic names the layer).
Trace forward(const Model& model, const Vector& x);

struct LayerGrads {
  Matrix W;     // dense layers
  Matrix A, B;  // factored layers
  Vector bias;
};

struct Gradients {
  std::vector<LayerGrads> layers;
};

Gradients make_zero_gradients(const Model& model);
void accumulate(Gradients& acc, const Gradients& g, double weight = 1.0);
void scale(Gradients& g, double s);
double dot(const Gradients& a, const Gradients& b);
double squared_norm(const Gradients& g);
void require_finite(const Gradients& g, const char* where);

/// Cross-entropy backward pass. Fills trace.deltas and trace.loss and
/// returns per-layer parameter gradients (dense: dW = delta h^T; factored:
/// dA = delta (B h)^T, dB = (A^T delta) h^T).
Gradients backward(const Model& model, Trace& trace, int label);

/// Backward pass from an arbitrary gradient with respect to the logits.
/// Leaves trace.loss untouched.
Gradients backward_from_logit_grad(const Model& model, Trace& trace, const Vector& dlogits);

Vector softmax(const Vector& logits);
double log_sum_exp(const Vector& logits);
/// Throws std::invalid_argument when label is outside [0, logits.size()).
double cross_entropy(const Vector& logits, int label);

/// tau^2 * KL(softmax(teacher/tau) || softmax(student/tau)). Requires
/// tau > 0 and equal lengths.
double kl_temperature(const Vector& teacher_logits, const Vector& student_logits, double tau);
/// Gradient of kl_temperature with respect to the student logits:
/// tau * (softmax(student/tau) - softmax(teacher/tau)).
Vector kl_temperature_grad_student(const Vector& teacher_logits, const Vector& student_logits,
                                   double tau);

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

struct SgdState {
  std::vector<LayerGrads> velocity;  // sized on first use
};

/// v = momentum * v + (grad + weight_decay * param); param -= lr * v.
/// Throws on non-finite gradients, naming the layer.
void optimizer_step(Model& params, const Gradients& grads, const SgdConfig& config,
                    SgdState& state);

/// Versioned JSON document, bit-exact round trip (17 significant digits).
std::string model_to_json(const Model& model);
Model model_from_json(const std::string& text);
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

/// Stable content hash of the serialized model, used to tag score files.
std::string model_id(const Model& model);

}  // namespace proxel
