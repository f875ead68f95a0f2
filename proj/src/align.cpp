// SPDX-License-Identifier: Apache-2.0
#include "proxel/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "proxel/io.hpp"
#include "proxel/rng.hpp"

namespace proxel {

std::string align_config_to_json(const AlignConfig& cfg) {
  JsonWriter w;
  w.begin_object();
  w.field("lr", cfg.lr);
  w.field("momentum", cfg.momentum);
  w.field("weight_decay", cfg.weight_decay);
  w.field("lambda_kl", cfg.lambda_kl);
  w.field("tau", cfg.tau);
  w.field("epochs", cfg.epochs);
  w.field("batch_size", static_cast<std::int64_t>(cfg.batch_size));
  w.field("hvp_eps", cfg.hvp_eps);
  w.field("seed", cfg.seed);
  w.end_object();
  return w.str();
}

AlignConfig align_config_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  AlignConfig cfg;
  if (doc.contains("lr")) cfg.lr = doc["lr"].get<double>();
  if (doc.contains("momentum")) cfg.momentum = doc["momentum"].get<double>();
  if (doc.contains("weight_decay")) cfg.weight_decay = doc["weight_decay"].get<double>();
  if (doc.contains("lambda_kl")) cfg.lambda_kl = doc["lambda_kl"].get<double>();
  if (doc.contains("tau")) cfg.tau = doc["tau"].get<double>();
  if (doc.contains("epochs")) cfg.epochs = doc["epochs"].get<int>();
  if (doc.contains("batch_size")) cfg.batch_size = doc["batch_size"].get<Index>();
  if (doc.contains("hvp_eps")) cfg.hvp_eps = doc["hvp_eps"].get<double>();
  if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
  return cfg;
}

Gradients mean_gradients(const Model& model, const Dataset& data, const std::vector<Index>& rows) {
  if (rows.empty()) throw std::invalid_argument("mean_gradients: empty batch");
  Gradients acc = make_zero_gradients(model);
  for (Index r : rows) {
    Trace trace = forward(model, data.sample(r));
    accumulate(acc, backward(model, trace, data.y[static_cast<std::size_t>(r)]));
  }
  scale(acc, 1.0 / static_cast<double>(rows.size()));
  return acc;
}

std::map<std::size_t, Matrix> target_weight_grads(const Model& target, const Dataset& data,
                                                  const std::vector<Index>& rows,
                                                  const std::vector<std::size_t>& layers) {
  if (rows.empty()) throw std::invalid_argument("target_weight_grads: empty batch");
  std::map<std::size_t, Matrix> grads;
  for (std::size_t l : layers) {
    if (l >= target.layers.size())
      throw std::invalid_argument("target_weight_grads: layer " + std::to_string(l) +
                                  " out of range");
    grads[l] = Matrix::Zero(target.layers[l].out_dim(), target.layers[l].in_dim());
  }
  for (Index r : rows) {
    Trace trace = forward(target, data.sample(r));
    backward(target, trace, data.y[static_cast<std::size_t>(r)]);
    for (std::size_t l : layers)
      grads[l].noalias() += trace.deltas[l] * trace.inputs[l].transpose();
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& [l, G] : grads) G *= inv;
  return grads;
}

namespace {

std::vector<std::size_t> factored_layers(const Model& proxy) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < proxy.layers.size(); ++l)
    if (!proxy.layers[l].is_dense()) out.push_back(l);
  return out;
}

// d(X,Y) = 1 - <X,Y>/(|X||Y|) together with its two partial derivatives.
struct CosDistance {
  double value = 1.0;
  Matrix dX, dY;
  bool degenerate = false;
};

CosDistance cosine_distance(const Matrix& X, const Matrix& Y, bool with_partials) {
  CosDistance out;
  const double nx = X.norm(), ny = Y.norm();
  if (nx == 0.0 || ny == 0.0) {
    out.degenerate = true;
    if (with_partials) {
      out.dX = Matrix::Zero(X.rows(), X.cols());
      out.dY = Matrix::Zero(Y.rows(), Y.cols());
    }
    return out;
  }
  const double ip = X.cwiseProduct(Y).sum();
  out.value = 1.0 - ip / (nx * ny);
  if (with_partials) {
    out.dX = -Y / (nx * ny) + (ip / (nx * nx * nx * ny)) * X;
    out.dY = -X / (nx * ny) + (ip / (ny * ny * ny * nx)) * Y;
  }
  return out;
}

struct GaEvaluation {
  double loss = 0.0;
  std::size_t warnings = 0;
  // Partial derivatives with respect to the proxy batch gradients (the
  // direction of the Hessian-vector product) and the direct partials with
  // respect to the factors themselves.
  std::map<std::size_t, Matrix> u_dA, u_dB;
  std::map<std::size_t, Matrix> direct_dA, direct_dB;
};

GaEvaluation evaluate_ga(const std::map<std::size_t, Matrix>& target_grads,
                         const Gradients& proxy_grads, const Model& proxy, bool with_partials) {
  const std::vector<std::size_t> layers = factored_layers(proxy);
  if (layers.empty()) throw std::invalid_argument("ga_loss: proxy has no factored layers");
  if (proxy_grads.layers.size() != proxy.layers.size())
    throw std::invalid_argument("ga_loss: gradient container does not match proxy");

  GaEvaluation ev;
  // Mean over every distance term (two per layer) keeps the loss in [0, 2].
  const double inv_l = 1.0 / (2.0 * static_cast<double>(layers.size()));
  for (std::size_t l : layers) {
    const auto it = target_grads.find(l);
    if (it == target_grads.end())
      throw std::invalid_argument("ga_loss: missing target gradient for layer " +
                                  std::to_string(l));
    const Matrix& G = it->second;
    const FactoredLayer& f = proxy.layers[l].factored();
    if (G.rows() != f.A.rows() || G.cols() != f.B.cols())
      throw std::invalid_argument("ga_loss: target gradient shape mismatch at layer " +
                                  std::to_string(l));
    const Matrix& dA = proxy_grads.layers[l].A;
    const Matrix& dB = proxy_grads.layers[l].B;
    if (dA.rows() != f.A.rows() || dA.cols() != f.A.cols() || dB.rows() != f.B.rows() ||
        dB.cols() != f.B.cols())
      throw std::invalid_argument("ga_loss: proxy gradient shape mismatch at layer " +
                                  std::to_string(l));

    const Matrix Ya = G * f.B.transpose();   // projected target gradient for A
    const Matrix Yb = f.A.transpose() * G;   // projected target gradient for B
    const CosDistance da = cosine_distance(dA, Ya, with_partials);
    const CosDistance db = cosine_distance(dB, Yb, with_partials);
    ev.loss += inv_l * (da.value + db.value);
    ev.warnings += (da.degenerate ? 1 : 0) + (db.degenerate ? 1 : 0);

    if (with_partials) {
      ev.u_dA[l] = inv_l * da.dX;
      ev.u_dB[l] = inv_l * db.dX;
      // Y_A = G B^T contributes through B; Y_B = A^T G through A.
      ev.direct_dB[l] = inv_l * (da.dY.transpose() * G);
      ev.direct_dA[l] = inv_l * (G * db.dY.transpose());
    }
  }
  return ev;
}

Vector proxy_logits(const Model& model, const Vector& x) { return forward(model, x).logits; }

// Zeroes every component that alignment is not allowed to touch.
void mask_to_factors(Gradients& g, const Model& proxy) {
  for (std::size_t l = 0; l < proxy.layers.size(); ++l) {
    if (proxy.layers[l].is_dense()) {
      g.layers[l].W.setZero();
      g.layers[l].A.resize(0, 0);
      g.layers[l].B.resize(0, 0);
    }
    g.layers[l].bias.setZero();
  }
}

void add_scaled_factors(Model& proxy, const Gradients& dir, double s) {
  for (std::size_t l = 0; l < proxy.layers.size(); ++l) {
    if (proxy.layers[l].is_dense()) continue;
    FactoredLayer& f = proxy.layers[l].factored();
    if (dir.layers[l].A.size()) f.A += s * dir.layers[l].A;
    if (dir.layers[l].B.size()) f.B += s * dir.layers[l].B;
  }
}

}  // namespace

double ga_loss(const std::map<std::size_t, Matrix>& target_grads, const Gradients& proxy_grads,
               const Model& proxy, std::size_t* warning_count) {
  const GaEvaluation ev = evaluate_ga(target_grads, proxy_grads, proxy, false);
  if (warning_count) *warning_count += ev.warnings;
  return ev.loss;
}

AlignLosses align_losses(const Model& proxy, const Model& target, const Dataset& data,
                         const std::vector<Index>& rows, const AlignConfig& cfg) {
  if (cfg.tau <= 0.0) throw std::invalid_argument("align: tau must be positive");
  const std::vector<std::size_t> layers = factored_layers(proxy);
  const Gradients proxy_grads = mean_gradients(proxy, data, rows);
  const auto tgrads = target_weight_grads(target, data, rows, layers);

  AlignLosses out;
  out.l_ga = ga_loss(tgrads, proxy_grads, proxy, &out.warnings);
  double kl = 0.0;
  for (Index r : rows)
    kl += kl_temperature(proxy_logits(target, data.sample(r)), proxy_logits(proxy, data.sample(r)),
                         cfg.tau);
  out.l_kl = kl / static_cast<double>(rows.size());
  out.total = out.l_ga + cfg.lambda_kl * out.l_kl;
  return out;
}

Gradients align_gradient(const Model& proxy, const Model& target, const Dataset& data,
                         const std::vector<Index>& rows, const AlignConfig& cfg,
                         AlignLosses* losses) {
  if (rows.empty()) throw std::invalid_argument("align_gradient: empty batch");
  if (cfg.tau <= 0.0) throw std::invalid_argument("align: tau must be positive");
  const std::vector<std::size_t> layers = factored_layers(proxy);
  if (layers.empty()) throw std::invalid_argument("align: proxy has no factored layers");

  const Gradients proxy_grads = mean_gradients(proxy, data, rows);
  const auto tgrads = target_weight_grads(target, data, rows, layers);
  const GaEvaluation ev = evaluate_ga(tgrads, proxy_grads, proxy, true);

  Gradients total = make_zero_gradients(proxy);

  // Direction of the Hessian-vector product: dL_GA / d(batch gradients).
  Gradients u = make_zero_gradients(proxy);
  for (std::size_t l : layers) {
    u.layers[l].A = ev.u_dA.at(l);
    u.layers[l].B = ev.u_dB.at(l);
  }
  const double u_norm = std::sqrt(squared_norm(u));
  if (u_norm > 0.0) {
    scale(u, 1.0 / u_norm);
    double eps = cfg.hvp_eps;
    bool ok = false;
    for (int attempt = 0; attempt <= 3 && !ok; ++attempt, eps *= 0.5) {
      Model plus = proxy;
      add_scaled_factors(plus, u, eps);
      Model minus = proxy;
      add_scaled_factors(minus, u, -eps);
      Gradients hvp = mean_gradients(plus, data, rows);
      accumulate(hvp, mean_gradients(minus, data, rows), -1.0);
      scale(hvp, u_norm / (2.0 * eps));

      bool finite = true;
      for (std::size_t l : layers)
        finite = finite && hvp.layers[l].A.allFinite() && hvp.layers[l].B.allFinite();
      if (!finite) continue;
      for (std::size_t l : layers) {
        total.layers[l].A += hvp.layers[l].A;
        total.layers[l].B += hvp.layers[l].B;
      }
      ok = true;
    }
    if (!ok)
      throw std::runtime_error(
          "align: Hessian-vector product stayed non-finite after 3 step reductions");
  }

  // First-order paths: explicit factor appearances inside the projections.
  for (std::size_t l : layers) {
    total.layers[l].A += ev.direct_dA.at(l);
    total.layers[l].B += ev.direct_dB.at(l);
  }

  // KL anchor, backpropagated through the proxy only.
  double kl = 0.0;
  if (cfg.lambda_kl != 0.0) {
    Gradients kl_grad = make_zero_gradients(proxy);
    for (Index r : rows) {
      const Vector teacher = proxy_logits(target, data.sample(r));
      Trace trace = forward(proxy, data.sample(r));
      kl += kl_temperature(teacher, trace.logits, cfg.tau);
      const Vector dlogits = kl_temperature_grad_student(teacher, trace.logits, cfg.tau);
      accumulate(kl_grad, backward_from_logit_grad(proxy, trace, dlogits));
    }
    scale(kl_grad, 1.0 / static_cast<double>(rows.size()));
    mask_to_factors(kl_grad, proxy);
    accumulate(total, kl_grad, cfg.lambda_kl);
  } else {
    for (Index r : rows)
      kl += kl_temperature(proxy_logits(target, data.sample(r)),
                           proxy_logits(proxy, data.sample(r)), cfg.tau);
  }

  if (losses) {
    losses->l_ga = ev.loss;
    losses->l_kl = kl / static_cast<double>(rows.size());
    losses->total = losses->l_ga + cfg.lambda_kl * losses->l_kl;
    losses->warnings = ev.warnings;
  }
  mask_to_factors(total, proxy);
  return total;
}

AlignStepRecord align_step(Model& proxy, const Model& target, const Dataset& data,
                           const std::vector<Index>& rows, const AlignConfig& cfg,
                           AlignState& state) {
  AlignLosses losses;
  const Gradients grad = align_gradient(proxy, target, data, rows, cfg, &losses);
  state.warnings += losses.warnings;

  if (state.velocity.empty()) state.velocity = make_zero_gradients(proxy).layers;
  for (std::size_t l = 0; l < proxy.layers.size(); ++l) {
    if (proxy.layers[l].is_dense()) continue;
    FactoredLayer& f = proxy.layers[l].factored();
    LayerGrads& vel = state.velocity[l];
    vel.A = cfg.momentum * vel.A + (grad.layers[l].A + cfg.weight_decay * f.A);
    vel.B = cfg.momentum * vel.B + (grad.layers[l].B + cfg.weight_decay * f.B);
    f.A -= cfg.lr * vel.A;
    f.B -= cfg.lr * vel.B;
  }

  AlignStepRecord rec;
  rec.l_ga = losses.l_ga;
  rec.l_kl = losses.l_kl;
  rec.total = losses.total;
  return rec;
}

AlignReport align(Model& proxy, const Model& target, const Dataset& data, const AlignConfig& cfg) {
  proxy.validate();
  target.validate();
  if (data.size() < 1) throw std::invalid_argument("align: empty dataset");
  if (cfg.batch_size < 1) throw std::invalid_argument("align: batch size must be >= 1");
  const std::vector<std::size_t> layers = factored_layers(proxy);
  if (layers.empty()) throw std::invalid_argument("align: proxy has no factored layers");

  AlignReport report;
  AlignState state;
  Rng rng(derive_seed(cfg.seed, "align.shuffle"));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(stop));
      AlignStepRecord rec = align_step(proxy, target, data, batch, cfg, state);
      rec.step = ++step;
      report.steps.push_back(rec);
    }
  }
  report.warnings = state.warnings;

  // Final alignment diagnostics over the whole set.
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), Index{0});
  const Gradients proxy_grads = mean_gradients(proxy, data, all);
  const auto tgrads = target_weight_grads(target, data, all, layers);
  for (std::size_t l : layers) {
    const FactoredLayer& f = proxy.layers[l].factored();
    const Matrix Ya = tgrads.at(l) * f.B.transpose();
    const Matrix Yb = f.A.transpose() * tgrads.at(l);
    LayerAlignment la;
    la.layer = l;
    la.cos_a = 1.0 - cosine_distance(proxy_grads.layers[l].A, Ya, false).value;
    la.cos_b = 1.0 - cosine_distance(proxy_grads.layers[l].B, Yb, false).value;
    report.final_alignment.push_back(la);
  }
  return report;
}

void save_align_log(const AlignReport& report, const std::string& path) {
  std::string out;
  for (const AlignStepRecord& rec : report.steps) {
    JsonWriter w;
    w.begin_object();
    w.field("step", rec.step);
    w.field("l_ga", rec.l_ga);
    w.field("l_kl", rec.l_kl);
    w.field("total", rec.total);
    w.end_object();
    out += w.str();
    out += '\n';
  }
  write_text_file(path, out);
}

std::string align_summary_json(const AlignReport& report) {
  JsonWriter w;
  w.begin_object();
  w.field("steps", static_cast<std::int64_t>(report.steps.size()));
  w.field("warnings", static_cast<std::int64_t>(report.warnings));
  if (!report.steps.empty()) {
    w.field("first_l_ga", report.steps.front().l_ga);
    w.field("final_l_ga", report.steps.back().l_ga);
  }
  w.begin_array("final_alignment");
  for (const LayerAlignment& la : report.final_alignment) {
    w.object_in_array();
    w.field("layer", static_cast<std::int64_t>(la.layer));
    w.field("cos_a", la.cos_a);
    w.field("cos_b", la.cos_b);
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

}  // namespace proxel
