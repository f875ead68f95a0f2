// SPDX-License-Identifier: Apache-2.0
#include "proxel/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "proxel/io.hpp"
#include "proxel/metrics.hpp"
#include "proxel/rng.hpp"
#include "proxel/threads.hpp"

namespace proxel {

namespace {

double sgd_batch(Model& model, const Dataset& data, const Index* rows, std::size_t count,
                 const SgdConfig& cfg, SgdState& state) {
  Gradients acc = make_zero_gradients(model);
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    Trace trace = forward(model, data.sample(rows[i]));
    accumulate(acc, backward(model, trace, data.y[static_cast<std::size_t>(rows[i])]));
    loss += trace.loss;
  }
  scale(acc, 1.0 / static_cast<double>(count));
  optimizer_step(model, acc, cfg, state);
  return loss / static_cast<double>(count);
}

}  // namespace

void train_epochs(Model& model, const Dataset& data, const std::vector<Index>& rows,
                  const TrainConfig& cfg, int epochs, std::uint64_t seed,
                  std::vector<double>* step_losses) {
  if (rows.empty()) throw std::invalid_argument("train_epochs: empty training subset");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_epochs: batch size must be >= 1");
  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
  SgdState state;
  Rng rng(derive_seed(seed, "train.shuffle"));
  std::vector<Index> order = rows;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      const double loss = sgd_batch(model, data, order.data() + start, count, sgd, state);
      if (step_losses) step_losses->push_back(loss);
    }
  }
}

Model warmup(Model model, const Dataset& train, double fraction, int epochs, std::uint64_t seed,
             const TrainConfig& cfg) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("warmup: fraction must be in (0, 1]");
  const Index subset =
      std::max<Index>(1, static_cast<Index>(std::floor(fraction * static_cast<double>(train.size()))));
  std::vector<Index> rows(static_cast<std::size_t>(train.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  Rng rng(derive_seed(seed, "warmup.subset"));
  rng.shuffle(rows);
  rows.resize(static_cast<std::size_t>(subset));
  if (epochs > 0) train_epochs(model, train, rows, cfg, epochs, derive_seed(seed, "warmup.train"));
  return model;
}

double evaluate_accuracy(const Model& model, const Dataset& data) {
  if (data.size() < 1) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(data.size()), 0);
  parallel_for(data.size(), [&](Index i) {
    const Vector logits = forward(model, data.sample(i)).logits;
    Index best = 0;
    logits.maxCoeff(&best);
    hit[static_cast<std::size_t>(i)] = best == data.y[static_cast<std::size_t>(i)] ? 1 : 0;
  });
  std::int64_t correct = 0;
  for (std::uint8_t h : hit) correct += h;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_cross_entropy(const Model& model, const Dataset& data) {
  if (data.size() < 1) throw std::invalid_argument("mean_cross_entropy: empty dataset");
  std::vector<double> losses(static_cast<std::size_t>(data.size()), 0.0);
  parallel_for(data.size(), [&](Index i) {
    losses[static_cast<std::size_t>(i)] =
        cross_entropy(forward(model, data.sample(i)).logits, data.y[static_cast<std::size_t>(i)]);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) /
         static_cast<double>(data.size());
}

SelectionResult select_topk(const InfluenceScores& scores, double percent, const Dataset* train) {
  if (percent <= 0.0 || percent > 100.0)
    throw std::invalid_argument("select_topk: percent must be in (0, 100]");
  const std::size_t n = scores.scores.size();
  if (n == 0) throw std::invalid_argument("select_topk: no scores");
  const Index k = std::max<Index>(
      1, static_cast<Index>(std::floor(percent / 100.0 * static_cast<double>(n))));

  const std::vector<Index> order = descending_order(scores.scores);
  SelectionResult out;
  out.budget = k;
  out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  if (train) {
    if (train->size() != static_cast<Index>(n))
      throw std::invalid_argument("select_topk: dataset size does not match scores");
    std::int64_t bad = 0;
    for (Index r : out.selected) bad += train->corrupted[static_cast<std::size_t>(r)] ? 1 : 0;
    out.corrupted_fraction = static_cast<double>(bad) / static_cast<double>(k);
  }
  return out;
}

void save_selection_csv(const InfluenceScores& scores, const SelectionResult& selection,
                        const std::vector<std::int64_t>& sample_ids,
                        const std::vector<std::uint8_t>& corrupted, const std::string& path) {
  if (sample_ids.size() != scores.scores.size() || corrupted.size() != scores.scores.size())
    throw std::invalid_argument("save_selection_csv: column lengths do not match scores");
  std::vector<std::uint8_t> chosen(scores.scores.size(), 0);
  for (Index r : selection.selected) chosen[static_cast<std::size_t>(r)] = 1;
  const std::vector<Index> order = descending_order(scores.scores);
  std::vector<std::int64_t> rank(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    rank[static_cast<std::size_t>(order[pos])] = static_cast<std::int64_t>(pos) + 1;

  std::string out = "index,score,rank,selected,corrupted\n";
  for (std::size_t i = 0; i < scores.scores.size(); ++i) {
    out += format_int(sample_ids[i]);
    out += ',';
    out += format_double(scores.scores[i]);
    out += ',';
    out += format_int(rank[i]);
    out += ',';
    out += chosen[i] ? '1' : '0';
    out += ',';
    out += corrupted[i] ? '1' : '0';
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<Index> load_selection_rows(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<Index> rows;
  std::size_t pos = 0;
  bool header = true;
  Index row = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (header) {
      if (fields.size() != 5 || fields[0] != "index" || fields[3] != "selected")
        throw std::runtime_error("selection csv: unexpected header in " + path);
      header = false;
      continue;
    }
    if (fields.size() != 5) throw std::runtime_error("selection csv: ragged row in " + path);
    if (parse_int(fields[3]) != 0) rows.push_back(row);
    ++row;
  }
  if (rows.empty()) throw std::runtime_error("selection csv: no selected rows in " + path);
  return rows;
}

double finetune_and_eval(const Model& model, const SelectionResult& selection,
                         const Dataset& train, const Dataset& test, int epochs,
                         const TrainConfig& cfg, std::uint64_t seed) {
  if (selection.selected.empty()) throw std::invalid_argument("finetune_and_eval: empty selection");
  for (Index r : selection.selected)
    if (r < 0 || r >= train.size())
      throw std::invalid_argument("finetune_and_eval: selection index out of range");
  Model tuned = model;
  if (epochs > 0)
    train_epochs(tuned, train, selection.selected, cfg, epochs, derive_seed(seed, "finetune"));
  return evaluate_accuracy(tuned, test);
}

namespace {

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base) {
  if (doc.contains("lr")) base.lr = doc["lr"].get<double>();
  if (doc.contains("momentum")) base.momentum = doc["momentum"].get<double>();
  if (doc.contains("weight_decay")) base.weight_decay = doc["weight_decay"].get<double>();
  if (doc.contains("batch_size")) base.batch_size = doc["batch_size"].get<Index>();
  return base;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  ExperimentConfig cfg;
  if (!doc.contains("seed"))
    throw std::invalid_argument("experiment config: root seed is mandatory");
  cfg.seed = doc["seed"].get<std::uint64_t>();
  if (doc.contains("seeds")) cfg.seed_count = doc["seeds"].get<int>();
  if (cfg.seed_count < 1) throw std::invalid_argument("experiment config: seeds must be >= 1");
  if (doc.contains("data")) {
    const auto& d = doc["data"];
    if (d.contains("classes")) cfg.data.classes = d["classes"].get<int>();
    if (d.contains("features")) cfg.data.features = d["features"].get<Index>();
    if (d.contains("train_size")) cfg.data.train_size = d["train_size"].get<Index>();
    if (d.contains("val_size")) cfg.data.val_size = d["val_size"].get<Index>();
    if (d.contains("test_size")) cfg.data.test_size = d["test_size"].get<Index>();
    if (d.contains("separation")) cfg.data.separation = d["separation"].get<double>();
    if (d.contains("label_noise")) cfg.data.label_noise = d["label_noise"].get<double>();
  }
  if (doc.contains("hidden_widths")) {
    cfg.hidden_widths.clear();
    for (const auto& v : doc["hidden_widths"]) cfg.hidden_widths.push_back(v.get<Index>());
  }
  if (doc.contains("activation"))
    cfg.activation = activation_from_name(doc["activation"].get<std::string>());
  if (doc.contains("warmup")) {
    const auto& wj = doc["warmup"];
    cfg.warmup_train = train_config_from_json(wj, cfg.warmup_train);
    if (wj.contains("fraction")) cfg.warmup_fraction = wj["fraction"].get<double>();
    if (wj.contains("epochs")) cfg.warmup_epochs = wj["epochs"].get<int>();
  }
  if (doc.contains("probe_size")) cfg.probe_size = doc["probe_size"].get<Index>();
  if (doc.contains("align_size")) cfg.align_size = doc["align_size"].get<Index>();
  if (doc.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : doc["methods"]) cfg.methods.push_back(method_from_name(m.get<std::string>()));
  }
  if (doc.contains("sparsities")) {
    cfg.sparsities.clear();
    for (const auto& s : doc["sparsities"]) cfg.sparsities.push_back(s.get<double>());
  }
  if (doc.contains("estimators")) {
    cfg.estimators.clear();
    for (const auto& e : doc["estimators"]) cfg.estimators.push_back(e.get<std::string>());
  }
  if (doc.contains("damping")) cfg.damping = doc["damping"].get<double>();
  if (doc.contains("rank_align")) cfg.rank_align = doc["rank_align"].get<Index>();
  if (doc.contains("exclude_ends")) cfg.exclude_ends = doc["exclude_ends"].get<bool>();
  if (doc.contains("align")) cfg.align = align_config_from_json(doc["align"].dump());
  cfg.align_epochs = cfg.align.epochs;
  if (doc.contains("align_epochs")) cfg.align_epochs = doc["align_epochs"].get<int>();
  cfg.align.epochs = cfg.align_epochs;
  if (doc.contains("select_percent")) cfg.select_percent = doc["select_percent"].get<double>();
  if (doc.contains("finetune")) {
    const auto& fj = doc["finetune"];
    cfg.finetune_train = train_config_from_json(fj, cfg.finetune_train);
    if (fj.contains("epochs")) cfg.finetune_epochs = fj["epochs"].get<int>();
  }
  if (doc.contains("run_finetune")) cfg.run_finetune = doc["run_finetune"].get<bool>();
  if (doc.contains("threads")) cfg.threads = doc["threads"].get<int>();
  return cfg;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  JsonWriter w;
  w.begin_object();
  w.field("seed", cfg.seed);
  w.field("seeds", cfg.seed_count);
  w.key("data");
  w.begin_object();
  w.field("classes", cfg.data.classes);
  w.field("features", static_cast<std::int64_t>(cfg.data.features));
  w.field("train_size", static_cast<std::int64_t>(cfg.data.train_size));
  w.field("val_size", static_cast<std::int64_t>(cfg.data.val_size));
  w.field("test_size", static_cast<std::int64_t>(cfg.data.test_size));
  w.field("separation", cfg.data.separation);
  w.field("label_noise", cfg.data.label_noise);
  w.end_object();
  w.begin_array("hidden_widths");
  for (Index h : cfg.hidden_widths) w.value(static_cast<std::int64_t>(h));
  w.end_array();
  w.field("activation", activation_name(cfg.activation));
  w.key("warmup");
  w.begin_object();
  w.field("fraction", cfg.warmup_fraction);
  w.field("epochs", cfg.warmup_epochs);
  w.field("lr", cfg.warmup_train.lr);
  w.field("momentum", cfg.warmup_train.momentum);
  w.field("weight_decay", cfg.warmup_train.weight_decay);
  w.field("batch_size", static_cast<std::int64_t>(cfg.warmup_train.batch_size));
  w.end_object();
  w.field("probe_size", static_cast<std::int64_t>(cfg.probe_size));
  w.field("align_size", static_cast<std::int64_t>(cfg.align_size));
  w.begin_array("methods");
  for (CompressMethod m : cfg.methods) w.value(method_name(m));
  w.end_array();
  w.begin_array("sparsities");
  for (double s : cfg.sparsities) w.value(s);
  w.end_array();
  w.begin_array("estimators");
  for (const std::string& e : cfg.estimators) w.value(e);
  w.end_array();
  w.field("damping", cfg.damping);
  w.field("rank_align", static_cast<std::int64_t>(cfg.rank_align));
  w.field("exclude_ends", cfg.exclude_ends);
  w.key("align");
  w.begin_object();
  w.field("epochs", cfg.align_epochs);
  w.field("lr", cfg.align.lr);
  w.field("momentum", cfg.align.momentum);
  w.field("weight_decay", cfg.align.weight_decay);
  w.field("lambda_kl", cfg.align.lambda_kl);
  w.field("tau", cfg.align.tau);
  w.field("batch_size", static_cast<std::int64_t>(cfg.align.batch_size));
  w.field("hvp_eps", cfg.align.hvp_eps);
  w.end_object();
  w.field("select_percent", cfg.select_percent);
  w.key("finetune");
  w.begin_object();
  w.field("epochs", cfg.finetune_epochs);
  w.field("lr", cfg.finetune_train.lr);
  w.field("momentum", cfg.finetune_train.momentum);
  w.field("weight_decay", cfg.finetune_train.weight_decay);
  w.field("batch_size", static_cast<std::int64_t>(cfg.finetune_train.batch_size));
  w.end_object();
  w.field("run_finetune", cfg.run_finetune);
  w.field("threads", cfg.threads);
  w.end_object();
  return w.str();
}

InfluenceScores score_with_estimator(const Model& model, const Dataset& train, const Dataset& val,
                                     const std::string& estimator,
                                     const std::vector<std::size_t>& layers, double damping,
                                     std::uint64_t seed) {
  InfluenceScores scores;
  if (estimator == "tracin-cos") {
    scores = tracin_scores(model, train, val, TracinVariant::Cosine, layers);
  } else if (estimator == "tracin-inner") {
    scores = tracin_scores(model, train, val, TracinVariant::Inner, layers);
  } else if (estimator == "if-kfac") {
    const Index budget = std::min<Index>(1024, train.size());
    const Dataset sample = sample_probe(train, budget, derive_seed(seed, "kfac.sample"));
    const KfacFactors factors = kfac_factors(model, sample, damping, layers);
    scores = if_scores(model, train, val, factors);
  } else {
    throw std::invalid_argument("unknown estimator '" + estimator + "'");
  }
  scores.seed = seed;
  return scores;
}

void save_retention_csv(const std::vector<RetentionRow>& rows, const std::string& path) {
  std::string out = "sparsity,method,estimator,seed,loss_retention,influence_spearman,topk_overlap\n";
  for (const RetentionRow& r : rows) {
    out += format_double(r.sparsity);
    out += ',';
    out += r.method;
    out += ',';
    out += r.estimator;
    out += ',';
    out += format_int(static_cast<std::int64_t>(r.seed));
    out += ',';
    out += format_double(r.loss_retention);
    out += ',';
    out += format_double(r.influence_spearman);
    out += ',';
    out += format_double(r.topk_overlap);
    out += '\n';
  }
  write_text_file(path, out);
}

namespace {

std::string rho_tag(double rho) {
  // percent with padding, filesystem-safe: 0.5 -> "050", 0.75 -> "075"
  const int percent = static_cast<int>(std::lround(rho * 100.0));
  std::string s = std::to_string(percent);
  while (s.size() < 3) s.insert(s.begin(), '0');
  return s;
}

struct TargetArtifacts {
  Model model;
  DataSplits splits;
  ProbeStats stats;
  Dataset align_set;
  std::vector<std::size_t> layers;
  double val_loss = 0.0;
  std::map<std::string, InfluenceScores> scores;          // per estimator
  std::map<std::string, SelectionResult> selections;      // per estimator
  std::map<std::string, std::vector<std::int64_t>> ids;   // selected global ids
};

std::vector<std::int64_t> selected_ids(const SelectionResult& sel, const Dataset& train) {
  std::vector<std::int64_t> ids;
  ids.reserve(sel.selected.size());
  for (Index r : sel.selected) ids.push_back(train.index[static_cast<std::size_t>(r)]);
  return ids;
}

}  // namespace

ExperimentReport run_pipeline(const ExperimentConfig& cfg, const std::string& outdir) {
  set_thread_count(cfg.threads);
  ensure_directory(outdir);
  ensure_directory(outdir + "/cells");
  write_text_file(outdir + "/config.json", experiment_config_to_json(cfg));

  ExperimentReport report;
  report.outdir = outdir;

  for (int s = 0; s < cfg.seed_count; ++s) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
    const std::string stage_prefix = "seed " + std::to_string(seed) + ": ";
    TargetArtifacts target;

    try {
      SyntheticSpec spec = cfg.data;
      spec.seed = seed;
      target.splits = generate(spec);

      std::vector<Index> widths;
      widths.push_back(spec.features);
      widths.insert(widths.end(), cfg.hidden_widths.begin(), cfg.hidden_widths.end());
      widths.push_back(spec.classes);
      Model init = make_mlp(widths, cfg.activation, derive_seed(seed, "model.init"));
      target.model = warmup(std::move(init), target.splits.train, cfg.warmup_fraction,
                            cfg.warmup_epochs, seed, cfg.warmup_train);

      const Dataset probe = sample_probe(target.splits.train,
                                         std::min(cfg.probe_size, target.splits.train.size()),
                                         derive_seed(seed, "probe"));
      if (cfg.align_epochs > 0) {
        const Index pool = target.splits.train.size() - probe.size();
        if (pool < 1)
          throw std::invalid_argument("alignment needs train samples outside the probe set");
        target.align_set = sample_disjoint(target.splits.train, probe,
                                           std::min(cfg.align_size, pool),
                                           derive_seed(seed, "align.set"));
      }
      target.stats = collect_probe_stats(target.model, probe);
      target.layers = influence_layers(target.model, cfg.exclude_ends);
      target.val_loss = mean_cross_entropy(target.model, target.splits.val);
    } catch (const std::exception& e) {
      throw std::runtime_error(stage_prefix + "setup: " + e.what());
    }

    const std::string target_dir = outdir + "/cells/target_seed" + std::to_string(seed);
    ensure_directory(target_dir);
    save_model(target.model, target_dir + "/model.json");

    for (const std::string& est : cfg.estimators) {
      try {
        InfluenceScores sc = score_with_estimator(target.model, target.splits.train,
                                                  target.splits.val, est, target.layers,
                                                  cfg.damping, seed);
        SelectionResult sel = select_topk(sc, cfg.select_percent, &target.splits.train);
        save_scores_csv(sc, target.splits.train.index, target_dir + "/scores_" + est + ".csv");
        save_selection_csv(sc, sel, target.splits.train.index, target.splits.train.corrupted,
                           target_dir + "/selection_" + est + ".csv");
        target.ids[est] = selected_ids(sel, target.splits.train);
        target.scores[est] = std::move(sc);
        target.selections[est] = std::move(sel);
      } catch (const std::exception& e) {
        throw std::runtime_error(stage_prefix + "target scoring (" + est + "): " + e.what());
      }
    }

    for (CompressMethod method : cfg.methods) {
      for (double rho : cfg.sparsities) {
        const std::string cell = method_name(method) + "_rho" + rho_tag(rho) + "_seed" +
                                 std::to_string(seed);
        const std::string cell_dir = outdir + "/cells/" + cell;
        ensure_directory(cell_dir);

        CompressionResult comp;
        try {
          CompressionPlan plan;
          plan.sparsity = rho;
          plan.damping = cfg.damping;
          plan.rank_align = cfg.rank_align;
          plan.method = method;
          plan.exclude_ends = cfg.exclude_ends;
          comp = compress_model(target.model, target.stats, plan);
          comp.report.seed = seed;
          save_model(comp.proxy, cell_dir + "/proxy.json");
          write_text_file(cell_dir + "/report.json", report_to_json(comp.report));
        } catch (const std::exception& e) {
          throw std::runtime_error(stage_prefix + "compress (" + cell + "): " + e.what());
        }

        auto emit_rows = [&](const Model& proxy, const std::string& method_label,
                             const std::string& file_tag) {
          const double proxy_loss = mean_cross_entropy(proxy, target.splits.val);
          for (const std::string& est : cfg.estimators) {
            InfluenceScores sc =
                score_with_estimator(proxy, target.splits.train, target.splits.val, est,
                                     target.layers, cfg.damping, seed);
            SelectionResult sel = select_topk(sc, cfg.select_percent, &target.splits.train);
            const auto ids = selected_ids(sel, target.splits.train);
            sel.overlap_vs_reference =
                topk_overlap(ids, target.ids.at(est), static_cast<std::size_t>(sel.budget));
            save_scores_csv(sc, target.splits.train.index,
                            cell_dir + "/scores_" + est + file_tag + ".csv");
            save_selection_csv(sc, sel, target.splits.train.index, target.splits.train.corrupted,
                               cell_dir + "/selection_" + est + file_tag + ".csv");

            RetentionRow row;
            row.sparsity = rho;
            row.method = method_label;
            row.estimator = est;
            row.seed = seed;
            row.loss_retention = target.val_loss / proxy_loss;
            row.influence_spearman = spearman(sc.scores, target.scores.at(est).scores);
            row.topk_overlap = sel.overlap_vs_reference;
            report.retention.push_back(row);

            if (cfg.run_finetune) {
              FinetuneRow frow;
              frow.method = method_label;
              frow.estimator = est;
              frow.seed = seed;
              frow.accuracy_proxy_selection =
                  finetune_and_eval(target.model, sel, target.splits.train, target.splits.test,
                                    cfg.finetune_epochs, cfg.finetune_train, seed);
              frow.accuracy_target_selection = finetune_and_eval(
                  target.model, target.selections.at(est), target.splits.train,
                  target.splits.test, cfg.finetune_epochs, cfg.finetune_train, seed);
              report.finetune.push_back(frow);
            }
          }
        };

        try {
          emit_rows(comp.proxy, method_name(method), "");
        } catch (const std::exception& e) {
          throw std::runtime_error(stage_prefix + "score (" + cell + "): " + e.what());
        }

        if (cfg.align_epochs > 0) {
          try {
            Model aligned = comp.proxy;
            AlignConfig acfg = cfg.align;
            acfg.epochs = cfg.align_epochs;
            acfg.seed = derive_seed(seed, "align." + cell);
            const AlignReport areport = align(aligned, target.model, target.align_set, acfg);
            save_model(aligned, cell_dir + "/proxy_aligned.json");
            save_align_log(areport, cell_dir + "/align_log.jsonl");
            write_text_file(cell_dir + "/align_summary.json", align_summary_json(areport));
            emit_rows(aligned, method_name(method) + "_aligned", "_aligned");
          } catch (const std::exception& e) {
            throw std::runtime_error(stage_prefix + "align (" + cell + "): " + e.what());
          }
        }
      }
    }
  }

  save_retention_csv(report.retention, outdir + "/retention_curve.csv");
  if (cfg.run_finetune) {
    std::string out = "method,estimator,seed,accuracy_proxy_selection,accuracy_target_selection\n";
    for (const FinetuneRow& r : report.finetune) {
      out += r.method;
      out += ',';
      out += r.estimator;
      out += ',';
      out += format_int(static_cast<std::int64_t>(r.seed));
      out += ',';
      out += format_double(r.accuracy_proxy_selection);
      out += ',';
      out += format_double(r.accuracy_target_selection);
      out += '\n';
    }
    write_text_file(outdir + "/finetune.csv", out);
  }
  return report;
}

}  // namespace proxel
