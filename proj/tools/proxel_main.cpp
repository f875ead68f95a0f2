// SPDX-License-Identifier: Apache-2.0
//
// proxel: build influence-preserving low-rank proxies of MLP classifiers,
// score training data with gradient-based influence estimators, and run the
// selection pipeline end to end.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "proxel/align.hpp"
#include "proxel/compress.hpp"
#include "proxel/data.hpp"
#include "proxel/influence.hpp"
#include "proxel/io.hpp"
#include "proxel/nn.hpp"
#include "proxel/rng.hpp"
#include "proxel/select.hpp"
#include "proxel/threads.hpp"

namespace {

using namespace proxel;

int run_gen_data(const std::string& spec_path, const std::string& out_dir, std::int64_t seed_flag,
                 bool seed_given) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = spec_from_json(read_text_file(spec_path));
  if (seed_given) spec.seed = static_cast<std::uint64_t>(seed_flag);
  const DataSplits splits = generate(spec);
  save_splits(splits, spec, out_dir);
  std::printf("wrote %s/{train,val,test}.csv (%lld/%lld/%lld samples)\n", out_dir.c_str(),
              static_cast<long long>(splits.train.size()), static_cast<long long>(splits.val.size()),
              static_cast<long long>(splits.test.size()));
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out_path,
              const std::vector<Index>& hidden, const std::string& activation, int epochs,
              const TrainConfig& tcfg, std::uint64_t seed) {
  const DataSplits splits = load_splits(data_dir);
  std::vector<Index> widths;
  widths.push_back(splits.train.features());
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  const int classes = 1 + *std::max_element(splits.train.y.begin(), splits.train.y.end());
  widths.push_back(classes);

  Model model = make_mlp(widths, activation_from_name(activation), derive_seed(seed, "model.init"));
  std::vector<Index> rows(static_cast<std::size_t>(splits.train.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  train_epochs(model, splits.train, rows, tcfg, epochs, seed);
  save_model(model, out_path);
  std::printf("trained %d epochs; val accuracy %.4f; wrote %s\n", epochs,
              evaluate_accuracy(model, splits.val), out_path.c_str());
  return 0;
}

int run_compress(const std::string& model_path, const std::string& data_dir,
                 const std::string& method, double sparsity, double damping, bool exclude_ends,
                 Index probe_size, Index rank_align, std::uint64_t seed,
                 const std::string& out_path, const std::string& report_path) {
  const Model model = load_model(model_path);
  const DataSplits splits = load_splits(data_dir);
  const Dataset probe = sample_probe(splits.train, std::min<Index>(probe_size, splits.train.size()),
                                     derive_seed(seed, "probe"));
  const ProbeStats stats = collect_probe_stats(model, probe);

  CompressionPlan plan;
  plan.sparsity = sparsity;
  plan.damping = damping;
  plan.rank_align = rank_align;
  plan.method = method_from_name(method);
  plan.exclude_ends = exclude_ends;
  CompressionResult result = compress_model(model, stats, plan);
  result.report.seed = seed;

  save_model(result.proxy, out_path);
  if (!report_path.empty()) write_text_file(report_path, report_to_json(result.report));
  std::printf("compressed %zu layers, achieved sparsity %.4f; wrote %s\n",
              result.report.layers.size(), result.report.achieved_sparsity, out_path.c_str());
  return 0;
}

int run_align(const std::string& proxy_path, const std::string& target_path,
              const std::string& data_dir, AlignConfig cfg, Index align_size,
              const std::string& out_path, const std::string& log_path) {
  Model proxy = load_model(proxy_path);
  const Model target = load_model(target_path);
  const DataSplits splits = load_splits(data_dir);
  const Dataset align_set =
      sample_probe(splits.train, std::min<Index>(align_size, splits.train.size()),
                   derive_seed(cfg.seed, "align.set"));

  const AlignReport report = align(proxy, target, align_set, cfg);
  save_model(proxy, out_path);
  if (!log_path.empty()) save_align_log(report, log_path);
  const double first = report.steps.empty() ? 0.0 : report.steps.front().l_ga;
  const double last = report.steps.empty() ? 0.0 : report.steps.back().l_ga;
  std::printf("aligned %d epochs (%zu steps); l_ga %.4f -> %.4f; wrote %s\n", cfg.epochs,
              report.steps.size(), first, last, out_path.c_str());
  return 0;
}

int run_score(const std::string& model_path, const std::string& data_dir,
              const std::string& estimator, double damping, bool exclude_ends, std::uint64_t seed,
              const std::string& out_path) {
  const Model model = load_model(model_path);
  const DataSplits splits = load_splits(data_dir);
  const std::vector<std::size_t> layers = influence_layers(model, exclude_ends);
  const InfluenceScores scores =
      score_with_estimator(model, splits.train, splits.val, estimator, layers, damping, seed);
  save_scores_csv(scores, splits.train.index, out_path);
  std::printf("scored %zu samples with %s; wrote %s\n", scores.scores.size(), estimator.c_str(),
              out_path.c_str());
  return 0;
}

int run_select(const std::string& scores_path, double percent, const std::string& data_dir,
               const std::string& out_path) {
  const LoadedScores loaded = load_scores_csv(scores_path);
  const SelectionResult selection = select_topk(loaded.scores, percent);
  std::vector<std::uint8_t> corrupted(loaded.sample_ids.size(), 0);
  if (!data_dir.empty()) {
    const Dataset train = load_dataset_csv(data_dir + "/train.csv");
    if (train.size() != static_cast<Index>(loaded.sample_ids.size()))
      throw std::invalid_argument("select: scores do not cover the train split in " + data_dir);
    corrupted = train.corrupted;
  }
  save_selection_csv(loaded.scores, selection, loaded.sample_ids, corrupted, out_path);
  std::printf("selected %lld of %zu samples; wrote %s\n",
              static_cast<long long>(selection.budget), loaded.sample_ids.size(),
              out_path.c_str());
  return 0;
}

int run_finetune_eval(const std::string& model_path, const std::string& selection_path,
                      const std::string& data_dir, int epochs, const TrainConfig& tcfg,
                      std::uint64_t seed, const std::string& out_path) {
  const Model model = load_model(model_path);
  const DataSplits splits = load_splits(data_dir);
  SelectionResult selection;
  selection.selected = load_selection_rows(selection_path);
  selection.budget = static_cast<Index>(selection.selected.size());

  const double accuracy = finetune_and_eval(model, selection, splits.train, splits.test, epochs,
                                            tcfg, seed);
  JsonWriter w;
  w.begin_object();
  w.field("accuracy", accuracy);
  w.field("epochs", epochs);
  w.field("selected", static_cast<std::int64_t>(selection.selected.size()));
  w.field("seed", seed);
  w.end_object();
  write_text_file(out_path, w.str());
  std::printf("fine-tuned on %zu samples; test accuracy %.4f; wrote %s\n",
              selection.selected.size(), accuracy, out_path.c_str());
  return 0;
}

int run_experiment(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = experiment_config_from_json(read_text_file(config_path));
  const ExperimentReport report = run_pipeline(cfg, out_dir);
  std::printf("experiment complete: %zu retention rows; outputs under %s\n",
              report.retention.size(), out_dir.c_str());
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled L2 coefficient")
      ->capture_default_str();
  cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "proxel: influence-preserving proxy construction and gradient-based data selection"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads,
                 "worker threads for scoring and evaluation (1 = bit-deterministic; "
                 "more threads tolerate ~1e-10 reduction reordering)")
      ->capture_default_str();

  std::string active = "startup";

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic classification splits");
  std::string gen_spec, gen_out;
  std::int64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "task spec JSON (omit for the default task)");
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override the spec's seed");
  gen->callback([&] {
    active = "gen-data";
    set_thread_count(threads);
    run_gen_data(gen_spec, gen_out, gen_seed, gen_seed_opt->count() > 0);
  });

  // train
  auto* train = app.add_subcommand("train", "train a dense MLP on the train split");
  std::string train_data, train_out, train_act = "tanh";
  std::vector<Index> train_hidden = {64, 64, 64};
  int train_epochs_n = 4;
  std::uint64_t train_seed = 0;
  TrainConfig train_cfg;
  train->add_option("--data", train_data, "dataset directory from gen-data")->required();
  train->add_option("--out", train_out, "output model JSON")->required();
  train->add_option("--epochs", train_epochs_n, "training epochs")->capture_default_str();
  train->add_option("--seed", train_seed, "RNG seed")->capture_default_str();
  train->add_option("--hidden-widths", train_hidden, "hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  train->add_option("--activation", train_act, "hidden activation: tanh or gelu")
      ->capture_default_str();
  add_train_flags(train, train_cfg);
  train->callback([&] {
    active = "train";
    set_thread_count(threads);
    run_train(train_data, train_out, train_hidden, train_act, train_epochs_n, train_cfg,
              train_seed);
  });

  // compress
  auto* compress = app.add_subcommand("compress", "factor dense layers into a low-rank proxy");
  std::string cp_model, cp_data, cp_method = "ipsvd-direct", cp_out, cp_report;
  double cp_sparsity = 0.5, cp_damping = 1e-3;
  bool cp_exclude_ends = true;
  Index cp_probe = 256, cp_rank_align = 8;
  std::uint64_t cp_seed = 0;
  compress->add_option("--model", cp_model, "target model JSON")->required();
  compress->add_option("--data", cp_data, "dataset directory (probe source)")->required();
  compress->add_option("--method", cp_method, "svd | ipsvd-direct | ipsvd-efficient")
      ->capture_default_str();
  compress->add_option("--sparsity", cp_sparsity, "fraction of layer parameters to remove")
      ->capture_default_str();
  compress->add_option("--damping", cp_damping, "moment damping lambda")->capture_default_str();
  compress->add_flag("--exclude-ends,!--no-exclude-ends", cp_exclude_ends,
                     "keep first and last layers dense (default on)");
  compress->add_option("--probe-size", cp_probe, "probe samples drawn from train")
      ->capture_default_str();
  compress->add_option("--rank-align", cp_rank_align, "round ranks to this multiple")
      ->capture_default_str();
  compress->add_option("--seed", cp_seed, "probe sampling seed")->capture_default_str();
  compress->add_option("--out", cp_out, "output proxy model JSON")->required();
  compress->add_option("--report", cp_report, "compression report JSON");
  compress->callback([&] {
    active = "compress";
    set_thread_count(threads);
    run_compress(cp_model, cp_data, cp_method, cp_sparsity, cp_damping, cp_exclude_ends, cp_probe,
                 cp_rank_align, cp_seed, cp_out, cp_report);
  });

  // align
  auto* al = app.add_subcommand("align",
                                "refine a proxy by gradient alignment with KL anchoring");
  std::string al_proxy, al_target, al_data, al_out, al_log;
  AlignConfig al_cfg;
  Index al_size = 512;
  al->add_option("--proxy", al_proxy, "proxy model JSON")->required();
  al->add_option("--target", al_target, "frozen target model JSON")->required();
  al->add_option("--data", al_data, "dataset directory")->required();
  al->add_option("--out", al_out, "output aligned model JSON")->required();
  al->add_option("--log", al_log, "per-step JSON-lines loss log");
  al->add_option("--lambda-kl", al_cfg.lambda_kl, "KL anchor weight")->capture_default_str();
  al->add_option("--tau", al_cfg.tau, "distillation temperature")->capture_default_str();
  al->add_option("--epochs", al_cfg.epochs, "alignment epochs")->capture_default_str();
  al->add_option("--lr", al_cfg.lr, "learning rate")->capture_default_str();
  al->add_option("--batch-size", al_cfg.batch_size, "alignment batch size")->capture_default_str();
  al->add_option("--weight-decay", al_cfg.weight_decay, "decay on A and B")->capture_default_str();
  al->add_option("--hvp-eps", al_cfg.hvp_eps, "finite-difference step for the Hessian product")
      ->capture_default_str();
  al->add_option("--align-size", al_size, "samples drawn from train")->capture_default_str();
  al->add_option("--seed", al_cfg.seed, "RNG seed")->capture_default_str();
  al->callback([&] {
    active = "align";
    set_thread_count(threads);
    run_align(al_proxy, al_target, al_data, al_cfg, al_size, al_out, al_log);
  });

  // score
  auto* score = app.add_subcommand("score", "influence-score the train split");
  std::string sc_model, sc_data, sc_est = "tracin-cos", sc_out;
  double sc_damping = 1e-3;
  bool sc_exclude_ends = true;
  std::uint64_t sc_seed = 0;
  score->add_option("--model", sc_model, "model JSON (proxy or target)")->required();
  score->add_option("--data", sc_data, "dataset directory")->required();
  score->add_option("--estimator", sc_est, "tracin-cos | tracin-inner | if-kfac")
      ->capture_default_str();
  score->add_option("--damping", sc_damping, "K-FAC moment damping")->capture_default_str();
  score->add_flag("--exclude-ends,!--no-exclude-ends", sc_exclude_ends,
                  "skip first/last layers on dense models (default on)");
  score->add_option("--seed", sc_seed, "seed (K-FAC sample draw)")->capture_default_str();
  score->add_option("--out", sc_out, "output scores CSV")->required();
  score->callback([&] {
    active = "score";
    set_thread_count(threads);
    run_score(sc_model, sc_data, sc_est, sc_damping, sc_exclude_ends, sc_seed, sc_out);
  });

  // select
  auto* sel = app.add_subcommand("select", "take the top scoring fraction");
  std::string sel_scores, sel_data, sel_out;
  double sel_percent = 5.0;
  sel->add_option("--scores", sel_scores, "scores CSV from `score`")->required();
  sel->add_option("--percent", sel_percent, "budget as percent of the train split")
      ->capture_default_str();
  sel->add_option("--data", sel_data,
                  "dataset directory; fills the corrupted column (otherwise 0)");
  sel->add_option("--out", sel_out, "output selection CSV")->required();
  sel->callback([&] {
    active = "select";
    set_thread_count(threads);
    run_select(sel_scores, sel_percent, sel_data, sel_out);
  });

  // finetune-eval
  auto* ft = app.add_subcommand("finetune-eval", "fine-tune on a selection and report accuracy");
  std::string ft_model, ft_selection, ft_data, ft_out;
  int ft_epochs = 4;
  std::uint64_t ft_seed = 0;
  TrainConfig ft_cfg;
  ft->add_option("--model", ft_model, "starting model JSON")->required();
  ft->add_option("--selection", ft_selection, "selection CSV from `select`")->required();
  ft->add_option("--data", ft_data, "dataset directory")->required();
  ft->add_option("--epochs", ft_epochs, "fine-tuning epochs")->capture_default_str();
  ft->add_option("--seed", ft_seed, "RNG seed")->capture_default_str();
  add_train_flags(ft, ft_cfg);
  ft->add_option("--out", ft_out, "output result JSON")->required();
  ft->callback([&] {
    active = "finetune-eval";
    set_thread_count(threads);
    run_finetune_eval(ft_model, ft_selection, ft_data, ft_epochs, ft_cfg, ft_seed, ft_out);
  });

  // experiment
  auto* exp = app.add_subcommand("experiment",
                                 "full grid: compress, align, score, select, report");
  std::string exp_config, exp_out;
  exp->add_option("--config", exp_config, "experiment config JSON (root seed mandatory)")
      ->required();
  exp->add_option("--out", exp_out, "output directory")->required();
  exp->callback([&] {
    active = "experiment";
    set_thread_count(threads);
    run_experiment(exp_config, exp_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "{\"stage\":\"%s\",\"code\":\"invalid_argument\",\"error\":\"%s\"}\n",
                 active.c_str(), e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "{\"stage\":\"%s\",\"code\":\"runtime_error\",\"error\":\"%s\"}\n",
                 active.c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "{\"stage\":\"%s\",\"code\":\"internal\",\"error\":\"%s\"}\n",
                 active.c_str(), e.what());
    return 1;
  }
  return 0;
}
