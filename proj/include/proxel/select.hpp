// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proxel/align.hpp"
#include "proxel/compress.hpp"
#include "proxel/data.hpp"
#include "proxel/influence.hpp"
#include "proxel/nn.hpp"

namespace proxel {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.01;
  Index batch_size = 4;
};

/// Shuffled mini-batch SGD over the given rows. Appends the per-batch mean
/// loss to step_losses when provided. Deterministic given seed.
void train_epochs(Model& model, const Dataset& data, const std::vector<Index>& rows,
                  const TrainConfig& cfg, int epochs, std::uint64_t seed,
                  std::vector<double>* step_losses = nullptr);

/// Trains on a random fraction of the train split (floor(fraction * N)
/// samples, at least 1). Returns the updated model.
Model warmup(Model model, const Dataset& train, double fraction, int epochs, std::uint64_t seed,
             const TrainConfig& cfg);

double evaluate_accuracy(const Model& model, const Dataset& data);
double mean_cross_entropy(const Model& model, const Dataset& data);

struct SelectionResult {
  std::vector<Index> selected;  // row positions, descending score
  Index budget = 0;
  double corrupted_fraction = 0.0;
  double overlap_vs_reference = -1.0;  // filled by callers that have one
};

/// Top-k by descending score, ties by ascending position;
/// k = max(1, floor(percent/100 * N)).
SelectionResult select_topk(const InfluenceScores& scores, double percent,
                            const Dataset* train = nullptr);

/// index,score,rank,selected,corrupted table over every scored sample.
void save_selection_csv(const InfluenceScores& scores, const SelectionResult& selection,
                        const std::vector<std::int64_t>& sample_ids,
                        const std::vector<std::uint8_t>& corrupted, const std::string& path);

/// Rows (positions into the scored set) marked selected=1 in the CSV.
std::vector<Index> load_selection_rows(const std::string& path);

/// Fine-tunes a copy of the model on the selected rows and returns test
/// accuracy.
double finetune_and_eval(const Model& model, const SelectionResult& selection,
                         const Dataset& train, const Dataset& test, int epochs,
                         const TrainConfig& cfg, std::uint64_t seed);

struct ExperimentConfig {
  std::uint64_t seed = 0;  // root seed, mandatory in config files
  int seed_count = 1;
  SyntheticSpec data;
  std::vector<Index> hidden_widths = {64, 64, 64};
  Activation activation = Activation::Tanh;
  TrainConfig warmup_train;
  double warmup_fraction = 0.05;
  int warmup_epochs = 1;
  Index probe_size = 256;
  Index align_size = 512;
  std::vector<CompressMethod> methods = {CompressMethod::Svd, CompressMethod::IpsvdDirect};
  std::vector<double> sparsities = {0.3, 0.5, 0.7};
  std::vector<std::string> estimators = {"tracin-cos"};
  double damping = 1e-3;
  Index rank_align = 8;
  bool exclude_ends = true;
  AlignConfig align;     // align.epochs = 0 disables the alignment stage
  int align_epochs = 0;  // mirrored into align.epochs
  double select_percent = 5.0;
  TrainConfig finetune_train;
  int finetune_epochs = 4;
  bool run_finetune = false;
  int threads = 1;
};

ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct RetentionRow {
  double sparsity = 0.0;
  std::string method;  // compression method, "_aligned" suffix after stage 2
  std::string estimator;
  std::uint64_t seed = 0;
  double loss_retention = 0.0;      // target val loss / proxy val loss
  double influence_spearman = 0.0;  // proxy vs target score ranks
  double topk_overlap = 0.0;        // proxy vs target selection at the budget
};

struct FinetuneRow {
  std::string method;
  std::string estimator;
  std::uint64_t seed = 0;
  double accuracy_proxy_selection = 0.0;
  double accuracy_target_selection = 0.0;
};

struct ExperimentReport {
  std::vector<RetentionRow> retention;
  std::vector<FinetuneRow> finetune;
  std::string outdir;
};

/// Scores with the named estimator ("tracin-cos", "tracin-inner",
/// "if-kfac"); the K-FAC factors use min(1024, |train|) samples.
InfluenceScores score_with_estimator(const Model& model, const Dataset& train, const Dataset& val,
                                     const std::string& estimator,
                                     const std::vector<std::size_t>& layers, double damping,
                                     std::uint64_t seed);

/// Full grid: generate, warm up, compress per (method, sparsity), optionally
/// align, score per estimator, select, optionally fine-tune. Writes
/// retention_curve.csv, per-cell artifacts, and (when enabled) finetune.csv
/// under outdir. Every random stream derives from cfg.seed.
ExperimentReport run_pipeline(const ExperimentConfig& cfg, const std::string& outdir);

void save_retention_csv(const std::vector<RetentionRow>& rows, const std::string& path);

}  // namespace proxel
