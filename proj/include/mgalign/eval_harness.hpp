#pragma once

// Metrics, evaluation protocols and the planted synthetic data generator.
//
// Ranking conventions:
//  - top-k: class j outranks the true class y when s_j > s_y, or s_j == s_y
//    and j < y. A video is correct at k when fewer than k classes outrank y.
//  - AP for one class: videos sorted by descending score, ties by lower video
//    index; AP = mean over positives of precision at the positive's rank.
//    mAP averages AP over classes that have at least one positive.

#include "mgalign/alignment.hpp"
#include "mgalign/embedding_store.hpp"
#include "mgalign/subtext_metrics.hpp"
#include "mgalign/training.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mgalign {

// ---- metrics ------------------------------------------------------------------

double topk_accuracy(const Mat& scores, std::span<const int> labels, int k);

/// AP of one score column against a positive mask.
double average_precision(const Vec& scores, const std::vector<bool>& positive);

double mean_average_precision(const Mat& scores, std::span<const std::vector<int>> labelsets);

double pearson_r(std::span<const double> x, std::span<const double> y);

// ---- synthetic data --------------------------------------------------------------

struct SyntheticConfig {
  int classes = 10;
  int atomics = 4;               // atomic actions (and sub-texts) per class
  double shared_fraction = 0.5;  // fraction of atomics shared with the paired class
  int frames = 8;
  int dim = 32;
  double concentration = 0.5;  // Dirichlet concentration of segment durations
  double noise = 0.8;          // frame noise norm; text noise is text_noise_ratio * noise
  double text_noise_ratio = 0.25;
  double appearance = 1.0;  // per-video nuisance norm, in units of `noise`
  int appearance_rank = 4;
  bool background = true;  // add one background segment per video
  double distractor = 0.5;  // weight of another class's direction in the background
  int global_tokens = 2;
  int subtext_tokens = 3;
  int videos_per_class = 50;
  int candidate_groups = 0;  // alternative sub-text sets of decreasing quality
  bool identical_globals = false;
  std::uint64_t seed = 0;

  void check() const;
};

EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg);

std::string synthetic_config_to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const std::string& text, SyntheticConfig base = {});

// ---- evaluation -------------------------------------------------------------------

struct ClassAccuracy {
  std::string name;
  int videos = 0;
  int correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;  // top-min(5, C)
  std::optional<double> map;
  std::vector<ClassAccuracy> per_class;
};

/// V x C matrix of class scores under `p`.
Mat score_matrix(const EmbeddingDataset& ds, const ModelParams& p, int threads = 1);

EvalReport report_from_scores(const Mat& scores, const EmbeddingDataset& ds);
EvalReport evaluate(const EmbeddingDataset& ds, const ModelParams& p, int threads = 1);

/// cos(t_c, mean of frames) with no learned parameters.
EvalReport evaluate_mean_pool(const EmbeddingDataset& ds, int threads = 1);

std::string report_to_json(const EvalReport& r);
std::string per_class_csv(const EvalReport& r);

/// Coarse and fine importance of every frame of every video under its true class.
std::string importance_profiles_csv(const EmbeddingDataset& ds, const ModelParams& p);

// ---- protocols -----------------------------------------------------------------------

/// Keeps the listed classes (in the given order), relabels videos and drops
/// videos with no remaining label.
EmbeddingDataset subset_classes(const EmbeddingDataset& ds, std::span<const int> class_ids);

/// Splits every class's videos into `shots` training videos and the rest.
std::pair<EmbeddingDataset, EmbeddingDataset> few_shot_split(const EmbeddingDataset& ds, int shots,
                                                              std::uint64_t seed);

/// Per class, the first `train_per_class` videos (dataset order) go to train.
std::pair<EmbeddingDataset, EmbeddingDataset> holdout_split(const EmbeddingDataset& ds,
                                                             int train_per_class);

EvalReport zero_shot_eval(const ModelParams& p, std::span<const std::string> trained_classes,
                          const EmbeddingDataset& unseen, int threads = 1);

struct AblationRow {
  std::string variant;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // baseline, coarse, fine, full
};

/// Evaluates already-trained parameters, one per variant in table order.
AblationTable ablation_suite(const EmbeddingDataset& eval, std::span<const ModelParams> params,
                             int threads = 1);

/// Trains every variant with the same config and seed, then evaluates.
AblationTable run_ablation(const EmbeddingDataset& train_ds, const EmbeddingDataset& eval_ds,
                           const TrainConfig& cfg, std::uint64_t seed);

std::string ablation_csv(const AblationTable& t);

struct TppStudyPoint {
  int group = 0;
  double tpp = 0.0;
  double top1 = 0.0;
};

struct TppStudy {
  std::vector<TppStudyPoint> points;
  double r = 0.0;
};

/// Installs each candidate group in turn as every class's sub-texts, trains
/// under a fixed budget and seed, and correlates dataset TPP with top-1.
TppStudy tpp_correlation_study(const EmbeddingDataset& train_ds, const EmbeddingDataset& eval_ds,
                               const TrainConfig& cfg, const TppConfig& tpp, std::uint64_t seed);

std::string tpp_study_csv(const TppStudy& s);

}  // namespace mgalign
