#pragma once

// Contrastive training of the learnable projections and feedforward heads.
//
// Logits y[b][c] = cos(t_c, o_{b,c}) / tau. The objective is
//   L = L_t2v + lambda * L_v2t
// where, with k_b the in-batch videos sharing video b's label c_b,
//   L_t2v = -(1/B) sum_b (1/|k_b|) sum_{b' in k_b} log softmax_{over videos}(y[., c_b])[b']
//   L_v2t = -(1/B) sum_b (1/|k_b|) sum_{b' in k_b} log softmax_{over classes}(y[b', .])[c_b]
// Gradients are computed by a hand-written reverse pass through the whole
// pipeline in alignment.hpp; text and frame embeddings are constants.

#include "mgalign/alignment.hpp"
#include "mgalign/embedding_store.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mgalign {

/// Gradient storage with the exact shapes of a ModelParams.
struct GradientSet {
  AttentionParams attention;
  FusionParams fusion;
};

GradientSet zeros_like(const ModelParams& p);

/// A named flat view of one parameter (or gradient) tensor.
struct NamedTensor {
  std::string name;
  std::span<double> values;
};

/// Same order for parameters and gradients: wq, wk, wv, then for each of the
/// coarse and fine heads: first.weight, first.bias[, second.weight, second.bias].
std::vector<NamedTensor> parameter_tensors(ModelParams& p);
std::vector<NamedTensor> gradient_tensors(GradientSet& g);
std::size_t parameter_count(const ModelParams& p);

struct Batch {
  std::vector<const FrameEmbeddings*> videos;

  int size() const { return static_cast<int>(videos.size()); }
  std::vector<int> labels() const;  // first label of each video
};

Batch make_batch(const EmbeddingDataset& ds, std::span<const int> indices);

// ---- losses -----------------------------------------------------------------------

Mat compute_logits(const Batch& batch, std::span<const ClassTextBundle> classes,
                   const ModelParams& p);

double loss_t2v(const Mat& logits, std::span<const int> labels);
double loss_v2t(const Mat& logits, std::span<const int> labels);
double total_loss(const Mat& logits, std::span<const int> labels, double lambda);

struct LossGradient {
  double t2v = 0.0;
  double v2t = 0.0;
  double total = 0.0;
  Mat dlogits;
};

LossGradient loss_with_gradient(const Mat& logits, std::span<const int> labels, double lambda);

// ---- reverse pass ------------------------------------------------------------------

/// Fine-branch results per (video, class), reusable across parameter updates.
using FineCache = std::vector<std::vector<FineResult>>;

struct BackwardOptions {
  int threads = 1;
  const FineCache* fine_cache = nullptr;  // indexed by `cache_rows`
  std::span<const int> cache_rows;        // dataset index of each batch entry
};

struct BackwardResult {
  double loss = 0.0;
  double loss_t2v = 0.0;
  double loss_v2t = 0.0;
  Mat logits;
  GradientSet grads;
};

BackwardResult backward(const Batch& batch, std::span<const ClassTextBundle> classes,
                        const ModelParams& p, const BackwardOptions& opts = {});

// ---- gradient checking ---------------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples = 256;  // spread across every tensor; ignored when full
  bool full = false;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // coordinates with a vanishing derivative from dividing noise by zero.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using Objective = std::function<double(const ModelParams&)>;
using GradientFn = std::function<GradientSet(const ModelParams&)>;

GradCheckResult grad_check(const ModelParams& p, const Objective& objective,
                           const GradientFn& gradient, const GradCheckOptions& opts);

GradCheckResult grad_check(const Batch& batch, std::span<const ClassTextBundle> classes,
                           const ModelParams& p, const GradCheckOptions& opts);

/// Small random problem for gradient checks: B=4 videos over C=3 classes,
/// L=6 frames, D=16, N=3 sub-texts, two videos sharing a label.
struct GradFixture {
  EmbeddingDataset ds;
  ModelParams params;
};

GradFixture make_grad_fixture(std::uint64_t seed, const InitOptions& init = {});

// ---- optimizer ------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;  // applied to weight matrices, not biases
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;  // 0 => constant learning rate after warm-up
};

/// Linear warm-up, then cosine annealing to zero at `total_steps`.
double scheduled_lr(const AdamWConfig& cfg, std::int64_t step);

struct OptimState {
  GradientSet first_moment;
  GradientSet second_moment;
  std::int64_t step = 0;
  AdamWConfig config;
};

OptimState make_optim_state(const ModelParams& p, const AdamWConfig& cfg);

void adamw_step(ModelParams& p, const GradientSet& g, OptimState& s);

// ---- training loop ----------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-2;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_epochs = 5;
  double lambda = 1.0;
  double tau = 0.05;
  int threads = 1;
  Variant variant = Variant::Full;
  CoarseForm coarse_form = CoarseForm::Softmax;
  int hidden = 0;
  Activation activation = Activation::Relu;
  int heads = 1;

  void check() const;
};

struct EpochStats {
  int epoch = 0;
  double loss_t2v = 0.0;
  double loss_v2t = 0.0;
  double total = 0.0;
  double train_top1 = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

/// Initializes parameters from `seed` and trains.
TrainResult train(const EmbeddingDataset& ds, const TrainConfig& cfg, std::uint64_t seed);

/// Trains from the given parameters; the seed drives batch shuffling only.
TrainResult train_from(ModelParams init, const EmbeddingDataset& ds, const TrainConfig& cfg,
                       std::uint64_t seed);

std::string history_csv(std::span<const EpochStats> history);

// ---- persistence ------------------------------------------------------------------------

struct SavedModel {
  ModelParams params;
  std::vector<std::string> trained_classes;
};

std::string model_to_json(const SavedModel& m);
SavedModel model_from_json(const std::string& text);
void save_model(const SavedModel& m, const std::filesystem::path& file);
SavedModel load_model(const std::filesystem::path& file);

std::string train_config_to_json(const TrainConfig& cfg);
/// Overrides every field present in `text` (a JSON object) on top of `base`.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

// ---- utilities ------------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; callers write results into per-index slots.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace mgalign
