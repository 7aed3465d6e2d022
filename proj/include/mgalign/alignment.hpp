#pragma once

// Multi-granularity video embedding conditioned on one candidate class.
//
//   T_hat   = Attention(T Wq, [S_n Wk]_n, [S_n Wv]_n) + T        (augmented global tokens)
//   a^c_l   = sum_m softmax_l(cos(T_hat_m, v_l))                (coarse importance)
//   a^f_l   = softmax_l(max_n mean_{s in S_n} cos(s, v_l))      (fine importance)
//   o^c     = sum_l a^c_l v_l,   o^f = sum_l a^f_l v_l
//   o       = FFN^c(o^c) + FFN^f(o^f)
//   score_c = cos(t_c, o)
//
// Every forward stage returns a trace holding the intermediates that the
// reverse pass in training.hpp consumes.

#include "mgalign/embedding_store.hpp"

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mgalign {

enum class Variant {
  Baseline,  // FFN^c(mean of frames)
  Coarse,    // FFN^c(o^c)
  Fine,      // FFN^f(o^f)
  Full,      // FFN^c(o^c) + FFN^f(o^f)
};

enum class CoarseForm {
  Softmax,  // per-token softmax over frames
  Literal,  // exp(sim) / sum_l' sim, as typeset; not a distribution
};

enum class Activation { Relu, Tanh, Gelu };

std::string to_string(Variant v);
Variant parse_variant(std::string_view s);
std::string to_string(CoarseForm f);
CoarseForm parse_coarse_form(std::string_view s);
std::string to_string(Activation a);
Activation parse_activation(std::string_view s);

inline bool uses_coarse_branch(Variant v) { return v == Variant::Coarse || v == Variant::Full; }
inline bool uses_fine_branch(Variant v) { return v == Variant::Fine || v == Variant::Full; }
inline bool uses_attention(Variant v) { return uses_coarse_branch(v); }

double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

/// y = weight * x + bias
struct Linear {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Affine map, or affine -> activation -> affine when `second` is set.
struct FeedForward {
  Linear first;
  std::optional<Linear> second;
  Activation activation = Activation::Relu;

  Vec operator()(const Vec& x) const;
  static FeedForward identity(int dim);
};

struct AttentionParams {
  Mat wq, wk, wv;  // D x D, applied on the right: Q = T * wq
  int heads = 1;
};

struct FusionParams {
  FeedForward coarse;
  FeedForward fine;
};

struct PipelineOptions {
  Variant variant = Variant::Full;
  CoarseForm coarse_form = CoarseForm::Softmax;
};

struct ModelParams {
  AttentionParams attention;
  FusionParams fusion;
  double tau = 0.05;
  double lambda = 1.0;
  PipelineOptions options;

  int dim() const { return static_cast<int>(attention.wq.rows()); }
};

struct InitOptions {
  int hidden = 0;  // 0 => affine FFNs
  Activation activation = Activation::Relu;
  int heads = 1;
  double ffn_noise = 1e-2;  // std of the perturbation around identity, scaled by 1/sqrt(D)
};

/// Attention ~ U(+-1/sqrt(D)); affine FFNs = identity + noise, zero bias.
ModelParams init_params(int dim, const InitOptions& opts, std::mt19937_64& rng);

/// Zero attention projections and exact identity FFNs.
ModelParams identity_params(int dim);

struct ImportanceProfile {
  Vec coarse;  // empty when the variant has no coarse branch
  Vec fine;    // empty when the variant has no fine branch
};

// ---- attention ------------------------------------------------------------

struct AttentionTrace {
  Mat out;                   // M x D
  std::vector<Mat> weights;  // per head, M x P
};

AttentionTrace attention_forward(const Mat& q, const Mat& k, const Mat& v, int heads);

/// Single-head scaled dot-product attention, softmax(QK^T / sqrt(D)) V.
Mat cross_attention(const Mat& q, const Mat& k, const Mat& v);

struct AugmentedText {
  Mat t_hat;    // M x D
  Mat tokens;   // T, M x D
  Mat sources;  // concatenated sub-text tokens, P x D
  Mat queries, keys, values;
  std::vector<Mat> weights;
};

AugmentedText augment_text(const TextTokens& global, std::span<const TextTokens> subtexts,
                           const AttentionParams& p);
Mat augment_global_text(const TextTokens& global, std::span<const TextTokens> subtexts,
                        const AttentionParams& p);

// ---- frame weighting -------------------------------------------------------

struct CoarseTrace {
  Vec weights;       // L
  Mat sims;          // M x L cosine similarities
  Mat probs;         // M x L per-token contributions to weights
  Vec token_norms;   // M
  Mat tokens_unit;   // M x D
  Vec denominators;  // M, Literal form only
};

CoarseTrace coarse_trace(const Mat& t_hat, const Mat& frames_unit, CoarseForm form);
Vec coarse_importance(const Mat& t_hat, const Mat& frames,
                      CoarseForm form = CoarseForm::Softmax);

/// Sum_l a_l v_l. Both coarse and fine embeddings are this weighted sum.
Vec weighted_frame_sum(const Mat& frames, const Vec& a);
inline Vec coarse_embedding(const Mat& frames, const Vec& a) { return weighted_frame_sum(frames, a); }
inline Vec fine_embedding(const Mat& frames, const Vec& a) { return weighted_frame_sum(frames, a); }

/// Row n = mean of the unit-normalized tokens of sub-text n, so that
/// mean_s cos(s, v) = row_n . v/|v|.
Mat fine_queries(std::span<const TextTokens> subtexts);
Vec fine_importance_from_queries(const Mat& queries, const Mat& frames_unit);
Vec fine_importance(std::span<const TextTokens> subtexts, const Mat& frames);

Vec mean_pool_baseline(const Mat& frames);

// ---- fusion ----------------------------------------------------------------

struct FeedForwardTrace {
  Vec input;
  Vec pre;     // first-layer output before activation (hidden FFNs only)
  Vec hidden;  // after activation (hidden FFNs only)
  Vec output;
};

FeedForwardTrace feed_forward_trace(const FeedForward& f, const Vec& x);
Vec fuse(const Vec& o_coarse, const Vec& o_fine, const FusionParams& p);

// ---- full pipeline ----------------------------------------------------------

/// Per-class quantities that do not depend on the video.
struct PreparedClass {
  AugmentedText augmented;  // empty unless the variant uses the coarse branch
  Mat fine_queries;         // empty unless the variant uses the fine branch
  Vec summary;              // t_c
};

PreparedClass prepare_class(const ClassTextBundle& bundle, const ModelParams& p);
std::vector<PreparedClass> prepare_classes(std::span<const ClassTextBundle> classes,
                                           const ModelParams& p);

/// Fine-branch output; parameter independent, so training caches it.
struct FineResult {
  Vec weights;
  Vec embedding;
};

FineResult fine_branch(const Mat& frames, const Mat& frames_unit, const PreparedClass& pc);

struct PairTrace {
  Vec o_coarse;
  Vec o_fine;
  Vec o;
  ImportanceProfile profile;
  CoarseTrace coarse;
  FeedForwardTrace ffn_coarse;
  FeedForwardTrace ffn_fine;
  double cosine = 0.0;  // cos(t_c, o)
};

PairTrace forward_pair(const Mat& frames, const Mat& frames_unit, const PreparedClass& pc,
                       const ModelParams& p, const FineResult* cached_fine = nullptr);

struct VideoEmbedding {
  Vec o;
  ImportanceProfile profile;
};

VideoEmbedding video_embedding(const FrameEmbeddings& video, const ClassTextBundle& bundle,
                               const ModelParams& p);

struct Classification {
  Vec scores;  // one cosine per class
  int predicted = 0;
};

Classification classify(const FrameEmbeddings& video, std::span<const ClassTextBundle> classes,
                        const ModelParams& p);
Classification classify_prepared(const Mat& frames, std::span<const PreparedClass> classes,
                                 const ModelParams& p);

/// Index of the largest entry, lowest index on ties.
int argmax_lowest(const Vec& scores);

}  // namespace mgalign
