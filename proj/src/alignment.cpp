#include "mgalign/alignment.hpp"

#include "mgalign/errors.hpp"
#include "mgalign/subtext_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace mgalign {

namespace {

constexpr std::string_view kModule = "alignment_core";

[[noreturn]] void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, kModule, detail);
}

void require_cols(const Mat& m, Eigen::Index dim, const char* what) {
  if (m.cols() != dim) {
    fail(ErrorKind::DimMismatch, std::string(what) + " has " + std::to_string(m.cols()) +
                                     " columns, expected " + std::to_string(dim));
  }
}

Mat stack_tokens(std::span<const TextTokens> texts, Eigen::Index dim) {
  Eigen::Index rows = 0;
  for (const auto& t : texts) {
    require_cols(t.tokens, dim, "sub-text token matrix");
    rows += t.tokens.rows();
  }
  Mat out(rows, dim);
  Eigen::Index at = 0;
  for (const auto& t : texts) {
    out.middleRows(at, t.tokens.rows()) = t.tokens;
    at += t.tokens.rows();
  }
  return out;
}

// Sums in sorted order so the result does not depend on element order. Frame
// permutations then permute the importance weights bit for bit.
template <typename V>
double order_free_sum(const V& v) {
  std::vector<double> xs(v.begin(), v.end());
  std::sort(xs.begin(), xs.end());
  double total = 0.0;
  for (double x : xs) total += x;
  return total;
}

// Scalar exp for every element. Eigen's packet exp can differ from the scalar
// tail by an ulp, which would make a frame's weight depend on its position.
double scalar_exp(double x) { return std::exp(x); }

// Left-to-right dot product. Eigen's vectorized dot splits off an unaligned
// head, so its rounding depends on where a row sits in memory.
template <typename A, typename B>
double plain_dot(const A& a, const B& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a(i) * b(i);
  return s;
}

// Numerically stable softmax of a row vector in place.
template <typename Row>
void softmax_inplace(Row&& row) {
  const double mx = row.maxCoeff();
  row = (row.array() - mx).unaryExpr(&scalar_exp);
  row /= order_free_sum(row);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

// ---- enums -------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Coarse: return "coarse";
    case Variant::Fine: return "fine";
    case Variant::Full: return "full";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "coarse") return Variant::Coarse;
  if (s == "fine") return Variant::Fine;
  if (s == "full") return Variant::Full;
  fail(ErrorKind::InvalidConfig, "unknown variant '" + std::string(s) + "'");
}

std::string to_string(CoarseForm f) { return f == CoarseForm::Softmax ? "softmax" : "literal"; }

CoarseForm parse_coarse_form(std::string_view s) {
  if (s == "softmax") return CoarseForm::Softmax;
  if (s == "literal") return CoarseForm::Literal;
  fail(ErrorKind::InvalidConfig, "unknown coarse form '" + std::string(s) + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Gelu: return "gelu";
  }
  return "relu";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "gelu") return Activation::Gelu;
  fail(ErrorKind::InvalidConfig, "unknown activation '" + std::string(s) + "'");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Gelu: return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Gelu: {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 1.0;
}

// ---- parameters --------------------------------------------------------------

Vec FeedForward::operator()(const Vec& x) const { return feed_forward_trace(*this, x).output; }

FeedForward FeedForward::identity(int dim) {
  FeedForward f;
  f.first.weight = Mat::Identity(dim, dim);
  f.first.bias = Vec::Zero(dim);
  return f;
}

ModelParams identity_params(int dim) {
  ModelParams p;
  p.attention.wq = Mat::Zero(dim, dim);
  p.attention.wk = Mat::Zero(dim, dim);
  p.attention.wv = Mat::Zero(dim, dim);
  p.fusion.coarse = FeedForward::identity(dim);
  p.fusion.fine = FeedForward::identity(dim);
  return p;
}

ModelParams init_params(int dim, const InitOptions& opts, std::mt19937_64& rng) {
  if (dim < 1) fail(ErrorKind::DimMismatch, "dim must be >= 1");
  if (opts.heads < 1 || dim % opts.heads != 0) {
    fail(ErrorKind::DimMismatch, "dim " + std::to_string(dim) + " not divisible by " +
                                     std::to_string(opts.heads) + " heads");
  }
  ModelParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> uni(-bound, bound);
  auto uniform = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
    return m;
  };
  p.attention.wq = uniform(dim, dim);
  p.attention.wk = uniform(dim, dim);
  p.attention.wv = uniform(dim, dim);
  p.attention.heads = opts.heads;

  std::normal_distribution<double> gauss(0.0, opts.ffn_noise * bound);
  auto make_ffn = [&]() {
    FeedForward f;
    f.activation = opts.activation;
    if (opts.hidden <= 0) {
      f.first.weight = Mat::Identity(dim, dim);
      for (Eigen::Index i = 0; i < f.first.weight.size(); ++i) f.first.weight.data()[i] += gauss(rng);
      f.first.bias = Vec::Zero(dim);
    } else {
      // Xavier-uniform for both layers of the hidden variant.
      const double b1 = std::sqrt(6.0 / (dim + opts.hidden));
      std::uniform_real_distribution<double> u1(-b1, b1);
      f.first.weight = Mat(opts.hidden, dim);
      for (Eigen::Index i = 0; i < f.first.weight.size(); ++i) f.first.weight.data()[i] = u1(rng);
      f.first.bias = Vec::Zero(opts.hidden);
      Linear second;
      second.weight = Mat(dim, opts.hidden);
      for (Eigen::Index i = 0; i < second.weight.size(); ++i) second.weight.data()[i] = u1(rng);
      second.bias = Vec::Zero(dim);
      f.second = std::move(second);
    }
    return f;
  };
  p.fusion.coarse = make_ffn();
  p.fusion.fine = make_ffn();
  return p;
}

// ---- attention -----------------------------------------------------------------

AttentionTrace attention_forward(const Mat& q, const Mat& k, const Mat& v, int heads) {
  const Eigen::Index dim = q.cols();
  if (k.cols() != dim || v.cols() != dim) fail(ErrorKind::DimMismatch, "Q, K, V widths differ");
  if (k.rows() != v.rows()) fail(ErrorKind::DimMismatch, "K and V row counts differ");
  if (k.rows() < 1) fail(ErrorKind::DimMismatch, "attention needs at least one key row");
  if (heads < 1 || dim % heads != 0) fail(ErrorKind::DimMismatch, "width not divisible by head count");

  const Eigen::Index hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  AttentionTrace t;
  t.out = Mat::Zero(q.rows(), dim);
  t.weights.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * hd;
    Mat w = (q.middleCols(off, hd) * k.middleCols(off, hd).transpose()) * scale;
    for (Eigen::Index r = 0; r < w.rows(); ++r) softmax_inplace(w.row(r));
    t.out.middleCols(off, hd) = w * v.middleCols(off, hd);
    t.weights.push_back(std::move(w));
  }
  return t;
}

Mat cross_attention(const Mat& q, const Mat& k, const Mat& v) {
  return attention_forward(q, k, v, 1).out;
}

AugmentedText augment_text(const TextTokens& global, std::span<const TextTokens> subtexts,
                           const AttentionParams& p) {
  if (subtexts.empty()) fail(ErrorKind::EmptySubtexts, "global-text augmentation needs sub-texts");
  const Eigen::Index dim = p.wq.rows();
  require_cols(global.tokens, dim, "global token matrix");
  AugmentedText a;
  a.tokens = global.tokens;
  a.sources = stack_tokens(subtexts, dim);
  a.queries = a.tokens * p.wq;
  a.keys = a.sources * p.wk;
  a.values = a.sources * p.wv;
  auto att = attention_forward(a.queries, a.keys, a.values, p.heads);
  a.t_hat = att.out + a.tokens;
  a.weights = std::move(att.weights);
  return a;
}

Mat augment_global_text(const TextTokens& global, std::span<const TextTokens> subtexts,
                        const AttentionParams& p) {
  return augment_text(global, subtexts, p).t_hat;
}

// ---- frame weighting --------------------------------------------------------------

CoarseTrace coarse_trace(const Mat& t_hat, const Mat& frames_unit, CoarseForm form) {
  require_cols(frames_unit, t_hat.cols(), "frame matrix");
  if (frames_unit.rows() < 1) fail(ErrorKind::DimMismatch, "video has no frames");
  CoarseTrace t;
  t.token_norms = t_hat.rowwise().norm();
  if (!(t.token_norms.minCoeff() > 0.0)) fail(ErrorKind::ZeroVector, "augmented token with zero norm");
  t.tokens_unit = t.token_norms.cwiseInverse().asDiagonal() * t_hat;
  t.sims.resize(t_hat.rows(), frames_unit.rows());
  for (Eigen::Index l = 0; l < frames_unit.rows(); ++l)
    for (Eigen::Index m = 0; m < t_hat.rows(); ++m) t.sims(m, l) = plain_dot(t.tokens_unit.row(m), frames_unit.row(l));
  if (form == CoarseForm::Softmax) {
    t.probs = t.sims;
    for (Eigen::Index m = 0; m < t.probs.rows(); ++m) softmax_inplace(t.probs.row(m));
  } else {
    t.denominators.resize(t.sims.rows());
    for (Eigen::Index m = 0; m < t.sims.rows(); ++m) t.denominators(m) = order_free_sum(t.sims.row(m));
    t.probs = t.denominators.cwiseInverse().asDiagonal() * t.sims.unaryExpr(&scalar_exp);
  }
  t.weights = Vec::Zero(t.probs.cols());
  for (Eigen::Index m = 0; m < t.probs.rows(); ++m)
    for (Eigen::Index l = 0; l < t.probs.cols(); ++l) t.weights(l) += t.probs(m, l);
  return t;
}

Vec coarse_importance(const Mat& t_hat, const Mat& frames, CoarseForm form) {
  require_cols(frames, t_hat.cols(), "frame matrix");
  return coarse_trace(t_hat, normalize_rows(frames), form).weights;
}

Vec weighted_frame_sum(const Mat& frames, const Vec& a) {
  if (a.size() != frames.rows()) {
    fail(ErrorKind::DimMismatch, "weight vector length " + std::to_string(a.size()) + " vs " +
                                     std::to_string(frames.rows()) + " frames");
  }
  return frames.transpose() * a;
}

Mat fine_queries(std::span<const TextTokens> subtexts) {
  if (subtexts.empty()) fail(ErrorKind::EmptySubtexts, "fine importance needs sub-texts");
  const Eigen::Index dim = subtexts.front().tokens.cols();
  Mat q(static_cast<Eigen::Index>(subtexts.size()), dim);
  for (std::size_t n = 0; n < subtexts.size(); ++n) {
    const auto& tok = subtexts[n].tokens;
    require_cols(tok, dim, "sub-text token matrix");
    if (tok.rows() < 1) fail(ErrorKind::EmptySubtexts, "sub-text without tokens");
    q.row(static_cast<Eigen::Index>(n)) = normalize_rows(tok).colwise().mean();
  }
  return q;
}

Vec fine_importance_from_queries(const Mat& queries, const Mat& frames_unit) {
  require_cols(frames_unit, queries.cols(), "frame matrix");
  if (frames_unit.rows() < 1) fail(ErrorKind::DimMismatch, "video has no frames");
  Eigen::RowVectorXd best(frames_unit.rows());
  for (Eigen::Index l = 0; l < frames_unit.rows(); ++l) {
    best(l) = plain_dot(queries.row(0), frames_unit.row(l));
    for (Eigen::Index n = 1; n < queries.rows(); ++n) best(l) = std::max(best(l), plain_dot(queries.row(n), frames_unit.row(l)));
  }
  softmax_inplace(best);
  return best.transpose();
}

Vec fine_importance(std::span<const TextTokens> subtexts, const Mat& frames) {
  const Mat q = fine_queries(subtexts);
  require_cols(frames, q.cols(), "frame matrix");
  return fine_importance_from_queries(q, normalize_rows(frames));
}

Vec mean_pool_baseline(const Mat& frames) {
  if (frames.rows() < 1) fail(ErrorKind::DimMismatch, "video has no frames");
  return frames.colwise().mean().transpose();
}

// ---- fusion ----------------------------------------------------------------------

FeedForwardTrace feed_forward_trace(const FeedForward& f, const Vec& x) {
  if (f.first.weight.cols() != x.size()) fail(ErrorKind::DimMismatch, "feedforward input width");
  FeedForwardTrace t;
  t.input = x;
  Vec y = f.first.weight * x + f.first.bias;
  if (!f.second) {
    t.output = std::move(y);
    return t;
  }
  t.pre = std::move(y);
  t.hidden = t.pre.unaryExpr([&](double z) { return activate(f.activation, z); });
  t.output = f.second->weight * t.hidden + f.second->bias;
  return t;
}

Vec fuse(const Vec& o_coarse, const Vec& o_fine, const FusionParams& p) {
  if (o_coarse.size() != o_fine.size()) fail(ErrorKind::DimMismatch, "coarse and fine widths differ");
  return p.coarse(o_coarse) + p.fine(o_fine);
}

// ---- pipeline --------------------------------------------------------------------------

PreparedClass prepare_class(const ClassTextBundle& bundle, const ModelParams& p) {
  PreparedClass pc;
  const Variant v = p.options.variant;
  if (bundle.global.summary.size() != p.dim()) {
    fail(ErrorKind::DimMismatch, "class '" + bundle.class_name + "' summary has length " +
                                     std::to_string(bundle.global.summary.size()));
  }
  pc.summary = bundle.global.summary;
  if (uses_coarse_branch(v)) pc.augmented = augment_text(bundle.global, bundle.subtexts, p.attention);
  if (uses_fine_branch(v)) pc.fine_queries = fine_queries(bundle.subtexts);
  return pc;
}

std::vector<PreparedClass> prepare_classes(std::span<const ClassTextBundle> classes,
                                           const ModelParams& p) {
  std::vector<PreparedClass> out;
  out.reserve(classes.size());
  for (const auto& b : classes) out.push_back(prepare_class(b, p));
  return out;
}

FineResult fine_branch(const Mat& frames, const Mat& frames_unit, const PreparedClass& pc) {
  FineResult r;
  r.weights = fine_importance_from_queries(pc.fine_queries, frames_unit);
  r.embedding = weighted_frame_sum(frames, r.weights);
  return r;
}

PairTrace forward_pair(const Mat& frames, const Mat& frames_unit, const PreparedClass& pc,
                       const ModelParams& p, const FineResult* cached_fine) {
  require_cols(frames, p.dim(), "frame matrix");
  const Variant v = p.options.variant;
  PairTrace t;
  Vec o = Vec::Zero(p.dim());
  if (v == Variant::Baseline) {
    t.o_coarse = mean_pool_baseline(frames);
    t.ffn_coarse = feed_forward_trace(p.fusion.coarse, t.o_coarse);
    o += t.ffn_coarse.output;
  }
  if (uses_coarse_branch(v)) {
    t.coarse = coarse_trace(pc.augmented.t_hat, frames_unit, p.options.coarse_form);
    t.profile.coarse = t.coarse.weights;
    t.o_coarse = weighted_frame_sum(frames, t.coarse.weights);
    t.ffn_coarse = feed_forward_trace(p.fusion.coarse, t.o_coarse);
    o += t.ffn_coarse.output;
  }
  if (uses_fine_branch(v)) {
    FineResult fine = cached_fine ? *cached_fine : fine_branch(frames, frames_unit, pc);
    t.profile.fine = std::move(fine.weights);
    t.o_fine = std::move(fine.embedding);
    t.ffn_fine = feed_forward_trace(p.fusion.fine, t.o_fine);
    o += t.ffn_fine.output;
  }
  t.o = std::move(o);
  t.cosine = cosine_sim(pc.summary, t.o);
  return t;
}

VideoEmbedding video_embedding(const FrameEmbeddings& video, const ClassTextBundle& bundle,
                               const ModelParams& p) {
  const PreparedClass pc = prepare_class(bundle, p);
  auto t = forward_pair(video.frames, normalize_rows(video.frames), pc, p);
  return {std::move(t.o), std::move(t.profile)};
}

int argmax_lowest(const Vec& scores) {
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

Classification classify_prepared(const Mat& frames, std::span<const PreparedClass> classes,
                                 const ModelParams& p) {
  if (classes.empty()) fail(ErrorKind::EmptyClassList, "no candidate classes");
  const Mat unit = normalize_rows(frames);
  Classification c;
  c.scores.resize(static_cast<Eigen::Index>(classes.size()));
  for (std::size_t k = 0; k < classes.size(); ++k) {
    c.scores[static_cast<Eigen::Index>(k)] = forward_pair(frames, unit, classes[k], p).cosine;
  }
  c.predicted = argmax_lowest(c.scores);
  return c;
}

Classification classify(const FrameEmbeddings& video, std::span<const ClassTextBundle> classes,
                        const ModelParams& p) {
  if (classes.empty()) fail(ErrorKind::EmptyClassList, "no candidate classes");
  const auto prepared = prepare_classes(classes, p);
  return classify_prepared(video.frames, prepared, p);
}

}  // namespace mgalign
