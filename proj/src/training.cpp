#include "mgalign/training.hpp"

#include "json.hpp"
#include "mgalign/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace mgalign {

using nlohmann::json;

namespace {

constexpr std::string_view kModule = "training";

[[noreturn]] void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, kModule, detail);
}

std::span<double> view(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> view(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void append_ffn(std::vector<NamedTensor>& out, const std::string& prefix, FeedForward& f) {
  out.push_back({prefix + ".first.weight", view(f.first.weight)});
  out.push_back({prefix + ".first.bias", view(f.first.bias)});
  if (f.second) {
    out.push_back({prefix + ".second.weight", view(f.second->weight)});
    out.push_back({prefix + ".second.bias", view(f.second->bias)});
  }
}

std::vector<NamedTensor> tensors_of(AttentionParams& a, FusionParams& f) {
  std::vector<NamedTensor> out;
  out.push_back({"attention.wq", view(a.wq)});
  out.push_back({"attention.wk", view(a.wk)});
  out.push_back({"attention.wv", view(a.wv)});
  append_ffn(out, "fusion.coarse", f.coarse);
  append_ffn(out, "fusion.fine", f.fine);
  return out;
}

bool is_weight_tensor(const std::string& name) { return !name.ends_with(".bias"); }

FeedForward zeros_like(const FeedForward& f) {
  FeedForward z;
  z.activation = f.activation;
  z.first.weight = Mat::Zero(f.first.weight.rows(), f.first.weight.cols());
  z.first.bias = Vec::Zero(f.first.bias.size());
  if (f.second) {
    z.second = Linear{Mat::Zero(f.second->weight.rows(), f.second->weight.cols()),
                      Vec::Zero(f.second->bias.size())};
  }
  return z;
}

void add_into(FeedForward& acc, const FeedForward& g) {
  acc.first.weight += g.first.weight;
  acc.first.bias += g.first.bias;
  if (acc.second) {
    acc.second->weight += g.second->weight;
    acc.second->bias += g.second->bias;
  }
}

void check_labels(const Mat& y, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != y.rows()) {
    fail(ErrorKind::ShapeMismatch, "logit rows " + std::to_string(y.rows()) + " vs " +
                                       std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= y.cols()) fail(ErrorKind::ShapeMismatch, "label " + std::to_string(l) + " out of range");
  }
}

template <typename V>
double log_sum_exp(const V& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

template <typename V>
Vec softmax_of(const V& v) {
  const double mx = v.maxCoeff();
  Vec e = (v.array() - mx).exp();
  return e / e.sum();
}

std::vector<int> label_counts(std::span<const int> labels, Eigen::Index classes) {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

// Reverse pass of feed_forward_trace. Accumulates parameter gradients into
// `grad` and returns the gradient with respect to the input.
Vec ffn_backward(const FeedForward& f, const FeedForwardTrace& t, const Vec& gy, FeedForward& grad) {
  if (!f.second) {
    grad.first.weight.noalias() += gy * t.input.transpose();
    grad.first.bias += gy;
    return f.first.weight.transpose() * gy;
  }
  grad.second->weight.noalias() += gy * t.hidden.transpose();
  grad.second->bias += gy;
  const Vec dh = f.second->weight.transpose() * gy;
  Vec dz(dh.size());
  for (Eigen::Index i = 0; i < dz.size(); ++i) dz[i] = dh[i] * activate_derivative(f.activation, t.pre[i]);
  grad.first.weight.noalias() += dz * t.input.transpose();
  grad.first.bias += dz;
  return f.first.weight.transpose() * dz;
}

// Gradient of the coarse weights with respect to the augmented tokens.
Mat coarse_backward(const CoarseTrace& t, const Vec& da, const Mat& frames_unit, CoarseForm form) {
  const Eigen::Index tokens = t.probs.rows();
  Mat ds(tokens, t.probs.cols());
  for (Eigen::Index m = 0; m < tokens; ++m) {
    const double mixed = t.probs.row(m).dot(da.transpose());
    if (form == CoarseForm::Softmax) {
      ds.row(m) = t.probs.row(m).cwiseProduct(da.transpose().array().matrix() -
                                              Eigen::RowVectorXd::Constant(da.size(), mixed));
    } else {
      ds.row(m) = t.probs.row(m).cwiseProduct(da.transpose()) -
                  Eigen::RowVectorXd::Constant(da.size(), mixed / t.denominators[m]);
    }
  }
  const Mat du = ds * frames_unit;  // gradient w.r.t. unit tokens
  Mat dt(tokens, du.cols());
  for (Eigen::Index m = 0; m < tokens; ++m) {
    const auto u = t.tokens_unit.row(m);
    dt.row(m) = (du.row(m) - du.row(m).dot(u) * u) / t.token_norms[m];
  }
  return dt;
}

// Reverse pass of augment_text given dL/dT_hat; accumulates into `grad`.
void attention_backward(const AugmentedText& a, const Mat& dt_hat, int heads, AttentionParams& grad) {
  const Eigen::Index dim = a.queries.cols();
  const Eigen::Index hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat dq = Mat::Zero(a.queries.rows(), dim);
  Mat dk = Mat::Zero(a.keys.rows(), dim);
  Mat dv = Mat::Zero(a.values.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * hd;
    const Mat& w = a.weights[static_cast<std::size_t>(h)];
    const Mat dout = dt_hat.middleCols(off, hd);
    dv.middleCols(off, hd) = w.transpose() * dout;
    const Mat dw = dout * a.values.middleCols(off, hd).transpose();
    const Vec rows = (dw.cwiseProduct(w)).rowwise().sum();
    const Mat dz = w.cwiseProduct(dw - rows.replicate(1, dw.cols()));
    dq.middleCols(off, hd) = dz * a.keys.middleCols(off, hd) * scale;
    dk.middleCols(off, hd) = dz.transpose() * a.queries.middleCols(off, hd) * scale;
  }
  grad.wq.noalias() += a.tokens.transpose() * dq;
  grad.wk.noalias() += a.sources.transpose() * dk;
  grad.wv.noalias() += a.sources.transpose() * dv;
}

bool finite(GradientSet& g) {
  for (const auto& t : gradient_tensors(g)) {
    for (double x : t.values) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

// ---- json helpers -----------------------------------------------------------------------

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vec_to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Mat mat_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::ShapeMismatch, where + ": expected a non-empty matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) fail(ErrorKind::ShapeMismatch, where + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Vec vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json ffn_to_json(const FeedForward& f) {
  json layers = json::array();
  layers.push_back({{"weight", mat_to_json(f.first.weight)}, {"bias", vec_to_json(f.first.bias)}});
  if (f.second) {
    layers.push_back({{"weight", mat_to_json(f.second->weight)}, {"bias", vec_to_json(f.second->bias)}});
  }
  return {{"activation", to_string(f.activation)}, {"layers", std::move(layers)}};
}

FeedForward ffn_from_json(const json& j, const std::string& where) {
  FeedForward f;
  f.activation = parse_activation(j.at("activation").get<std::string>());
  const auto& layers = j.at("layers");
  if (layers.empty() || layers.size() > 2) fail(ErrorKind::ShapeMismatch, where + ": expected 1 or 2 layers");
  f.first = {mat_from_json(layers[0].at("weight"), where), vec_from_json(layers[0].at("bias"))};
  if (layers.size() == 2) {
    f.second = Linear{mat_from_json(layers[1].at("weight"), where), vec_from_json(layers[1].at("bias"))};
  }
  return f;
}

}  // namespace

// ---- tensors ----------------------------------------------------------------------------

GradientSet zeros_like(const ModelParams& p) {
  GradientSet g;
  const auto d = p.attention.wq.rows();
  g.attention.wq = Mat::Zero(d, p.attention.wq.cols());
  g.attention.wk = Mat::Zero(p.attention.wk.rows(), p.attention.wk.cols());
  g.attention.wv = Mat::Zero(p.attention.wv.rows(), p.attention.wv.cols());
  g.attention.heads = p.attention.heads;
  g.fusion.coarse = zeros_like(p.fusion.coarse);
  g.fusion.fine = zeros_like(p.fusion.fine);
  return g;
}

std::vector<NamedTensor> parameter_tensors(ModelParams& p) { return tensors_of(p.attention, p.fusion); }
std::vector<NamedTensor> gradient_tensors(GradientSet& g) { return tensors_of(g.attention, g.fusion); }

std::size_t parameter_count(const ModelParams& p) {
  auto copy = p;
  std::size_t n = 0;
  for (const auto& t : parameter_tensors(copy)) n += t.values.size();
  return n;
}

std::vector<int> Batch::labels() const {
  std::vector<int> out;
  out.reserve(videos.size());
  for (const auto* v : videos) out.push_back(v->label());
  return out;
}

Batch make_batch(const EmbeddingDataset& ds, std::span<const int> indices) {
  Batch b;
  for (int i : indices) {
    if (i < 0 || i >= ds.num_videos()) fail(ErrorKind::ShapeMismatch, "video index out of range");
    b.videos.push_back(&ds.videos[static_cast<std::size_t>(i)]);
  }
  return b;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min(threads, n);
  pool.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- losses -----------------------------------------------------------------------------

Mat compute_logits(const Batch& batch, std::span<const ClassTextBundle> classes, const ModelParams& p) {
  if (classes.empty()) fail(ErrorKind::ShapeMismatch, "no classes");
  if (!(p.tau > 0.0)) fail(ErrorKind::ShapeMismatch, "tau must be > 0");
  const auto prepared = prepare_classes(classes, p);
  Mat y(batch.size(), static_cast<Eigen::Index>(classes.size()));
  for (int b = 0; b < batch.size(); ++b) {
    const Mat& frames = batch.videos[static_cast<std::size_t>(b)]->frames;
    const Mat unit = normalize_rows(frames);
    for (std::size_t c = 0; c < prepared.size(); ++c) {
      y(b, static_cast<Eigen::Index>(c)) = forward_pair(frames, unit, prepared[c], p).cosine / p.tau;
    }
  }
  return y;
}

LossGradient loss_with_gradient(const Mat& y, std::span<const int> labels, double lambda) {
  check_labels(y, labels);
  const Eigen::Index batch = y.rows();
  const auto counts = label_counts(labels, y.cols());
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossGradient out;
  out.dlogits = Mat::Zero(y.rows(), y.cols());

  // Per-column and per-row normalizers are shared by every term that uses them.
  Vec col_lse(y.cols());
  std::vector<Vec> col_soft(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    col_lse[c] = log_sum_exp(y.col(c));
    col_soft[static_cast<std::size_t>(c)] = softmax_of(y.col(c));
  }
  Vec row_lse(batch);
  std::vector<Vec> row_soft(static_cast<std::size_t>(batch));
  for (Eigen::Index b = 0; b < batch; ++b) {
    row_lse[b] = log_sum_exp(y.row(b));
    row_soft[static_cast<std::size_t>(b)] = softmax_of(y.row(b).transpose());
  }

  double t2v = 0.0;
  double v2t = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int c = labels[static_cast<std::size_t>(b)];
    const double w = inv_b / counts[static_cast<std::size_t>(c)];
    double inner_t2v = 0.0;
    double inner_v2t = 0.0;
    for (Eigen::Index bp = 0; bp < batch; ++bp) {
      if (labels[static_cast<std::size_t>(bp)] != c) continue;
      inner_t2v += y(bp, c) - col_lse[c];
      inner_v2t += y(bp, c) - row_lse[bp];
      // t2v: d/dy(bp, c) of -(w)(y(bp,c) - lse(col c))
      out.dlogits(bp, c) -= w;
      out.dlogits.col(c) += w * col_soft[static_cast<std::size_t>(c)];
      // v2t: d/dy(bp, .) of -(w)(y(bp,c) - lse(row bp))
      out.dlogits(bp, c) -= lambda * w;
      out.dlogits.row(bp) += lambda * w * row_soft[static_cast<std::size_t>(bp)].transpose();
    }
    t2v += inner_t2v / counts[static_cast<std::size_t>(c)];
    v2t += inner_v2t / counts[static_cast<std::size_t>(c)];
  }
  out.t2v = -t2v * inv_b;
  out.v2t = -v2t * inv_b;
  out.total = out.t2v + lambda * out.v2t;
  return out;
}

double loss_t2v(const Mat& y, std::span<const int> labels) { return loss_with_gradient(y, labels, 0.0).t2v; }
double loss_v2t(const Mat& y, std::span<const int> labels) { return loss_with_gradient(y, labels, 0.0).v2t; }

double total_loss(const Mat& y, std::span<const int> labels, double lambda) {
  return loss_with_gradient(y, labels, lambda).total;
}

// ---- reverse pass -------------------------------------------------------------------------

BackwardResult backward(const Batch& batch, std::span<const ClassTextBundle> classes,
                        const ModelParams& p, const BackwardOptions& opts) {
  if (classes.empty()) fail(ErrorKind::ShapeMismatch, "no classes");
  if (batch.size() < 1) fail(ErrorKind::ShapeMismatch, "empty batch");
  if (!(p.tau > 0.0)) fail(ErrorKind::ShapeMismatch, "tau must be > 0");
  if (opts.fine_cache && static_cast<int>(opts.cache_rows.size()) != batch.size()) {
    fail(ErrorKind::ShapeMismatch, "fine cache rows do not match the batch");
  }
  const Variant variant = p.options.variant;
  const int num_videos = batch.size();
  const int num_classes = static_cast<int>(classes.size());
  const auto prepared = prepare_classes(classes, p);

  // Forward.
  std::vector<Mat> units(static_cast<std::size_t>(num_videos));
  std::vector<std::vector<PairTrace>> traces(static_cast<std::size_t>(num_videos));
  parallel_for(num_videos, opts.threads, [&](int b) {
    const Mat& frames = batch.videos[static_cast<std::size_t>(b)]->frames;
    units[static_cast<std::size_t>(b)] = normalize_rows(frames);
    auto& row = traces[static_cast<std::size_t>(b)];
    row.reserve(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
      const FineResult* cached = nullptr;
      if (opts.fine_cache && uses_fine_branch(variant)) {
        cached = &(*opts.fine_cache)[static_cast<std::size_t>(opts.cache_rows[static_cast<std::size_t>(b)])]
                                    [static_cast<std::size_t>(c)];
      }
      row.push_back(forward_pair(frames, units[static_cast<std::size_t>(b)], prepared[static_cast<std::size_t>(c)], p, cached));
    }
  });

  BackwardResult result;
  result.logits.resize(num_videos, num_classes);
  for (int b = 0; b < num_videos; ++b) {
    for (int c = 0; c < num_classes; ++c) {
      result.logits(b, c) = traces[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)].cosine / p.tau;
    }
  }
  const auto labels = batch.labels();
  const auto lg = loss_with_gradient(result.logits, labels, p.lambda);
  result.loss = lg.total;
  result.loss_t2v = lg.t2v;
  result.loss_v2t = lg.v2t;

  // Per-video reverse pass into private slots, reduced below in video order so
  // the result does not depend on the worker count.
  struct Partial {
    FusionParams fusion;
    std::vector<Mat> dt_hat;  // per class
  };
  std::vector<Partial> partials(static_cast<std::size_t>(num_videos));
  parallel_for(num_videos, opts.threads, [&](int b) {
    auto& part = partials[static_cast<std::size_t>(b)];
    part.fusion.coarse = zeros_like(p.fusion.coarse);
    part.fusion.fine = zeros_like(p.fusion.fine);
    if (uses_attention(variant)) part.dt_hat.resize(static_cast<std::size_t>(num_classes));
    const Mat& frames = batch.videos[static_cast<std::size_t>(b)]->frames;
    for (int c = 0; c < num_classes; ++c) {
      const auto& tr = traces[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
      const auto& pc = prepared[static_cast<std::size_t>(c)];
      const double gy = lg.dlogits(b, c) / p.tau;
      const double onorm = tr.o.norm();
      const Vec o_unit = tr.o / onorm;
      const Vec t_unit = pc.summary / pc.summary.norm();
      const double cosv = t_unit.dot(o_unit);
      const Vec go = gy * (t_unit - cosv * o_unit) / onorm;

      if (variant == Variant::Baseline) {
        ffn_backward(p.fusion.coarse, tr.ffn_coarse, go, part.fusion.coarse);
      }
      if (uses_coarse_branch(variant)) {
        const Vec d_oc = ffn_backward(p.fusion.coarse, tr.ffn_coarse, go, part.fusion.coarse);
        const Vec da = frames * d_oc;
        part.dt_hat[static_cast<std::size_t>(c)] =
            coarse_backward(tr.coarse, da, units[static_cast<std::size_t>(b)], p.options.coarse_form);
      }
      if (uses_fine_branch(variant)) {
        ffn_backward(p.fusion.fine, tr.ffn_fine, go, part.fusion.fine);
      }
    }
  });

  result.grads = zeros_like(p);
  for (const auto& part : partials) {
    add_into(result.grads.fusion.coarse, part.fusion.coarse);
    add_into(result.grads.fusion.fine, part.fusion.fine);
  }

  if (uses_attention(variant)) {
    std::vector<AttentionParams> per_class(static_cast<std::size_t>(num_classes));
    parallel_for(num_classes, opts.threads, [&](int c) {
      const auto& aug = prepared[static_cast<std::size_t>(c)].augmented;
      Mat dt = Mat::Zero(aug.t_hat.rows(), aug.t_hat.cols());
      for (const auto& part : partials) dt += part.dt_hat[static_cast<std::size_t>(c)];
      auto& g = per_class[static_cast<std::size_t>(c)];
      g.wq = Mat::Zero(p.attention.wq.rows(), p.attention.wq.cols());
      g.wk = Mat::Zero(p.attention.wk.rows(), p.attention.wk.cols());
      g.wv = Mat::Zero(p.attention.wv.rows(), p.attention.wv.cols());
      attention_backward(aug, dt, p.attention.heads, g);
    });
    for (const auto& g : per_class) {
      result.grads.attention.wq += g.wq;
      result.grads.attention.wk += g.wk;
      result.grads.attention.wv += g.wv;
    }
  }

  if (!std::isfinite(result.loss) || !finite(result.grads)) {
    fail(ErrorKind::NonFiniteGradient, "loss or gradient is not finite");
  }
  return result;
}

// ---- gradient checking -------------------------------------------------------------------

GradCheckResult grad_check(const ModelParams& p, const Objective& objective,
                           const GradientFn& gradient, const GradCheckOptions& opts) {
  ModelParams work = p;
  auto params = parameter_tensors(work);
  std::size_t total = 0;
  for (const auto& t : params) total += t.values.size();
  if (total == 0 || (!opts.full && opts.samples == 0)) {
    fail(ErrorKind::EmptySample, "no parameter coordinates to check");
  }

  GradientSet analytic = gradient(p);
  auto grads = gradient_tensors(analytic);
  if (grads.size() != params.size()) fail(ErrorKind::ShapeMismatch, "gradient layout differs from parameters");

  // Round-robin over tensors so every tensor is represented.
  std::mt19937_64 rng(opts.seed);
  std::vector<std::vector<std::size_t>> order(params.size());
  for (std::size_t t = 0; t < params.size(); ++t) {
    order[t].resize(params[t].values.size());
    std::iota(order[t].begin(), order[t].end(), std::size_t{0});
    if (!opts.full) std::shuffle(order[t].begin(), order[t].end(), rng);
  }
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  const std::size_t wanted = opts.full ? total : std::min(opts.samples, total);
  for (std::size_t round = 0; picks.size() < wanted; ++round) {
    for (std::size_t t = 0; t < params.size() && picks.size() < wanted; ++t) {
      if (round < order[t].size()) picks.emplace_back(t, order[t][round]);
    }
  }

  GradCheckResult r;
  for (const auto& [t, i] : picks) {
    double& x = params[t].values[i];
    const double saved = x;
    x = saved + opts.step;
    const double up = objective(work);
    x = saved - opts.step;
    const double down = objective(work);
    x = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = grads[t].values[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
    ++r.coordinates;
    if (rel > r.max_relative_error || r.coordinates == 1) {
      r.max_relative_error = rel;
      r.worst_tensor = params[t].name;
      r.worst_index = i;
      r.analytic = a;
      r.numeric = numeric;
    }
  }
  return r;
}

GradCheckResult grad_check(const Batch& batch, std::span<const ClassTextBundle> classes,
                           const ModelParams& p, const GradCheckOptions& opts) {
  const auto labels = batch.labels();
  auto objective = [&](const ModelParams& q) {
    return total_loss(compute_logits(batch, classes, q), labels, q.lambda);
  };
  auto gradient = [&](const ModelParams& q) { return backward(batch, classes, q).grads; };
  return grad_check(p, objective, gradient, opts);
}

GradFixture make_grad_fixture(std::uint64_t seed, const InitOptions& init) {
  constexpr int kVideos = 4, kClasses = 3, kFrames = 6, kDim = 16, kSubtexts = 3;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  GradFixture f;
  f.ds.dim = kDim;
  for (int c = 0; c < kClasses; ++c) {
    ClassTextBundle b;
    b.class_name = "fixture_" + std::to_string(c);
    b.global = {gaussian(2, kDim), gaussian(kDim, 1)};
    for (int n = 0; n < kSubtexts; ++n) b.subtexts.push_back({gaussian(3, kDim), gaussian(kDim, 1)});
    f.ds.classes.push_back(std::move(b));
  }
  const int labels[kVideos] = {0, 1, 2, 0};
  for (int v = 0; v < kVideos; ++v) {
    f.ds.videos.push_back({"fixture_v" + std::to_string(v), gaussian(kFrames, kDim), {labels[v]}});
  }
  f.params = init_params(kDim, init, rng);
  // Move the heads away from identity so every term carries weight.
  for (FeedForward* h : {&f.params.fusion.coarse, &f.params.fusion.fine}) {
    h->first.weight += 0.3 * gaussian(h->first.weight.rows(), h->first.weight.cols()) / std::sqrt(double{kDim});
    h->first.bias += 0.1 * gaussian(h->first.bias.size(), 1);
  }
  return f;
}

// ---- optimizer --------------------------------------------------------------------------------

double scheduled_lr(const AdamWConfig& cfg, std::int64_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps <= 0) return cfg.lr;
  const auto span = std::max<std::int64_t>(1, cfg.total_steps - cfg.warmup_steps);
  const double progress =
      std::clamp(static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState make_optim_state(const ModelParams& p, const AdamWConfig& cfg) {
  OptimState s;
  s.first_moment = zeros_like(p);
  s.second_moment = zeros_like(p);
  s.config = cfg;
  return s;
}

void adamw_step(ModelParams& p, const GradientSet& g, OptimState& s) {
  auto params = parameter_tensors(p);
  GradientSet grad_copy = g;
  auto grads = gradient_tensors(grad_copy);
  auto m1 = gradient_tensors(s.first_moment);
  auto m2 = gradient_tensors(s.second_moment);
  if (grads.size() != params.size() || m1.size() != params.size() || m2.size() != params.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer state layout differs from parameters");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto n = params[t].values.size();
    if (grads[t].values.size() != n || m1[t].values.size() != n || m2[t].values.size() != n) {
      fail(ErrorKind::ShapeMismatch, "shape mismatch in " + params[t].name);
    }
  }

  const auto& c = s.config;
  const double lr = scheduled_lr(c, s.step);
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    const bool decay = is_weight_tensor(params[t].name);
    auto& w = params[t].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = grads[t].values[i];
      double& m = m1[t].values[i];
      double& v = m2[t].values[i];
      if (decay) w[i] -= lr * c.weight_decay * w[i];
      m = c.beta1 * m + (1.0 - c.beta1) * gi;
      v = c.beta2 * v + (1.0 - c.beta2) * gi * gi;
      w[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
    }
  }
}

// ---- training loop -----------------------------------------------------------------------------

void TrainConfig::check() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::ConfigInvalid, "invalid train config: " + what); };
  if (epochs < 0) bad("epochs < 0");
  if (batch_size < 1) bad("batch_size < 1");
  if (!(lr >= 0.0)) bad("lr < 0");
  if (!(tau > 0.0)) bad("tau <= 0");
  if (!(lambda >= 0.0)) bad("lambda < 0");
  if (warmup_epochs < 0) bad("warmup_epochs < 0");
  if (hidden < 0) bad("hidden < 0");
  if (heads < 1) bad("heads < 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) bad("betas outside [0, 1)");
}

TrainResult train(const EmbeddingDataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.check();
  std::mt19937_64 rng(seed);
  InitOptions init;
  init.hidden = cfg.hidden;
  init.activation = cfg.activation;
  init.heads = cfg.heads;
  return train_from(init_params(ds.dim, init, rng), ds, cfg, seed);
}

TrainResult train_from(ModelParams params, const EmbeddingDataset& ds, const TrainConfig& cfg,
                       std::uint64_t seed) {
  cfg.check();
  if (ds.videos.empty()) fail(ErrorKind::ShapeMismatch, "cannot train on a dataset without videos");
  if (params.dim() != ds.dim) fail(ErrorKind::ShapeMismatch, "parameter dim differs from dataset dim");
  params.tau = cfg.tau;
  params.lambda = cfg.lambda;
  params.options.variant = cfg.variant;
  params.options.coarse_form = cfg.coarse_form;

  const int n = ds.num_videos();
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamWConfig opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.eps;
  opt.weight_decay = cfg.weight_decay;
  opt.warmup_steps = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  opt.total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  OptimState state = make_optim_state(params, opt);

  // Fine-branch weights depend only on the embeddings.
  FineCache cache;
  if (uses_fine_branch(cfg.variant)) {
    const auto prepared = prepare_classes(ds.classes, params);
    cache.resize(static_cast<std::size_t>(n));
    parallel_for(n, cfg.threads, [&](int i) {
      const Mat& frames = ds.videos[static_cast<std::size_t>(i)].frames;
      const Mat unit = normalize_rows(frames);
      auto& row = cache[static_cast<std::size_t>(i)];
      for (const auto& pc : prepared) row.push_back(fine_branch(frames, unit, pc));
    });
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    int correct = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      // The shuffle picks batch membership; a canonical order inside the batch
      // keeps the arithmetic independent of where each video landed.
      std::sort(order.begin() + start, order.begin() + stop);
      const std::span<const int> rows(order.data() + start, static_cast<std::size_t>(stop - start));
      const Batch batch = make_batch(ds, rows);
      BackwardOptions bo;
      bo.threads = cfg.threads;
      if (!cache.empty()) {
        bo.fine_cache = &cache;
        bo.cache_rows = rows;
      }
      const auto br = backward(batch, ds.classes, params, bo);
      const double weight = static_cast<double>(batch.size());
      stats.loss_t2v += br.loss_t2v * weight;
      stats.loss_v2t += br.loss_v2t * weight;
      stats.total += br.loss * weight;
      const auto labels = batch.labels();
      for (int b = 0; b < batch.size(); ++b) {
        if (argmax_lowest(br.logits.row(b).transpose()) == labels[static_cast<std::size_t>(b)]) ++correct;
      }
      adamw_step(params, br.grads, state);
    }
    stats.loss_t2v /= n;
    stats.loss_v2t /= n;
    stats.total /= n;
    stats.train_top1 = static_cast<double>(correct) / n;
    result.history.push_back(stats);
  }
  result.params = std::move(params);
  return result;
}

std::string history_csv(std::span<const EpochStats> history) {
  std::ostringstream os;
  os << "epoch,loss_t2v,loss_v2t,total,train_top1\n";
  char buf[160];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", h.epoch, h.loss_t2v, h.loss_v2t,
                  h.total, h.train_top1);
    os << buf;
  }
  return os.str();
}

// ---- persistence ----------------------------------------------------------------------------------

std::string model_to_json(const SavedModel& m) {
  const auto& p = m.params;
  json j;
  j["format"] = "mgalign.model";
  j["version"] = 1;
  j["dim"] = p.dim();
  j["tau"] = p.tau;
  j["lambda"] = p.lambda;
  j["variant"] = to_string(p.options.variant);
  j["coarse_form"] = to_string(p.options.coarse_form);
  j["attention"] = {{"heads", p.attention.heads},
                    {"wq", mat_to_json(p.attention.wq)},
                    {"wk", mat_to_json(p.attention.wk)},
                    {"wv", mat_to_json(p.attention.wv)}};
  j["fusion"] = {{"coarse", ffn_to_json(p.fusion.coarse)}, {"fine", ffn_to_json(p.fusion.fine)}};
  j["trained_classes"] = m.trained_classes;
  return j.dump(1) + "\n";
}

SavedModel model_from_json(const std::string& text) {
  SavedModel m;
  try {
    const json j = json::parse(text);
    auto& p = m.params;
    p.tau = j.at("tau").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.options.variant = parse_variant(j.at("variant").get<std::string>());
    p.options.coarse_form = parse_coarse_form(j.at("coarse_form").get<std::string>());
    const auto& a = j.at("attention");
    p.attention.heads = a.at("heads").get<int>();
    p.attention.wq = mat_from_json(a.at("wq"), "attention.wq");
    p.attention.wk = mat_from_json(a.at("wk"), "attention.wk");
    p.attention.wv = mat_from_json(a.at("wv"), "attention.wv");
    p.fusion.coarse = ffn_from_json(j.at("fusion").at("coarse"), "fusion.coarse");
    p.fusion.fine = ffn_from_json(j.at("fusion").at("fine"), "fusion.fine");
    if (j.contains("trained_classes")) m.trained_classes = j.at("trained_classes").get<std::vector<std::string>>();
    const int dim = j.at("dim").get<int>();
    if (p.dim() != dim || p.attention.wq.cols() != dim) fail(ErrorKind::ShapeMismatch, "model dim mismatch");
  } catch (const json::exception& e) {
    fail(ErrorKind::ShapeMismatch, std::string("bad model file: ") + e.what());
  }
  return m;
}

void save_model(const SavedModel& m, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out || !(out << model_to_json(m))) fail(ErrorKind::ShapeMismatch, "cannot write " + file.string());
}

SavedModel load_model(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::MissingFile, kModule, file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"eps", c.eps},
         {"warmup_epochs", c.warmup_epochs},
         {"lambda", c.lambda},
         {"tau", c.tau},
         {"threads", c.threads},
         {"variant", to_string(c.variant)},
         {"coarse_form", to_string(c.coarse_form)},
         {"hidden", c.hidden},
         {"activation", to_string(c.activation)},
         {"heads", c.heads}};
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) fail(ErrorKind::ConfigInvalid, "train config must be a JSON object");
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("epochs", c.epochs);
    take("batch_size", c.batch_size);
    take("lr", c.lr);
    take("weight_decay", c.weight_decay);
    take("beta1", c.beta1);
    take("beta2", c.beta2);
    take("eps", c.eps);
    take("warmup_epochs", c.warmup_epochs);
    take("lambda", c.lambda);
    take("tau", c.tau);
    take("threads", c.threads);
    take("hidden", c.hidden);
    take("heads", c.heads);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("coarse_form")) c.coarse_form = parse_coarse_form(j.at("coarse_form").get<std::string>());
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigInvalid, std::string("bad train config: ") + e.what());
  }
  c.check();
  return c;
}

}  // namespace mgalign
