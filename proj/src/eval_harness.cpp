#include "mgalign/eval_harness.hpp"

#include "json.hpp"
#include "mgalign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mgalign {

using nlohmann::json;

namespace {

constexpr std::string_view kModule = "eval_harness";

[[noreturn]] void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, kModule, detail);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

constexpr Variant kAblationOrder[] = {Variant::Baseline, Variant::Coarse, Variant::Fine, Variant::Full};

// ---- generator helpers ------------------------------------------------------------------

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double normal() { return normal_(rng_); }
  double uniform() { return uniform_(rng_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(rng_); }
  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  std::mt19937_64& engine() { return rng_; }

  Vec gaussian(int dim) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  /// Isotropic Gaussian with expected norm close to `scale`.
  Vec noise(int dim, double scale) {
    if (scale == 0.0) return Vec::Zero(dim);
    return gaussian(dim) * (scale / std::sqrt(static_cast<double>(dim)));
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Largest-remainder rounding of `shares` (summing to 1) to integers summing to `total`.
std::vector<int> round_durations(const std::vector<double>& shares, int total) {
  std::vector<int> out(shares.size());
  std::vector<std::pair<double, std::size_t>> rest;
  int used = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * total;
    out[i] = static_cast<int>(std::floor(exact));
    used += out[i];
    rest.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[rest[k % rest.size()].second];
  return out;
}

TextTokens make_text(Sampler& s, const Vec& direction, int tokens, double noise) {
  const auto dim = static_cast<int>(direction.size());
  TextTokens t;
  t.tokens.resize(tokens, dim);
  for (int m = 0; m < tokens; ++m) t.tokens.row(m) = (direction + s.noise(dim, noise)).transpose();
  t.summary = direction + s.noise(dim, noise);
  return t;
}

std::vector<int> first_labels(const EmbeddingDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.videos.size());
  for (const auto& v : ds.videos) out.push_back(v.label());
  return out;
}

std::vector<std::vector<int>> videos_by_class(const EmbeddingDataset& ds) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(ds.num_classes()));
  for (int i = 0; i < ds.num_videos(); ++i) {
    const int c = ds.videos[static_cast<std::size_t>(i)].label();
    if (c < 0 || c >= ds.num_classes()) fail(ErrorKind::ConfigInvalid, "video label out of range");
    out[static_cast<std::size_t>(c)].push_back(i);
  }
  return out;
}

EmbeddingDataset with_videos(const EmbeddingDataset& ds, const std::vector<int>& indices) {
  EmbeddingDataset out;
  out.dim = ds.dim;
  out.classes = ds.classes;
  for (int i : indices) out.videos.push_back(ds.videos[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

// ---- metrics ------------------------------------------------------------------------------

double topk_accuracy(const Mat& scores, std::span<const int> labels, int k) {
  const auto classes = static_cast<int>(scores.cols());
  if (k < 1 || k > classes) {
    fail(ErrorKind::BadK, "k = " + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  }
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) {
    fail(ErrorKind::ConfigInvalid, "score rows differ from label count");
  }
  if (labels.empty()) fail(ErrorKind::ConfigInvalid, "no videos to score");
  int correct = 0;
  for (Eigen::Index v = 0; v < scores.rows(); ++v) {
    const int y = labels[static_cast<std::size_t>(v)];
    if (y < 0 || y >= classes) fail(ErrorKind::ConfigInvalid, "label out of range");
    int above = 0;
    for (int j = 0; j < classes; ++j) {
      if (scores(v, j) > scores(v, y) || (scores(v, j) == scores(v, y) && j < y)) ++above;
    }
    if (above < k) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double average_precision(const Vec& scores, const std::vector<bool>& positive) {
  if (static_cast<Eigen::Index>(positive.size()) != scores.size()) {
    fail(ErrorKind::ConfigInvalid, "score and mask lengths differ");
  }
  std::vector<Eigen::Index> order(positive.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
  int hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[static_cast<std::size_t>(order[r])]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) fail(ErrorKind::EmptyLabelSet, "class has no positive videos");
  return sum / hits;
}

double mean_average_precision(const Mat& scores, std::span<const std::vector<int>> labelsets) {
  if (static_cast<Eigen::Index>(labelsets.size()) != scores.rows()) {
    fail(ErrorKind::ConfigInvalid, "score rows differ from label-set count");
  }
  std::vector<std::vector<bool>> positive(static_cast<std::size_t>(scores.cols()),
                                          std::vector<bool>(labelsets.size(), false));
  for (std::size_t v = 0; v < labelsets.size(); ++v) {
    if (labelsets[v].empty()) fail(ErrorKind::EmptyLabelSet, "video " + std::to_string(v) + " has no labels");
    for (int c : labelsets[v]) {
      if (c < 0 || c >= scores.cols()) fail(ErrorKind::ConfigInvalid, "label out of range");
      positive[static_cast<std::size_t>(c)][v] = true;
    }
  }
  double sum = 0.0;
  int counted = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const auto& mask = positive[static_cast<std::size_t>(c)];
    if (std::find(mask.begin(), mask.end(), true) == mask.end()) continue;
    sum += average_precision(scores.col(c), mask);
    ++counted;
  }
  if (counted == 0) fail(ErrorKind::EmptyLabelSet, "no class has a positive video");
  return sum / counted;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorKind::ConfigInvalid, "need two equal-length samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) fail(ErrorKind::DegenerateVariance, "first sample has zero variance");
  if (!(syy > 0.0)) fail(ErrorKind::DegenerateVariance, "second sample has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// ---- synthetic data -------------------------------------------------------------------------

void SyntheticConfig::check() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::ConfigInvalid, "synthetic config: " + what); };
  if (classes < 1) bad("classes < 1");
  if (atomics < 1) bad("atomics < 1");
  if (frames < 1) bad("frames < 1");
  if (dim < 2) bad("dim < 2");
  if (videos_per_class < 1) bad("videos_per_class < 1");
  if (global_tokens < 1) bad("global_tokens < 1");
  if (subtext_tokens < 1) bad("subtext_tokens < 1");
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) bad("shared_fraction outside [0, 1]");
  if (!(noise >= 0.0)) bad("noise < 0");
  if (!(text_noise_ratio >= 0.0)) bad("text_noise_ratio < 0");
  if (!(appearance >= 0.0)) bad("appearance < 0");
  if (!(distractor >= 0.0 && distractor <= 1.0)) bad("distractor outside [0, 1]");
  if (appearance_rank < 1) bad("appearance_rank < 1");
  if (!(concentration > 0.0)) bad("concentration <= 0");
  if (candidate_groups < 0) bad("candidate_groups < 0");
}

EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.check();
  Sampler s(cfg.seed);
  const int dim = cfg.dim;
  const int num_classes = cfg.classes;
  const int atomics = cfg.atomics;
  const double text_noise = cfg.noise * cfg.text_noise_ratio;

  // Class directions: orthonormal while they fit, leaving a complement for
  // atomic detail and backgrounds.
  Eigen::MatrixXd gauss(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) gauss(i, j) = s.normal();
  }
  const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ();
  const int reserved = std::min(num_classes, dim - 1);
  std::vector<Vec> globals;
  for (int c = 0; c < num_classes; ++c) {
    if (cfg.identical_globals && c > 0) {
      globals.push_back(globals.front());
    } else if (c < reserved) {
      globals.push_back(basis.col(c));
    } else {
      globals.push_back(l2_normalize(s.gaussian(dim)));
    }
  }
  const Eigen::MatrixXd span = basis.leftCols(reserved);
  auto complement = [&](Vec v) { return l2_normalize(v - span * (span.transpose() * v)); };
  auto blend = [&](const Vec& anchor) {
    const double gamma = 0.2 + 0.7 * s.uniform();
    return l2_normalize(gamma * anchor + std::sqrt(1.0 - gamma * gamma) * complement(s.gaussian(dim)));
  };

  // Atomic prototypes; the first `shared` of each class are shared with its pair.
  const int shared = num_classes > 1 ? static_cast<int>(std::lround(cfg.shared_fraction * atomics)) : 0;
  std::vector<std::vector<Vec>> protos(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const bool odd_last = (num_classes % 2 == 1) && c == num_classes - 1 && num_classes > 1;
    const int pair_first = odd_last ? 0 : c - c % 2;
    for (int a = 0; a < atomics; ++a) {
      if (a < shared && (c != pair_first || odd_last)) {
        protos[static_cast<std::size_t>(c)].push_back(protos[static_cast<std::size_t>(pair_first)][static_cast<std::size_t>(a)]);
      } else if (a < shared) {
        const Vec anchor = l2_normalize(globals[static_cast<std::size_t>(c)] + globals[static_cast<std::size_t>(c + 1)]);
        protos[static_cast<std::size_t>(c)].push_back(blend(anchor));
      } else {
        protos[static_cast<std::size_t>(c)].push_back(blend(globals[static_cast<std::size_t>(c)]));
      }
    }
  }

  std::vector<Vec> backgrounds;
  for (int b = 0; b < 4; ++b) backgrounds.push_back(complement(s.gaussian(dim)));
  std::vector<Vec> appearance_dirs;
  for (int r = 0; r < cfg.appearance_rank; ++r) appearance_dirs.push_back(l2_normalize(s.gaussian(dim)));

  EmbeddingDataset ds;
  ds.dim = dim;
  for (int c = 0; c < num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%02d", c);
    ClassTextBundle bundle;
    bundle.class_name = name;
    bundle.global = make_text(s, globals[static_cast<std::size_t>(c)], cfg.global_tokens, text_noise);
    for (const auto& p : protos[static_cast<std::size_t>(c)]) {
      bundle.subtexts.push_back(make_text(s, p, cfg.subtext_tokens, text_noise));
    }
    ds.classes.push_back(std::move(bundle));
  }

  const int segments = atomics + (cfg.background ? 1 : 0);
  for (int c = 0; c < num_classes; ++c) {
    const auto& cp = protos[static_cast<std::size_t>(c)];
    for (int v = 0; v < cfg.videos_per_class; ++v) {
      std::vector<int> seg_order(static_cast<std::size_t>(atomics));
      std::iota(seg_order.begin(), seg_order.end(), 0);
      std::shuffle(seg_order.begin(), seg_order.end(), s.engine());
      std::vector<double> shares(static_cast<std::size_t>(segments));
      double total = 0.0;
      for (auto& x : shares) total += (x = s.gamma(cfg.concentration));
      for (auto& x : shares) x /= total;
      auto durations = round_durations(shares, cfg.frames);
      if (cfg.background && durations.back() == cfg.frames) {
        // Keep at least one action frame in every video.
        --durations.back();
        ++durations.front();
      }
      Vec bg = backgrounds[static_cast<std::size_t>(s.index(static_cast<int>(backgrounds.size())))];
      if (cfg.distractor > 0.0 && num_classes > 1) {
        // Scene that looks like some other class.
        const int other = (c + 1 + s.index(num_classes - 1)) % num_classes;
        bg = l2_normalize(cfg.distractor * globals[static_cast<std::size_t>(other)] +
                          std::sqrt(std::max(0.0, 1.0 - cfg.distractor * cfg.distractor)) * bg);
      }
      Vec look = Vec::Zero(dim);
      for (const auto& d : appearance_dirs) {
        look += d * (s.normal() * cfg.appearance * cfg.noise / std::sqrt(static_cast<double>(appearance_dirs.size())));
      }

      FrameEmbeddings fe;
      char id[48];
      std::snprintf(id, sizeof id, "synth_c%02d_v%04d", c, v);
      fe.video_id = id;
      fe.labels = {c};
      fe.frames.resize(cfg.frames, dim);
      int row = 0;
      for (int seg = 0; seg < segments; ++seg) {
        const bool is_bg = seg == atomics;
        const Vec& proto = is_bg ? bg : cp[static_cast<std::size_t>(seg_order[static_cast<std::size_t>(seg)])];
        for (int k = 0; k < durations[static_cast<std::size_t>(seg)]; ++k, ++row) {
          fe.frames.row(row) = (proto + look + s.noise(dim, cfg.noise)).transpose();
        }
      }
      ds.videos.push_back(std::move(fe));
    }
  }

  // Candidate groups, best first: each slot is the true sub-text with
  // probability equal to the group's quality, else a hallucinated direction
  // or a paraphrase of the class prompt.
  const int groups = cfg.candidate_groups;
  for (int c = 0; c < num_classes; ++c) {
    auto& bundle = ds.classes[static_cast<std::size_t>(c)];
    for (int g = 0; g < groups; ++g) {
      const double quality = groups == 1 ? 1.0 : 1.0 - static_cast<double>(g) / (groups - 1);
      std::vector<TextTokens> set;
      for (int a = 0; a < atomics; ++a) {
        Vec dir;
        if (s.uniform() < quality) {
          dir = protos[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
        } else if (s.uniform() < 0.5) {
          dir = complement(s.gaussian(dim));
        } else {
          dir = l2_normalize(globals[static_cast<std::size_t>(c)] + 0.3 * l2_normalize(s.gaussian(dim)));
        }
        set.push_back(make_text(s, dir, cfg.subtext_tokens, text_noise));
      }
      bundle.candidate_groups.push_back(std::move(set));
    }
  }
  return ds;
}

std::string synthetic_config_to_json(const SyntheticConfig& c) {
  json j{{"classes", c.classes},
         {"atomics", c.atomics},
         {"shared_fraction", c.shared_fraction},
         {"frames", c.frames},
         {"dim", c.dim},
         {"concentration", c.concentration},
         {"noise", c.noise},
         {"text_noise_ratio", c.text_noise_ratio},
         {"appearance", c.appearance},
         {"appearance_rank", c.appearance_rank},
         {"background", c.background},
         {"distractor", c.distractor},
         {"global_tokens", c.global_tokens},
         {"subtext_tokens", c.subtext_tokens},
         {"videos_per_class", c.videos_per_class},
         {"candidate_groups", c.candidate_groups},
         {"identical_globals", c.identical_globals},
         {"seed", c.seed}};
  return j.dump(2) + "\n";
}

SyntheticConfig synthetic_config_from_json(const std::string& text, SyntheticConfig c) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) fail(ErrorKind::ConfigInvalid, "synthetic config must be a JSON object");
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("classes", c.classes);
    take("atomics", c.atomics);
    take("shared_fraction", c.shared_fraction);
    take("frames", c.frames);
    take("dim", c.dim);
    take("concentration", c.concentration);
    take("noise", c.noise);
    take("text_noise_ratio", c.text_noise_ratio);
    take("appearance", c.appearance);
    take("appearance_rank", c.appearance_rank);
    take("background", c.background);
    take("distractor", c.distractor);
    take("global_tokens", c.global_tokens);
    take("subtext_tokens", c.subtext_tokens);
    take("videos_per_class", c.videos_per_class);
    take("candidate_groups", c.candidate_groups);
    take("identical_globals", c.identical_globals);
    take("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigInvalid, std::string("bad synthetic config: ") + e.what());
  }
  c.check();
  return c;
}

// ---- evaluation ---------------------------------------------------------------------------------

Mat score_matrix(const EmbeddingDataset& ds, const ModelParams& p, int threads) {
  if (ds.classes.empty()) fail(ErrorKind::ConfigInvalid, "dataset has no classes");
  const auto prepared = prepare_classes(ds.classes, p);
  Mat scores(ds.num_videos(), ds.num_classes());
  parallel_for(ds.num_videos(), threads, [&](int v) {
    scores.row(v) = classify_prepared(ds.videos[static_cast<std::size_t>(v)].frames, prepared, p).scores.transpose();
  });
  return scores;
}

EvalReport report_from_scores(const Mat& scores, const EmbeddingDataset& ds) {
  const auto labels = first_labels(ds);
  EvalReport r;
  r.top1 = topk_accuracy(scores, labels, 1);
  r.top5 = topk_accuracy(scores, labels, std::min(5, ds.num_classes()));
  // mAP is the multi-label metric; single-label datasets report accuracy only.
  std::vector<std::vector<int>> sets;
  bool multi_label = false;
  for (const auto& v : ds.videos) {
    sets.push_back(v.labels);
    multi_label = multi_label || v.labels.size() > 1;
  }
  if (multi_label) r.map = mean_average_precision(scores, sets);
  for (const auto& b : ds.classes) r.per_class.push_back({b.class_name, 0, 0, 0.0});
  for (int v = 0; v < ds.num_videos(); ++v) {
    auto& pc = r.per_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(v)])];
    ++pc.videos;
    if (argmax_lowest(scores.row(v).transpose()) == labels[static_cast<std::size_t>(v)]) ++pc.correct;
  }
  for (auto& pc : r.per_class) pc.accuracy = pc.videos ? static_cast<double>(pc.correct) / pc.videos : 0.0;
  return r;
}

EvalReport evaluate(const EmbeddingDataset& ds, const ModelParams& p, int threads) {
  return report_from_scores(score_matrix(ds, p, threads), ds);
}

EvalReport evaluate_mean_pool(const EmbeddingDataset& ds, int threads) {
  ModelParams p = identity_params(ds.dim);
  p.options.variant = Variant::Baseline;
  return evaluate(ds, p, threads);
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["map"] = r.map ? json(*r.map) : json(nullptr);
  json classes = json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"name", c.name}, {"videos", c.videos}, {"correct", c.correct}, {"accuracy", c.accuracy}});
  }
  j["per_class"] = std::move(classes);
  return j.dump(2) + "\n";
}

std::string per_class_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "class,videos,correct,accuracy\n";
  for (const auto& c : r.per_class) os << c.name << ',' << c.videos << ',' << c.correct << ',' << fmt(c.accuracy) << '\n';
  return os.str();
}

std::string importance_profiles_csv(const EmbeddingDataset& ds, const ModelParams& p) {
  std::ostringstream os;
  os << "video,class,frame,coarse,fine\n";
  const auto prepared = prepare_classes(ds.classes, p);
  for (const auto& v : ds.videos) {
    const int c = v.label();
    const auto t = forward_pair(v.frames, normalize_rows(v.frames), prepared[static_cast<std::size_t>(c)], p);
    for (int l = 0; l < v.num_frames(); ++l) {
      os << v.video_id << ',' << ds.classes[static_cast<std::size_t>(c)].class_name << ',' << l << ',';
      if (t.profile.coarse.size()) os << fmt(t.profile.coarse[l]);
      os << ',';
      if (t.profile.fine.size()) os << fmt(t.profile.fine[l]);
      os << '\n';
    }
  }
  return os.str();
}

// ---- protocols ---------------------------------------------------------------------------------------

EmbeddingDataset subset_classes(const EmbeddingDataset& ds, std::span<const int> class_ids) {
  if (class_ids.empty()) fail(ErrorKind::ConfigInvalid, "empty class subset");
  std::map<int, int> remap;
  EmbeddingDataset out;
  out.dim = ds.dim;
  for (int c : class_ids) {
    if (c < 0 || c >= ds.num_classes()) fail(ErrorKind::ConfigInvalid, "class id " + std::to_string(c) + " out of range");
    if (!remap.emplace(c, static_cast<int>(out.classes.size())).second) {
      fail(ErrorKind::ConfigInvalid, "class id " + std::to_string(c) + " listed twice");
    }
    out.classes.push_back(ds.classes[static_cast<std::size_t>(c)]);
  }
  for (const auto& v : ds.videos) {
    FrameEmbeddings copy;
    for (int l : v.labels) {
      if (auto it = remap.find(l); it != remap.end()) copy.labels.push_back(it->second);
    }
    if (copy.labels.empty()) continue;
    copy.video_id = v.video_id;
    copy.frames = v.frames;
    out.videos.push_back(std::move(copy));
  }
  return out;
}

std::pair<EmbeddingDataset, EmbeddingDataset> few_shot_split(const EmbeddingDataset& ds, int shots,
                                                              std::uint64_t seed) {
  if (shots < 1) fail(ErrorKind::ConfigInvalid, "shots must be >= 1");
  auto groups = videos_by_class(ds);
  std::mt19937_64 rng(seed);
  std::vector<int> train_idx;
  std::vector<int> eval_idx;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& g = groups[c];
    if (static_cast<int>(g.size()) <= shots) {
      fail(ErrorKind::InsufficientVideos, "class " + std::to_string(c) + " has " + std::to_string(g.size()) +
                                              " videos, needs more than " + std::to_string(shots));
    }
    std::shuffle(g.begin(), g.end(), rng);
    train_idx.insert(train_idx.end(), g.begin(), g.begin() + shots);
    eval_idx.insert(eval_idx.end(), g.begin() + shots, g.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return {with_videos(ds, train_idx), with_videos(ds, eval_idx)};
}

std::pair<EmbeddingDataset, EmbeddingDataset> holdout_split(const EmbeddingDataset& ds, int train_per_class) {
  const auto groups = videos_by_class(ds);
  std::vector<int> train_idx;
  std::vector<int> eval_idx;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    if (static_cast<int>(g.size()) <= train_per_class) {
      fail(ErrorKind::InsufficientVideos, "class " + std::to_string(c) + " has too few videos for the split");
    }
    train_idx.insert(train_idx.end(), g.begin(), g.begin() + train_per_class);
    eval_idx.insert(eval_idx.end(), g.begin() + train_per_class, g.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return {with_videos(ds, train_idx), with_videos(ds, eval_idx)};
}

EvalReport zero_shot_eval(const ModelParams& p, std::span<const std::string> trained_classes,
                          const EmbeddingDataset& unseen, int threads) {
  const std::set<std::string> seen(trained_classes.begin(), trained_classes.end());
  for (const auto& b : unseen.classes) {
    if (seen.count(b.class_name)) fail(ErrorKind::ClassOverlap, "class '" + b.class_name + "' was seen in training");
  }
  return evaluate(unseen, p, threads);
}

AblationTable ablation_suite(const EmbeddingDataset& eval, std::span<const ModelParams> params, int threads) {
  if (params.size() != std::size(kAblationOrder)) {
    fail(ErrorKind::ConfigInvalid, "ablation needs one parameter set per variant (4)");
  }
  AblationTable t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ModelParams p = params[i];
    p.options.variant = kAblationOrder[i];
    const auto r = evaluate(eval, p, threads);
    t.rows.push_back({to_string(kAblationOrder[i]), r.top1, r.top5});
  }
  return t;
}

AblationTable run_ablation(const EmbeddingDataset& train_ds, const EmbeddingDataset& eval_ds,
                           const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<ModelParams> trained;
  for (Variant v : kAblationOrder) {
    TrainConfig c = cfg;
    c.variant = v;
    trained.push_back(train(train_ds, c, seed).params);
  }
  return ablation_suite(eval_ds, trained, cfg.threads);
}

std::string ablation_csv(const AblationTable& t) {
  std::ostringstream os;
  os << "variant,top1,top5\n";
  for (const auto& r : t.rows) os << r.variant << ',' << fmt(r.top1) << ',' << fmt(r.top5) << '\n';
  return os.str();
}

TppStudy tpp_correlation_study(const EmbeddingDataset& train_ds, const EmbeddingDataset& eval_ds,
                               const TrainConfig& cfg, const TppConfig& tpp, std::uint64_t seed) {
  if (train_ds.classes.empty()) fail(ErrorKind::ConfigInvalid, "dataset has no classes");
  if (eval_ds.num_classes() != train_ds.num_classes()) fail(ErrorKind::ConfigInvalid, "train and eval class lists differ");
  std::size_t groups = train_ds.classes.front().candidate_groups.size();
  for (const auto& b : train_ds.classes) groups = std::min(groups, b.candidate_groups.size());
  if (groups < 3) fail(ErrorKind::NeedThreeGroups, "need at least 3 candidate groups, found " + std::to_string(groups));

  TppStudy study;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t g = 0; g < groups; ++g) {
    EmbeddingDataset tr = train_ds;
    for (auto& b : tr.classes) b.subtexts = b.candidate_groups[g];
    EmbeddingDataset ev = eval_ds;
    ev.classes = tr.classes;
    const double score = tpp_dataset_average(tr, tpp);
    const auto params = train(tr, cfg, seed).params;
    const double top1 = evaluate(ev, params, cfg.threads).top1;
    study.points.push_back({static_cast<int>(g), score, top1});
    xs.push_back(score);
    ys.push_back(top1);
  }
  study.r = pearson_r(xs, ys);
  return study;
}

std::string tpp_study_csv(const TppStudy& s) {
  std::ostringstream os;
  os << "group,tpp,top1\n";
  for (const auto& p : s.points) os << p.group << ',' << fmt(p.tpp) << ',' << fmt(p.top1) << '\n';
  return os.str();
}

}  // namespace mgalign
