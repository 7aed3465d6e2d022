#include "mgalign/subtext_metrics.hpp"

#include "mgalign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mgalign {

namespace {

constexpr std::string_view kModule = "subtext_metrics";

[[noreturn]] void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, kModule, detail);
}

std::vector<Vec> summaries_of(std::span<const TextTokens> texts) {
  std::vector<Vec> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(t.summary);
  return out;
}

}  // namespace

Scaler Scaler::parse(std::string_view spec) {
  if (spec == "identity") return identity();
  if (spec == "one-minus") return one_minus();
  constexpr std::string_view prefix = "power:";
  if (spec.starts_with(prefix)) {
    const std::string rest(spec.substr(prefix.size()));
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == rest.size() && used > 0 && p > 0.0) return power(p);
  }
  fail(ErrorKind::InvalidConfig,
       "bad scaler '" + std::string(spec) + "' (expected identity | one-minus | power:<p>0>)");
}

std::string Scaler::to_string() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::OneMinus: return "one-minus";
    case Kind::Power: {
      std::ostringstream os;
      os << "power:" << exponent;
      return os.str();
    }
  }
  return "identity";
}

double Scaler::operator()(double x) const {
  switch (kind) {
    case Kind::Identity: return x;
    case Kind::Power: return std::pow(x, exponent);
    case Kind::OneMinus: return 1.0 - x;
  }
  return x;
}

void TppConfig::check() const {
  if (!(epsilon > 0.0 && epsilon < 0.5)) fail(ErrorKind::InvalidConfig, "epsilon must lie in (0, 0.5)");
  for (const Scaler* s : {&alpha, &beta}) {
    if (s->kind == Scaler::Kind::Power && !(s->exponent > 0.0)) {
      fail(ErrorKind::InvalidConfig, "power exponent must be > 0");
    }
  }
}

double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidConfig, "cosine_sim: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorKind::ZeroVector, "cosine_sim of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double sigma_score(const Vec& t_summary, const Vec& s_summary) {
  return (cosine_sim(t_summary, s_summary) + 1.0) / 2.0;
}

double delta_score(std::span<const Vec> s_summaries, std::size_t n) {
  const std::size_t count = s_summaries.size();
  if (count < 2) fail(ErrorKind::NeedTwoSubtexts, "delta needs at least two sub-texts");
  if (n >= count) fail(ErrorKind::InvalidConfig, "sub-text index out of range");
  double acc = 0.0;
  for (std::size_t m = 0; m < count; ++m) {
    if (m == n) continue;
    acc += (cosine_sim(s_summaries[n], s_summaries[m]) + 1.0) / 2.0;
  }
  return 1.0 - acc / static_cast<double>(count - 1);
}

TppBreakdown tpp_score(const TextTokens& global, std::span<const TextTokens> subtexts,
                       const TppConfig& cfg) {
  cfg.check();
  if (subtexts.size() < 2) {
    fail(ErrorKind::NeedTwoSubtexts, "TPP needs at least two sub-texts, got " + std::to_string(subtexts.size()));
  }
  const auto summaries = summaries_of(subtexts);
  TppBreakdown out;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < summaries.size(); ++n) {
    const double sigma = sigma_score(global.summary, summaries[n]);
    const double delta = delta_score(summaries, n);
    out.sigma.push_back(sigma);
    out.delta.push_back(delta);
    // Clamp the raw scores, then floor the scaled factors so the log stays
    // finite for scalers that can reach zero (one-minus at 1).
    const double a = std::max(cfg.alpha(std::clamp(sigma, cfg.epsilon, 1.0)), cfg.epsilon);
    const double b = std::max(cfg.beta(std::clamp(delta, cfg.epsilon, 1.0)), cfg.epsilon);
    log_sum += std::log(a) + std::log(b);
  }
  out.tpp = std::exp(-log_sum / static_cast<double>(summaries.size()));
  return out;
}

TppBreakdown tpp_score(const ClassTextBundle& bundle, const TppConfig& cfg) {
  return tpp_score(bundle.global, bundle.subtexts, cfg);
}

SubtextSelection select_subtext_set(const SubtextCandidateSet& candidates,
                                    const TextTokens& global, const TppConfig& cfg) {
  if (candidates.sets.empty()) {
    fail(ErrorKind::EmptyCandidates,
         "class " + std::to_string(candidates.class_id) + " has no candidate groups");
  }
  SubtextSelection out;
  for (std::size_t g = 0; g < candidates.sets.size(); ++g) {
    try {
      out.scores.push_back(tpp_score(global, candidates.sets[g], cfg));
    } catch (const Error& e) {
      throw Error(e.kind(), kModule,
                  "class " + std::to_string(candidates.class_id) + " group " + std::to_string(g) +
                      ": " + e.detail());
    }
    if (out.scores.back().tpp > out.scores[out.chosen].tpp) out.chosen = g;
  }
  return out;
}

double tpp_dataset_average(const EmbeddingDataset& ds, const TppConfig& cfg) {
  if (ds.classes.empty()) fail(ErrorKind::NeedTwoSubtexts, "dataset has no classes");
  double acc = 0.0;
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    try {
      acc += tpp_score(ds.classes[c], cfg).tpp;
    } catch (const Error& e) {
      throw Error(e.kind(), kModule, "class " + std::to_string(c) + ": " + e.detail());
    }
  }
  return acc / static_cast<double>(ds.classes.size());
}

}  // namespace mgalign
