#pragma once

// Text-prompt perplexity (TPP) of a sub-text set and selection among
// candidate sets.
//
//   sigma_n = (cos(t, s_n) + 1) / 2                       relevance to global
//   delta_n = 1 - mean_{n' != n} (cos(s_n, s_n') + 1) / 2  divergence
//   TPP     = exp(-(1/N) sum_n log(alpha(sigma_n) * beta(delta_n)))
//
// All vectors are the encoder's summary embeddings.

#include "mgalign/embedding_store.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mgalign {

/// Scaling function applied to sigma or delta before the log.
struct Scaler {
  enum class Kind { Identity, Power, OneMinus };

  Kind kind = Kind::Identity;
  double exponent = 1.0;  // used by Power

  static Scaler identity() { return {}; }
  static Scaler power(double p) { return {Kind::Power, p}; }
  static Scaler one_minus() { return {Kind::OneMinus, 1.0}; }

  /// Accepts "identity", "one-minus", "power:<p>".
  static Scaler parse(std::string_view spec);
  std::string to_string() const;

  double operator()(double x) const;
};

struct TppConfig {
  Scaler alpha;
  Scaler beta;
  double epsilon = 1e-6;

  /// Throws InvalidConfig unless epsilon in (0, 0.5) and any power exponent > 0.
  void check() const;
};

struct TppBreakdown {
  std::vector<double> sigma;  // unclamped
  std::vector<double> delta;  // unclamped
  double tpp = 0.0;
};

/// Cosine similarity clamped to [-1, 1]; throws ZeroVector on a zero input.
double cosine_sim(const Vec& a, const Vec& b);

double sigma_score(const Vec& t_summary, const Vec& s_summary);
double delta_score(std::span<const Vec> s_summaries, std::size_t n);

TppBreakdown tpp_score(const TextTokens& global, std::span<const TextTokens> subtexts,
                       const TppConfig& cfg);
TppBreakdown tpp_score(const ClassTextBundle& bundle, const TppConfig& cfg);

struct SubtextSelection {
  std::size_t chosen = 0;
  std::vector<TppBreakdown> scores;  // one per candidate group
};

/// Argmax of TPP over candidate groups, lowest index on ties.
SubtextSelection select_subtext_set(const SubtextCandidateSet& candidates,
                                    const TextTokens& global, const TppConfig& cfg);

/// Mean of TPP_c over all classes of the dataset.
double tpp_dataset_average(const EmbeddingDataset& ds, const TppConfig& cfg);

}  // namespace mgalign
