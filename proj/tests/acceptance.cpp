// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// nonzero when any criterion fails.

#include "mgalign/alignment.hpp"
#include "mgalign/cli.hpp"
#include "mgalign/eval_harness.hpp"
#include "mgalign/subtext_metrics.hpp"
#include "mgalign/training.hpp"
#include "oracles.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

using namespace mgalign;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool in_time = secs < budget_seconds;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s %s: %s; %.2fs of %.0fs%s\n", pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs, budget_seconds,
              in_time ? "" : " (over budget)");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<int> iota_n(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// ---- filesystem helpers for the CLI criteria ---------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

fs::path scratch() {
  const auto p = fs::temp_directory_path() / ("mgalign_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- criteria --------------------------------------------------------------------

Outcome gradient_correctness() {
  auto f = make_grad_fixture(2024);
  const auto batch = make_batch(f.ds, iota_n(f.ds.num_videos()));
  GradCheckOptions o;
  o.samples = 256;
  const auto r = grad_check(batch, f.ds.classes, f.params, o);
  // Sampling is round-robin over tensors, so any budget of at least one
  // coordinate per tensor reaches all of them.
  const std::size_t tensors = parameter_tensors(f.params).size();
  return {r.max_relative_error < 1e-4 && r.coordinates >= 200 && r.coordinates >= tensors,
          fmt("max relative error %.3g over %.0f coordinates in %.0f tensors", r.max_relative_error,
              static_cast<double>(r.coordinates), static_cast<double>(tensors)) +
              " (worst " + r.worst_tensor + ")"};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(7);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double err) { worst[k] = std::max(worst[k], err); };
  for (int trial = 0; trial < 100; ++trial) {
    const int d = oracle::random_int(rng, 1, 8), l = oracle::random_int(rng, 1, 8), m = oracle::random_int(rng, 1, 8);
    const int n_sub = oracle::random_int(rng, 2, 8), p_rows = oracle::random_int(rng, 1, 8);

    const Mat q = oracle::random_mat(rng, m, d), k = oracle::random_mat(rng, p_rows, d), v = oracle::random_mat(rng, p_rows, d);
    note("cross_attention", oracle::max_abs_diff(oracle::table(cross_attention(q, k, v)),
                                                 oracle::cross_attention(oracle::table(q), oracle::table(k), oracle::table(v))));

    const TextTokens global = oracle::random_text(rng, m, d);
    std::vector<TextTokens> subs;
    std::vector<oracle::Table> sub_tables;
    std::vector<oracle::Row> sub_summaries;
    for (int n = 0; n < n_sub; ++n) {
      subs.push_back(oracle::random_text(rng, oracle::random_int(rng, 1, 8), d));
      sub_tables.push_back(oracle::table(subs.back().tokens));
      sub_summaries.push_back(oracle::row(subs.back().summary));
    }
    const AttentionParams ap{oracle::random_mat(rng, d, d), oracle::random_mat(rng, d, d), oracle::random_mat(rng, d, d), 1};
    const Mat t_hat = augment_global_text(global, subs, ap);
    note("augment_global_text",
         oracle::max_abs_diff(oracle::table(t_hat), oracle::augment(oracle::table(global.tokens), sub_tables, oracle::table(ap.wq),
                                                                    oracle::table(ap.wk), oracle::table(ap.wv))));

    const Mat frames = oracle::random_mat(rng, l, d);
    const auto ft = oracle::table(frames);
    const Vec ac = coarse_importance(t_hat, frames);
    note("coarse_importance", oracle::max_abs_diff(oracle::row(ac), oracle::coarse_importance(oracle::table(t_hat), ft)));
    const Vec af = fine_importance(subs, frames);
    note("fine_importance", oracle::max_abs_diff(oracle::row(af), oracle::fine_importance(sub_tables, ft)));
    const Vec oc = coarse_embedding(frames, ac), of = fine_embedding(frames, af);
    note("coarse_embedding", oracle::max_abs_diff(oracle::row(oc), oracle::weighted_sum(ft, oracle::row(ac))));
    note("fine_embedding", oracle::max_abs_diff(oracle::row(of), oracle::weighted_sum(ft, oracle::row(af))));

    FusionParams fp{{{oracle::random_mat(rng, d, d), oracle::random_vec(rng, d)}, std::nullopt, Activation::Relu},
                    {{oracle::random_mat(rng, d, d), oracle::random_vec(rng, d)}, std::nullopt, Activation::Relu}};
    const auto yc = oracle::affine(oracle::table(fp.coarse.first.weight), oracle::row(fp.coarse.first.bias), oracle::row(oc));
    const auto yf = oracle::affine(oracle::table(fp.fine.first.weight), oracle::row(fp.fine.first.bias), oracle::row(of));
    oracle::Row fused(yc.size());
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = yc[i] + yf[i];
    note("fuse", oracle::max_abs_diff(oracle::row(fuse(oc, of, fp)), fused));

    const double tpp = tpp_score(global, subs, TppConfig{}).tpp;
    note("tpp_score", std::abs(tpp - oracle::tpp(oracle::row(global.summary), sub_summaries, 1e-6)) / tpp);

    const int b = oracle::random_int(rng, 1, 8), c = oracle::random_int(rng, 1, 8);
    const Mat y = 2.0 * oracle::random_mat(rng, b, c);
    std::vector<int> labels;
    for (int i = 0; i < b; ++i) labels.push_back(oracle::random_int(rng, 0, c - 1));
    note("loss_t2v", std::abs(loss_t2v(y, labels) - oracle::loss_t2v(oracle::table(y), labels)));
    note("loss_v2t", std::abs(loss_v2t(y, labels) - oracle::loss_v2t(oracle::table(y), labels)));
  }
  bool ok = true;
  double max_err = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= 1e-10;
    if (err >= max_err) {
      max_err = err;
      worst_name = name;
    }
  }
  return {ok && worst.size() == 10, fmt("%.0f operations x 100 instances, worst error %.3g", static_cast<double>(worst.size()), max_err) +
                                        " (" + worst_name + ")"};
}

Outcome normalization_invariants() {
  std::mt19937_64 rng(11);
  double fine_dev = 0.0, coarse_dev = 0.0;
  int permutation_mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = oracle::random_int(rng, 1, 8), l = oracle::random_int(rng, 1, 8), m = oracle::random_int(rng, 1, 8);
    std::vector<TextTokens> subs = {oracle::random_text(rng, oracle::random_int(rng, 1, 4), d),
                                    oracle::random_text(rng, oracle::random_int(rng, 1, 4), d)};
    const Mat t_hat = oracle::random_mat(rng, m, d);
    const Mat frames = oracle::random_mat(rng, l, d);
    const Vec ac = coarse_importance(t_hat, frames), af = fine_importance(subs, frames);
    coarse_dev = std::max(coarse_dev, std::abs(ac.sum() - m));
    fine_dev = std::max(fine_dev, std::abs(af.sum() - 1.0));

    std::vector<int> perm = iota_n(l);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat permuted(l, d);
    for (int i = 0; i < l; ++i) permuted.row(i) = frames.row(perm[static_cast<std::size_t>(i)]);
    const Vec pc = coarse_importance(t_hat, permuted), pf = fine_importance(subs, permuted);
    for (int i = 0; i < l; ++i)
      if (pc(i) != ac(perm[static_cast<std::size_t>(i)]) || pf(i) != af(perm[static_cast<std::size_t>(i)])) ++permutation_mismatches;
  }
  return {fine_dev <= 1e-9 && coarse_dev <= 1e-9 && permutation_mismatches == 0,
          fmt("max |sum a_fine - 1| %.3g, max |sum a_coarse - M| %.3g, %.0f permutation mismatches", fine_dev, coarse_dev,
              permutation_mismatches)};
}

Outcome residual_identity() {
  std::mt19937_64 rng(13);
  int mismatched = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = oracle::random_int(rng, 1, 8);
    const TextTokens g = oracle::random_text(rng, oracle::random_int(rng, 1, 8), d);
    const std::vector<TextTokens> subs = {oracle::random_text(rng, 3, d), oracle::random_text(rng, 2, d)};
    const AttentionParams zero{Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), 1};
    const Mat out = augment_global_text(g, subs, zero);
    for (Eigen::Index i = 0; i < out.size(); ++i)
      if (out.data()[i] != g.tokens.data()[i]) ++mismatched;
  }
  return {mismatched == 0, fmt("%.0f entries differ from T over 100 instances", mismatched)};
}

Outcome ablation_ordering() {
  double sum[4] = {0, 0, 0, 0};
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    SyntheticConfig sc;
    sc.seed = static_cast<std::uint64_t>(s);
    sc.videos_per_class = 150;
    const auto ds = generate_synthetic(sc);
    const auto [train_ds, eval_ds] = holdout_split(ds, 50);
    const auto t = run_ablation(train_ds, eval_ds, TrainConfig{}, static_cast<std::uint64_t>(s));
    for (int i = 0; i < 4; ++i) sum[i] += t.rows[static_cast<std::size_t>(i)].top1;
  }
  const double base = sum[0] / seeds, coarse = sum[1] / seeds, fine = sum[2] / seeds, full = sum[3] / seeds;
  const bool ok = base < coarse && base < fine && full >= std::max(coarse, fine) - 0.01;
  return {ok, fmt("mean top-1 baseline %.4f coarse %.4f fine %.4f full %.4f", base, coarse, fine, full)};
}

Outcome planted_recoverability() {
  SyntheticConfig sc;
  sc.noise = 0.0;
  sc.shared_fraction = 0.0;
  sc.distractor = 0.0;
  sc.seed = 1;
  const auto ds = generate_synthetic(sc);
  std::mt19937_64 rng(1);
  const auto init = init_params(sc.dim, {}, rng);
  std::string detail;
  bool ok = true;
  for (auto v : {Variant::Baseline, Variant::Coarse, Variant::Fine, Variant::Full}) {
    auto p = init;
    p.options.variant = v;
    const double top1 = evaluate(ds, p).top1;
    ok = ok && top1 == 1.0;
    detail += (detail.empty() ? "" : ", ") + to_string(v) + fmt(" %.4f", top1);
  }
  return {ok, "top-1 " + detail};
}

Outcome zero_shot_gain() {
  double trained = 0.0, baseline = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    SyntheticConfig sc;
    sc.classes = 20;
    sc.seed = static_cast<std::uint64_t>(s);
    const auto world = generate_synthetic(sc);
    std::vector<int> seen = iota_n(10), unseen(10);
    std::iota(unseen.begin(), unseen.end(), 10);
    const auto a = subset_classes(world, seen), b = subset_classes(world, unseen);
    const auto params = train(a, TrainConfig{}, static_cast<std::uint64_t>(s)).params;
    std::vector<std::string> names;
    for (const auto& c : a.classes) names.push_back(c.class_name);
    trained += zero_shot_eval(params, names, b).top1;
    baseline += evaluate_mean_pool(b).top1;
  }
  trained /= seeds;
  baseline /= seeds;
  return {trained - baseline >= 0.05, fmt("unseen top-1 trained %.4f vs mean-pool %.4f (gain %.4f)", trained, baseline, trained - baseline)};
}

Outcome determinism(const fs::path& root) {
  const auto a = root / "det_a", b = root / "det_b";
  auto gen = [](const fs::path& out, const std::string& threads) {
    return cli({"gen-synth", "--out", out.string(), "--seed", "7", "--threads", threads, "--videos-per-class", "20"});
  };
  if (gen(a, "1") != 0 || gen(b, "3") != 0) return {false, "gen-synth failed"};
  const bool data_same = snapshot(a) == snapshot(b);

  auto fit = [&](const std::string& tag, const std::string& threads) {
    return cli({"train", "--data", a.string(), "--out", (root / (tag + ".json")).string(), "--history",
                (root / (tag + ".csv")).string(), "--seed", "7", "--threads", threads, "--epochs", "5"});
  };
  if (fit("m1", "1") != 0 || fit("m2", "1") != 0 || fit("m3", "4") != 0) return {false, "train failed"};
  const std::string m1 = slurp(root / "m1.json"), h1 = slurp(root / "m1.csv");
  const bool train_same = m1 == slurp(root / "m2.json") && m1 == slurp(root / "m3.json") && h1 == slurp(root / "m2.csv") &&
                          h1 == slurp(root / "m3.csv");
  return {data_same && train_same && !m1.empty(),
          std::string("gen-synth threads 1 vs 3 ") + (data_same ? "identical" : "DIFFER") + ", train runs (1, 1, 4 threads) " +
              (train_same ? "identical" : "DIFFER")};
}

Outcome tpp_study_plumbing(const fs::path& root) {
  const auto data = root / "tpp";
  if (cli({"gen-synth", "--out", data.string(), "--seed", "3", "--candidate-groups", "5", "--videos-per-class", "30"}) != 0)
    return {false, "gen-synth failed"};
  std::string out;
  if (cli({"tpp-study", "--data", data.string(), "--train-per-class", "15", "--seed", "3", "--epochs", "10"}, &out) != 0)
    return {false, "tpp-study failed"};
  std::istringstream in(out);
  std::string line;
  int pairs = 0;
  double r = std::nan("");
  std::string sign;
  while (std::getline(in, line)) {
    if (line.rfind("# pearson_r,", 0) == 0) {
      const auto rest = line.substr(12);
      r = std::stod(rest.substr(0, rest.find(',')));
      sign = rest.substr(rest.find(',') + 1);
    } else if (!line.empty() && line != "group,tpp,top1") {
      ++pairs;
    }
  }
  return {pairs == 5 && std::isfinite(r), fmt("%.0f (TPP, top-1) pairs, pearson r %.4f", pairs, r) + " (sign " + sign + ", not asserted)"};
}

}  // namespace

int main() {
  const auto root = scratch();
  criterion("gradient correctness", 10, gradient_correctness);
  criterion("oracle equivalence", 30, oracle_equivalence);
  criterion("normalization invariants", 30, normalization_invariants);
  criterion("residual identity", 10, residual_identity);
  criterion("ablation ordering", 600, ablation_ordering);
  criterion("planted recoverability", 30, planted_recoverability);
  criterion("zero-shot protocol", 600, zero_shot_gain);
  criterion("determinism", 120, [&] { return determinism(root); });
  criterion("tpp study plumbing", 120, [&] { return tpp_study_plumbing(root); });
  fs::remove_all(root);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
