#include "mgalign/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"
#include "mgalign/alignment.hpp"
#include "mgalign/embedding_store.hpp"
#include "mgalign/errors.hpp"
#include "mgalign/eval_harness.hpp"
#include "mgalign/subtext_metrics.hpp"
#include "mgalign/training.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mgalign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDataEnv = "MGALIGN_DATA";
constexpr double kGradTolerance = 1e-4;

/// Bad invocation detected after CLI11 parsing (exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config;
};

struct TrainFlags {
  TrainConfig cfg;
  std::string variant = "full";
  std::string activation = "relu";
  bool literal = false;
};

struct TppFlags {
  std::string alpha = "identity";
  std::string beta = "identity";
  double epsilon = 1e-6;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::MissingFile, "cli", file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw Error(ErrorKind::IoFailure, "cli", "cannot write " + file.string());
}

/// Writes to `path`, or to `out` when no path was given.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataEnv); env && *env) return env;
  throw UsageError("no dataset given: pass --data or set " + std::string(kDataEnv));
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Seed for all randomness")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--config", c.config, "JSON file whose fields override the flags");
}

void add_train_flags(CLI::App* sub, TrainFlags& t) {
  auto& c = t.cfg;
  sub->add_option("--epochs", c.epochs)->capture_default_str();
  sub->add_option("--batch-size", c.batch_size)->capture_default_str();
  sub->add_option("--lr", c.lr)->capture_default_str();
  sub->add_option("--weight-decay", c.weight_decay)->capture_default_str();
  sub->add_option("--warmup-epochs", c.warmup_epochs)->capture_default_str();
  sub->add_option("--lambda", c.lambda, "Weight of the video-to-text loss")->capture_default_str();
  sub->add_option("--tau", c.tau, "Logit temperature")->capture_default_str();
  sub->add_option("--variant", t.variant, "baseline | coarse | fine | full")->capture_default_str();
  sub->add_flag("--literal-coarse", t.literal, "Coarse weights as exp(sim) / sum(sim) instead of softmax");
  sub->add_option("--hidden", c.hidden, "Hidden width of the feedforward heads (0 = affine)")->capture_default_str();
  sub->add_option("--activation", t.activation, "relu | tanh | gelu")->capture_default_str();
  sub->add_option("--heads", c.heads, "Attention heads")->capture_default_str();
}

void add_tpp_flags(CLI::App* sub, TppFlags& t) {
  sub->add_option("--alpha", t.alpha, "Relevance scaler: identity | one-minus | power:<p>")->capture_default_str();
  sub->add_option("--beta", t.beta, "Divergence scaler: identity | one-minus | power:<p>")->capture_default_str();
  sub->add_option("--epsilon", t.epsilon)->capture_default_str();
}

json config_json(const Common& c) {
  if (c.config.empty()) return json::object();
  try {
    json j = json::parse(read_text(c.config));
    if (!j.is_object()) throw Error(ErrorKind::ConfigInvalid, "cli", c.config + ": expected a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, "cli", c.config + ": " + e.what());
  }
}

/// Applies config-file overrides for seed and threads.
Common resolve_common(Common c) {
  const json j = config_json(c);
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, "cli", c.config + ": " + e.what());
  }
  return c;
}

TrainConfig resolve_train(const TrainFlags& t, const Common& c) {
  TrainConfig cfg = t.cfg;
  cfg.variant = parse_variant(t.variant);
  cfg.activation = parse_activation(t.activation);
  cfg.coarse_form = t.literal ? CoarseForm::Literal : CoarseForm::Softmax;
  cfg.threads = c.threads;
  if (!c.config.empty()) cfg = train_config_from_json(config_json(c).dump(), cfg);
  cfg.check();
  return cfg;
}

TppConfig resolve_tpp(const TppFlags& t, const Common& c) {
  TppConfig cfg;
  cfg.alpha = Scaler::parse(t.alpha);
  cfg.beta = Scaler::parse(t.beta);
  cfg.epsilon = t.epsilon;
  const json j = config_json(c);
  try {
    if (j.contains("alpha")) cfg.alpha = Scaler::parse(j.at("alpha").get<std::string>());
    if (j.contains("beta")) cfg.beta = Scaler::parse(j.at("beta").get<std::string>());
    if (j.contains("epsilon")) cfg.epsilon = j.at("epsilon").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, "cli", c.config + ": " + e.what());
  }
  cfg.check();
  return cfg;
}

std::vector<std::string> class_names(const EmbeddingDataset& ds) {
  std::vector<std::string> out;
  for (const auto& b : ds.classes) out.push_back(b.class_name);
  return out;
}

/// Train/eval pair from an explicit eval dataset or a per-class holdout.
std::pair<EmbeddingDataset, EmbeddingDataset> split_for_eval(const std::string& data, const std::string& eval_data,
                                                             int train_per_class) {
  EmbeddingDataset ds = load_dataset(data);
  if (!eval_data.empty()) return {std::move(ds), load_dataset(eval_data)};
  if (train_per_class < 1) throw UsageError("pass --eval-data or --train-per-class");
  return holdout_split(ds, train_per_class);
}

// ---- subcommands ----------------------------------------------------------------------------

int cmd_validate(const std::string& data_flag, std::ostream& out, std::ostream& err) {
  const std::string root = data_root(data_flag);
  const EmbeddingDataset ds = load_dataset_unchecked(root);
  const ValidationReport report = validate(ds);
  if (report.ok()) {
    out << "ok: " << ds.num_videos() << " videos, " << ds.num_classes() << " classes, dim " << ds.dim << '\n';
    return 0;
  }
  out << report.to_string();
  if (!report.to_string().empty() && report.to_string().back() != '\n') out << '\n';
  err << Error(ErrorKind::ValidationFailure, "embedding_store",
               root + ": " + std::to_string(report.violations.size()) + " violation(s)")
             .what()
      << '\n';
  return 1;
}

int cmd_gen_synth(SyntheticConfig cfg, const Common& common, bool no_background, const std::string& out_dir,
                  std::ostream& out) {
  cfg.seed = common.seed;
  if (no_background) cfg.background = false;
  if (!common.config.empty()) cfg = synthetic_config_from_json(config_json(common).dump(), cfg);
  cfg.check();
  const EmbeddingDataset ds = generate_synthetic(cfg);
  save_dataset(ds, out_dir);
  write_text(fs::path(out_dir) / "synthetic.json", synthetic_config_to_json(cfg));
  out << "wrote " << ds.num_videos() << " videos, " << ds.num_classes() << " classes to " << out_dir << '\n';
  return 0;
}

int cmd_select(const std::string& data_flag, const TppConfig& tpp, const std::string& out_path,
               const std::string& install, std::ostream& out) {
  EmbeddingDataset ds = load_dataset(data_root(data_flag));
  json classes = json::array();
  for (int c = 0; c < ds.num_classes(); ++c) {
    const auto sel = select_subtext_set(candidates_of(ds, c), ds.classes[static_cast<std::size_t>(c)].global, tpp);
    json groups = json::array();
    for (const auto& s : sel.scores) groups.push_back({{"tpp", s.tpp}, {"sigma", s.sigma}, {"delta", s.delta}});
    classes.push_back({{"name", ds.classes[static_cast<std::size_t>(c)].class_name},
                       {"chosen", sel.chosen},
                       {"groups", std::move(groups)}});
    auto& bundle = ds.classes[static_cast<std::size_t>(c)];
    bundle.subtexts = bundle.candidate_groups[sel.chosen];
  }
  const json report{{"alpha", tpp.alpha.to_string()},
                    {"beta", tpp.beta.to_string()},
                    {"epsilon", tpp.epsilon},
                    {"classes", std::move(classes)}};
  emit(out_path, report.dump(2) + "\n", out);
  if (!install.empty()) save_dataset(ds, install);
  return 0;
}

int cmd_train(const std::string& data_flag, const TrainConfig& cfg, const Common& common, const std::string& model_path,
              const std::string& history_path, std::ostream& out) {
  const EmbeddingDataset ds = load_dataset(data_root(data_flag));
  const TrainResult result = train(ds, cfg, common.seed);
  save_model({result.params, class_names(ds)}, model_path);
  if (!history_path.empty()) write_text(history_path, history_csv(result.history));
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    out << "epoch " << last.epoch << " loss " << fmt(last.total) << " train_top1 " << fmt(last.train_top1) << '\n';
  }
  out << "saved " << model_path << '\n';
  return 0;
}

int cmd_eval(const std::string& data_flag, const std::string& model_path, bool mean_pool, const Common& common,
             const std::string& out_path, const std::string& profiles, const std::string& per_class,
             std::ostream& out) {
  if (mean_pool == !model_path.empty()) throw UsageError("pass exactly one of --model or --mean-pool");
  const EmbeddingDataset ds = load_dataset(data_root(data_flag));
  EvalReport report;
  if (mean_pool) {
    report = evaluate_mean_pool(ds, common.threads);
  } else {
    const SavedModel m = load_model(model_path);
    report = evaluate(ds, m.params, common.threads);
    if (!profiles.empty()) write_text(profiles, importance_profiles_csv(ds, m.params));
  }
  if (!per_class.empty()) write_text(per_class, per_class_csv(report));
  emit(out_path, report_to_json(report), out);
  return 0;
}

int cmd_ablate(const std::string& data_flag, const std::string& eval_data, int train_per_class,
               const TrainConfig& cfg, const Common& common, const std::string& out_path, std::ostream& out) {
  const auto [tr, ev] = split_for_eval(data_root(data_flag), eval_data, train_per_class);
  emit(out_path, ablation_csv(run_ablation(tr, ev, cfg, common.seed)), out);
  return 0;
}

int cmd_zero_shot(const std::string& data_flag, const std::string& model_path, const Common& common,
                  const std::string& out_path, std::ostream& out) {
  const EmbeddingDataset unseen = load_dataset(data_root(data_flag));
  const SavedModel m = load_model(model_path);
  const EvalReport trained = zero_shot_eval(m.params, m.trained_classes, unseen, common.threads);
  const EvalReport base = evaluate_mean_pool(unseen, common.threads);
  json j = json::parse(report_to_json(trained));
  j["mean_pool_top1"] = base.top1;
  j["gain"] = trained.top1 - base.top1;
  emit(out_path, j.dump(2) + "\n", out);
  return 0;
}

int cmd_few_shot(const std::string& data_flag, int shots, const TrainConfig& cfg, const Common& common,
                 const std::string& out_path, std::ostream& out) {
  const EmbeddingDataset ds = load_dataset(data_root(data_flag));
  const auto [tr, ev] = few_shot_split(ds, shots, common.seed);
  const TrainResult result = train(tr, cfg, common.seed);
  json j = json::parse(report_to_json(evaluate(ev, result.params, common.threads)));
  j["shots"] = shots;
  j["train_videos"] = tr.num_videos();
  j["eval_videos"] = ev.num_videos();
  emit(out_path, j.dump(2) + "\n", out);
  return 0;
}

int cmd_tpp_study(const std::string& data_flag, const std::string& eval_data, int train_per_class,
                  const TrainConfig& cfg, const TppConfig& tpp, const Common& common, const std::string& out_path,
                  std::ostream& out) {
  const auto [tr, ev] = split_for_eval(data_root(data_flag), eval_data, train_per_class);
  const TppStudy study = tpp_correlation_study(tr, ev, cfg, tpp, common.seed);
  const char* sign = study.r > 0 ? "positive" : (study.r < 0 ? "negative" : "zero");
  emit(out_path, tpp_study_csv(study) + "# pearson_r," + fmt(study.r) + "," + sign + "\n", out);
  if (!out_path.empty()) out << "pairs " << study.points.size() << " pearson_r " << fmt(study.r) << ' ' << sign << '\n';
  return 0;
}

int cmd_grad_check(const TrainFlags& flags, const Common& common, std::size_t samples, bool full, double step,
                   std::ostream& out, std::ostream& err) {
  InitOptions init;
  init.hidden = flags.cfg.hidden;
  init.heads = flags.cfg.heads;
  init.activation = parse_activation(flags.activation);
  GradFixture f = make_grad_fixture(common.seed, init);
  f.params.options.variant = parse_variant(flags.variant);
  f.params.options.coarse_form = flags.literal ? CoarseForm::Literal : CoarseForm::Softmax;
  f.params.tau = flags.cfg.tau;
  f.params.lambda = flags.cfg.lambda;
  std::vector<int> all(static_cast<std::size_t>(f.ds.num_videos()));
  for (int i = 0; i < f.ds.num_videos(); ++i) all[static_cast<std::size_t>(i)] = i;
  GradCheckOptions opts;
  opts.samples = samples;
  opts.full = full;
  opts.step = step;
  opts.seed = common.seed;
  const auto r = grad_check(make_batch(f.ds, all), f.ds.classes, f.params, opts);
  const bool pass = r.max_relative_error < kGradTolerance;
  out << "max_relative_error " << fmt(r.max_relative_error) << " coordinates " << r.coordinates << " worst "
      << r.worst_tensor << '[' << r.worst_index << "] tolerance " << fmt(kGradTolerance) << ' '
      << (pass ? "PASS" : "FAIL") << '\n';
  if (!pass) err << "cli.GradCheckFailed: max relative error " << fmt(r.max_relative_error) << '\n';
  return pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-granularity video-text alignment toolkit", "mgalign"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  TrainFlags tflags;
  TppFlags tpp_flags;
  SyntheticConfig synth;
  std::string data, eval_data, out_path, model, history, profiles, per_class, install;
  int train_per_class = 0;
  int shots = 2;
  bool mean_pool = false;
  bool no_background = false;
  std::size_t samples = 256;
  bool full_sweep = false;
  double step = 1e-5;
  const std::string data_help = "Dataset root (default: $" + std::string(kDataEnv) + ")";

  auto* validate_cmd = app.add_subcommand("validate", "Check a dataset store");
  validate_cmd->add_option("--data", data, data_help);

  auto* gen = app.add_subcommand("gen-synth", "Write a planted synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out_path, "Output dataset directory")->required();
  gen->add_option("--classes", synth.classes)->capture_default_str();
  gen->add_option("--atomics", synth.atomics)->capture_default_str();
  gen->add_option("--shared", synth.shared_fraction, "Fraction of atomics shared within class pairs")->capture_default_str();
  gen->add_option("--frames", synth.frames)->capture_default_str();
  gen->add_option("--dim", synth.dim)->capture_default_str();
  gen->add_option("--concentration", synth.concentration)->capture_default_str();
  gen->add_option("--noise", synth.noise)->capture_default_str();
  gen->add_option("--appearance", synth.appearance)->capture_default_str();
  gen->add_option("--distractor", synth.distractor)->capture_default_str();
  gen->add_option("--videos-per-class", synth.videos_per_class)->capture_default_str();
  gen->add_option("--candidate-groups", synth.candidate_groups)->capture_default_str();
  gen->add_flag("--identical-globals", synth.identical_globals);
  gen->add_flag("--no-background", no_background);

  auto* select = app.add_subcommand("select-subtexts", "Score candidate sub-text groups and pick one per class");
  add_common(select, common);
  select->add_option("--data", data, data_help);
  select->add_option("--out", out_path, "JSON report (default: stdout)");
  select->add_option("--install", install, "Write a copy of the dataset with the chosen groups installed");
  add_tpp_flags(select, tpp_flags);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", data, data_help);
  train_cmd->add_option("--out", out_path, "Model JSON")->required();
  train_cmd->add_option("--history", history, "Per-epoch CSV");
  add_train_flags(train_cmd, tflags);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--data", data, data_help);
  eval_cmd->add_option("--model", model, "Model JSON");
  eval_cmd->add_flag("--mean-pool", mean_pool, "Evaluate the untrained mean-pool baseline instead");
  eval_cmd->add_option("--out", out_path, "JSON report (default: stdout)");
  eval_cmd->add_option("--profiles", profiles, "CSV of per-frame coarse/fine importance");
  eval_cmd->add_option("--per-class", per_class, "CSV of per-class accuracy");

  auto* ablate = app.add_subcommand("ablate", "Train and compare baseline / coarse / fine / full");
  add_common(ablate, common);
  ablate->add_option("--data", data, data_help);
  ablate->add_option("--eval-data", eval_data, "Separate evaluation dataset");
  ablate->add_option("--train-per-class", train_per_class, "Hold out all but this many videos per class");
  ablate->add_option("--out", out_path, "CSV (default: stdout)");
  add_train_flags(ablate, tflags);

  auto* zero = app.add_subcommand("zero-shot", "Evaluate a model on classes it was not trained on");
  add_common(zero, common);
  zero->add_option("--data", data, data_help);
  zero->add_option("--model", model, "Model JSON")->required();
  zero->add_option("--out", out_path, "JSON report (default: stdout)");

  auto* few = app.add_subcommand("few-shot", "Train on a few videos per class and evaluate on the rest");
  add_common(few, common);
  few->add_option("--data", data, data_help);
  few->add_option("--shots", shots)->capture_default_str();
  few->add_option("--out", out_path, "JSON report (default: stdout)");
  add_train_flags(few, tflags);

  auto* study = app.add_subcommand("tpp-study", "Correlate sub-text TPP with accuracy across candidate groups");
  add_common(study, common);
  study->add_option("--data", data, data_help);
  study->add_option("--eval-data", eval_data, "Separate evaluation dataset");
  study->add_option("--train-per-class", train_per_class, "Hold out all but this many videos per class");
  study->add_option("--out", out_path, "CSV (default: stdout)");
  add_train_flags(study, tflags);
  add_tpp_flags(study, tpp_flags);

  auto* grad = app.add_subcommand("grad-check", "Compare backward against central differences on a fixture");
  add_common(grad, common);
  grad->add_option("--samples", samples)->capture_default_str();
  grad->add_flag("--full", full_sweep, "Check every coordinate");
  grad->add_option("--step", step)->capture_default_str();
  add_train_flags(grad, tflags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return 2;
  }

  auto* chosen = app.get_subcommands().front();
  try {
    const Common c = resolve_common(common);
    if (chosen == validate_cmd) return cmd_validate(data, out, err);
    if (chosen == gen) return cmd_gen_synth(synth, c, no_background, out_path, out);
    if (chosen == select) return cmd_select(data, resolve_tpp(tpp_flags, c), out_path, install, out);
    if (chosen == train_cmd) return cmd_train(data, resolve_train(tflags, c), c, out_path, history, out);
    if (chosen == eval_cmd) return cmd_eval(data, model, mean_pool, c, out_path, profiles, per_class, out);
    if (chosen == ablate) return cmd_ablate(data, eval_data, train_per_class, resolve_train(tflags, c), c, out_path, out);
    if (chosen == zero) return cmd_zero_shot(data, model, c, out_path, out);
    if (chosen == few) return cmd_few_shot(data, shots, resolve_train(tflags, c), c, out_path, out);
    if (chosen == study) {
      return cmd_tpp_study(data, eval_data, train_per_class, resolve_train(tflags, c), resolve_tpp(tpp_flags, c), c,
                           out_path, out);
    }
    if (chosen == grad) return cmd_grad_check(tflags, c, samples, full_sweep, step, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n' << chosen->help();
    return 2;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "cli.Unexpected: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mgalign::cli
