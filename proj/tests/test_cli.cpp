#include "fixtures.hpp"

#include "mgalign/cli.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

using fixtures::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = mgalign::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

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

std::vector<std::string> small_synth(const fs::path& out, const std::string& seed) {
  return {"gen-synth", "--out", out.string(), "--seed", seed, "--classes", "4", "--videos-per-class", "6",
          "--candidate-groups", "3"};
}

}  // namespace

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST(Cli, ModuleErrorsExitOneWithQualifiedMessage) {
  TempDir dir("cli_err");
  const auto r = run({"validate", "--data", (dir.path() / "absent").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("embedding_store.MissingFile:", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, GenSynthIsByteIdenticalAndValidates) {
  TempDir dir("cli_gen");
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(run(small_synth(a, "7")).code, 0);
  auto args = small_synth(b, "7");
  args.insert(args.end(), {"--threads", "3"});
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(run({"validate", "--data", a.string()}).code, 0);
}

TEST(Cli, GradCheckPasses) {
  const auto r = run({"grad-check", "--seed", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
}

TEST(Cli, PipelineDoesNotMutateItsInput) {
  TempDir dir("cli_pipe");
  const auto data = dir.path() / "data";
  ASSERT_EQ(run(small_synth(data, "1")).code, 0);
  const auto before = snapshot(data);
  const std::string model = (dir.path() / "model.json").string();

  EXPECT_EQ(run({"train", "--data", data.string(), "--out", model, "--epochs", "2", "--history",
                 (dir.path() / "h.csv").string()})
                .code,
            0);
  const auto ev = run({"eval", "--data", data.string(), "--model", model, "--profiles", (dir.path() / "p.csv").string()});
  EXPECT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("top1"), std::string::npos);
  EXPECT_EQ(slurp(dir.path() / "p.csv").rfind("video,class,frame,coarse,fine\n", 0), 0u);
  EXPECT_EQ(run({"eval", "--data", data.string(), "--mean-pool"}).code, 0);
  EXPECT_EQ(run({"select-subtexts", "--data", data.string(), "--install", (dir.path() / "sel").string()}).code, 0);
  EXPECT_EQ(run({"few-shot", "--data", data.string(), "--shots", "2", "--epochs", "1"}).code, 0);
  EXPECT_EQ(run({"ablate", "--data", data.string(), "--train-per-class", "4", "--epochs", "1"}).code, 0);

  const auto zs = run({"zero-shot", "--data", data.string(), "--model", model});
  EXPECT_EQ(zs.code, 1);
  EXPECT_NE(zs.err.find("ClassOverlap"), std::string::npos) << zs.err;

  // On this easy set every candidate group reaches the same accuracy, so the
  // correlation is undefined and reported as an error.
  const auto flat = run({"tpp-study", "--data", data.string(), "--train-per-class", "4", "--epochs", "1"});
  EXPECT_EQ(flat.code, 1);
  EXPECT_EQ(flat.err.rfind("eval_harness.DegenerateVariance:", 0), 0u) << flat.err;

  const auto noisy = dir.path() / "noisy";
  ASSERT_EQ(run({"gen-synth", "--out", noisy.string(), "--seed", "1", "--classes", "6", "--videos-per-class", "20",
                 "--candidate-groups", "5", "--noise", "1.5"})
                .code,
            0);
  const auto study =
      run({"tpp-study", "--data", noisy.string(), "--train-per-class", "4", "--epochs", "5", "--lr", "0.01"});
  EXPECT_EQ(study.code, 0) << study.err;
  EXPECT_NE(study.out.find("# pearson_r,"), std::string::npos);

  EXPECT_EQ(snapshot(data), before);
}

TEST(Cli, ConfigFileOverridesFlagsAndEnvironmentSuppliesData) {
  TempDir dir("cli_cfg");
  const auto data = dir.path() / "data";
  ASSERT_EQ(run(small_synth(data, "2")).code, 0);
  const auto cfg = dir.path() / "cfg.json";
  std::ofstream(cfg) << R"({"epochs": 1})";
  const auto h1 = dir.path() / "h1.csv", h2 = dir.path() / "h2.csv";
  ASSERT_EQ(run({"train", "--data", data.string(), "--out", (dir.path() / "m1.json").string(), "--history", h1.string(),
                 "--epochs", "5", "--config", cfg.string()})
                .code,
            0);
  ::setenv("MGALIGN_DATA", data.string().c_str(), 1);
  ASSERT_EQ(run({"train", "--out", (dir.path() / "m2.json").string(), "--history", h2.string(), "--epochs", "1"}).code, 0);
  ::unsetenv("MGALIGN_DATA");
  const std::string history = slurp(h1);
  EXPECT_EQ(history, slurp(h2));
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 2);
}
