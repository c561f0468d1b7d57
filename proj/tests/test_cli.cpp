#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moledit/bench.hpp"
#include "moledit/cli.hpp"
#include "moledit/error.hpp"
#include "moledit/runconfig.hpp"

using namespace moledit;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "moledit");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("moledit_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// Small enough to pretrain in a few seconds.
const std::vector<std::string> kTiny = {
    "--set", "model.d_model=16",      "--set", "model.ffn=32",         "--set", "model.enc_layers=2",
    "--set", "model.dec_layers=2",    "--set", "pretrain.epochs=40",   "--set", "edit.max_steps=3",
    "--set", "bench.low=0.3",         "--set", "bench.high=0.5",       "--set", "bench.edit_size=2",
    "--set", "bench.loc_size=3",      "--set", "corpus.size=24"};

std::vector<std::string> tiny(std::vector<std::string> rest) {
  std::vector<std::string> args = kTiny;
  args.insert(args.end(), rest.begin(), rest.end());
  return args;
}

}  // namespace

TEST(RunConfig, DefaultsValidate) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.experts, 5u);
  EXPECT_EQ(c.top_k, 1u);
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig a;
  a.seed = 17;
  a.edit_lr_mol = 0.125;
  a.two_layer_experts = true;
  a.encoder_site = "enc3";
  RunConfig b;
  b.apply_text(a.to_text());
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(RunConfig, CommentsAndWhitespace) {
  RunConfig c;
  c.apply_text("# header\n\n  adapter.experts = 7   # trailing\nseed=3\n");
  EXPECT_EQ(c.experts, 7u);
  EXPECT_EQ(c.seed, 3u);
}

TEST(RunConfig, UnknownKeyIsUsageError) {
  RunConfig c;
  try {
    c.apply_text("seed = 1\nadapter.expert = 3\n", "cfg.txt");
    FAIL() << "expected UnknownConfigKey";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "UnknownConfigKey");
    EXPECT_EQ(e.error_class(), ErrorClass::Usage);
    EXPECT_NE(e.message().find("cfg.txt:2"), std::string::npos);
  }
}

TEST(RunConfig, BadValues) {
  RunConfig c;
  for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"seed", "-1"}, {"seed", "1.5"}, {"adapter.lambda", "nan"}, {"adapter.lambda", "x"},
           {"adapter.two_layer_experts", "yes"}}) {
    try {
      c.set(k, v);
      FAIL() << k << "=" << v;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "BadConfigValue") << k;
    }
  }
  EXPECT_THROW(c.apply_text("just words\n"), Error);
}

TEST(RunConfig, ValidateRejectsInconsistentValues) {
  auto expect_invalid = [](const std::string& key, const std::string& value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), Error) << key;
  };
  expect_invalid("adapter.top_k", "6");
  expect_invalid("threads", "0");
  expect_invalid("bench.low", "0.99");
  expect_invalid("edit.tau.cap", "0");
  expect_invalid("edit.encoder_site", "dec2");
}

TEST(RunConfig, SeedReachesEveryConsumer) {
  RunConfig c;
  c.seed = 99;
  EXPECT_EQ(c.model_config(10, 10, 5).seed, 99u);
  EXPECT_EQ(c.pretrain_options().seed, 99u);
  const auto e = c.editor_config(Task::Molecule, 80);
  EXPECT_EQ(e.seed, 99u);
  EXPECT_EQ(e.adapter.seed, 99u);
  EXPECT_EQ(e.max_output_len, 80u);
}

TEST(RunConfig, TaskSpecificEditSettings) {
  RunConfig c;
  c.set("edit.lr.cap", "0.5");
  c.set("edit.tau.mol", "0.7");
  EXPECT_DOUBLE_EQ(c.editor_config(Task::Caption, 64).lr, 0.5);
  EXPECT_DOUBLE_EQ(c.editor_config(Task::Molecule, 64).tau, 0.7);
  EXPECT_DOUBLE_EQ(c.editor_config(Task::Molecule, 64).lr, 2e-3);
}

TEST(BlobHash, MatchesGit) {
  EXPECT_EQ(cli::git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(cli::git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(BlobHash, MissingFileIsIoError) {
  try {
    cli::file_hash("/nonexistent/moledit/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "IoError");
  }
}

TEST(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(run_cli({}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsageError);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, cli::kOk);
  EXPECT_NE(r.out.find("gen-corpus"), std::string::npos);
}

TEST(Cli, UnknownSetKeyIsUsageError) {
  const auto dir = fresh_dir("badkey");
  const auto r = run_cli({"--set", "nope=1", "gen-corpus", "--out", (dir / "c.jsonl").string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("UnknownConfigKey"), std::string::npos);
}

TEST(Cli, ConfigFileThenOverrides) {
  const auto dir = fresh_dir("cfg");
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "corpus.size = 5\n";
  }
  const auto out = dir / "c.jsonl";
  ASSERT_EQ(run_cli({"--config", (dir / "run.cfg").string(), "gen-corpus", "--out", out.string()}).code, 0);
  EXPECT_EQ(line_count(out), 5u);
  ASSERT_EQ(run_cli({"--config", (dir / "run.cfg").string(), "--set", "corpus.size=7", "gen-corpus", "--out",
                     out.string()})
                .code,
            0);
  EXPECT_EQ(line_count(out), 7u);
}

TEST(Cli, GenCorpusIsDeterministic) {
  const auto dir = fresh_dir("gen");
  ASSERT_EQ(run_cli({"--seed", "4", "gen-corpus", "--out", (dir / "a.jsonl").string(), "--size", "30"}).code, 0);
  ASSERT_EQ(run_cli({"--seed", "4", "gen-corpus", "--out", (dir / "b.jsonl").string(), "--size", "30"}).code, 0);
  ASSERT_EQ(run_cli({"--seed", "5", "gen-corpus", "--out", (dir / "c.jsonl").string(), "--size", "30"}).code, 0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
  EXPECT_EQ(bench::read_jsonl((dir / "a.jsonl").string()).size(), 30u);
}

TEST(Cli, GenCorpusSizeZeroWritesEmptyFile) {
  const auto dir = fresh_dir("gen0");
  ASSERT_EQ(run_cli({"gen-corpus", "--out", (dir / "c.jsonl").string(), "--size", "0"}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "c.jsonl"));
  EXPECT_EQ(fs::file_size(dir / "c.jsonl"), 0u);
}

TEST(Cli, MalformedCorpusIsDataError) {
  const auto dir = fresh_dir("bad");
  {
    std::ofstream c(dir / "c.jsonl");
    c << "{not json\n";
  }
  const auto r = run_cli({"pretrain", "--corpus", (dir / "c.jsonl").string(), "--task", "cap", "--out",
                          (dir / "m").string()});
  EXPECT_EQ(r.code, cli::kDataError);
}

TEST(Cli, BadTaskIsUsageError) {
  const auto dir = fresh_dir("task");
  ASSERT_EQ(run_cli({"gen-corpus", "--out", (dir / "c.jsonl").string(), "--size", "3"}).code, 0);
  const auto r = run_cli({"pretrain", "--corpus", (dir / "c.jsonl").string(), "--task", "protein", "--out",
                          (dir / "m").string()});
  EXPECT_EQ(r.code, cli::kUsageError);
}

// One tiny run through every stage; checks the artifacts each stage promises.
TEST(Cli, PipelineEndToEnd) {
  const auto dir = fresh_dir("pipe");
  const auto corpus = (dir / "corpus.jsonl").string();
  const auto model = (dir / "model").string();
  const auto bench_dir = (dir / "bench").string();
  const auto edited = (dir / "edited").string();

  ASSERT_EQ(run_cli(tiny({"gen-corpus", "--out", corpus})).code, 0);
  auto r = run_cli(tiny({"pretrain", "--corpus", corpus, "--task", "mol", "--out", model}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(model + ".report.json"));
  EXPECT_EQ(report.at("task"), "mol");
  EXPECT_EQ(report.at("epoch_loss").size(), 40u);

  r = run_cli(tiny({"bench-build", "--model", model, "--corpus", corpus, "--task", "mol", "--out", bench_dir}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(bench_dir) / "pre_edit.jsonl"));

  // A molecule checkpoint cannot build a caption benchmark.
  r = run_cli(tiny({"bench-build", "--model", model, "--corpus", corpus, "--task", "cap", "--out",
                    (dir / "bench_cap").string()}));
  EXPECT_EQ(r.code, cli::kUsageError);

  r = run_cli(tiny({"edit", "--model", model, "--bench", bench_dir, "--task", "mol", "--out", edited}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(fs::path(edited) / "edit_log.jsonl"), 2u);

  const auto eval_path = (dir / "eval.json").string();
  r = run_cli(tiny({"eval", "--edited", edited, "--bench", bench_dir, "--task", "mol", "--report", eval_path}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto eval = nlohmann::json::parse(slurp(eval_path));
  EXPECT_TRUE(eval.contains("inputs"));
  EXPECT_TRUE(eval.contains("config"));

  r = run_cli(tiny({"eval", "--edited", edited, "--bench", bench_dir, "--task", "cap", "--report", eval_path}));
  EXPECT_EQ(r.code, cli::kUsageError);

  fs::remove(fs::path(bench_dir) / "pre_edit.jsonl");
  r = run_cli(tiny({"eval", "--edited", edited, "--bench", bench_dir, "--task", "mol", "--report", eval_path}));
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("MissingPreEditCache"), std::string::npos);

  const auto rat_path = (dir / "rationale.json").string();
  r = run_cli(tiny({"rationale", "--edited", edited, "--report", rat_path}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(rat_path));
}

TEST(Cli, ResumeWithOtherModelConfigIsRejected) {
  const auto dir = fresh_dir("resume");
  const auto corpus = (dir / "corpus.jsonl").string();
  const auto model = (dir / "model").string();
  ASSERT_EQ(run_cli(tiny({"gen-corpus", "--out", corpus})).code, 0);
  ASSERT_EQ(run_cli(tiny({"pretrain", "--corpus", corpus, "--task", "cap", "--out", model})).code, 0);
  auto args = tiny({"--set", "model.d_model=24", "pretrain", "--corpus", corpus, "--task", "cap", "--out",
                    (dir / "model2").string(), "--resume", model});
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("ConfigHashMismatch"), std::string::npos);
  // Same configuration resumes.
  EXPECT_EQ(run_cli(tiny({"pretrain", "--corpus", corpus, "--task", "cap", "--out", (dir / "model3").string(),
                          "--resume", model}))
                .code,
            0);
}
