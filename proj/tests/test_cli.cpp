#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/cli.hpp"

namespace fs = std::filesystem;
using namespace negsamp;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "negsamp");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("negsamp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kSample = std::string(NEGSAMP_DATA_DIR) + "/sample_dialogues.jsonl";

// Small end-to-end run: corpus, split, grid, retrieval artifacts.
void pipeline(const fs::path& dir) {
  const std::string d = dir.string();
  spit(dir / "cfg.json", R"({"seed": 5,
    "model": {"hidden": 8, "embedding_dim": 8},
    "train": {"max_iterations": 60, "batch_size": 16, "learning_rate": 0.5, "eval_every": 20},
    "annotation": {"questions": 10}})");
  const std::vector<std::vector<std::string>> steps{
      {"make-synthetic-corpus", "--dialogues", "200", "--seed", "3", "--out", d + "/syn.jsonl"},
      {"ingest", "--config", d + "/cfg.json", "--output-dir", d, "--input", d + "/syn.jsonl"},
      {"stats", "--config", d + "/cfg.json", "--output-dir", d, "--input", d + "/train.jsonl"},
      {"train", "--config", d + "/cfg.json", "--output-dir", d},
      {"build-index", "--config", d + "/cfg.json", "--output-dir", d},
      {"eval", "--config", d + "/cfg.json", "--output-dir", d},
      {"grid", "--config", d + "/cfg.json", "--output-dir", d},
      {"export-anno", "--config", d + "/cfg.json", "--output-dir", d},
  };
  for (const auto& s : steps) {
    const auto r = invoke(s);
    ASSERT_EQ(r.code, 0) << s[0] << ": " << r.err;
  }
}

nlohmann::json without_timestamp(const fs::path& manifest) {
  auto j = nlohmann::json::parse(slurp(manifest));
  j.erase("created");
  return j;
}

}  // namespace

TEST(Cli, NoSubcommandPrintsUsage) {
  const auto r = invoke({});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownSubcommandPrintsUsage) {
  const auto r = invoke({"frobnicate"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, BinaryExitCodes) {
  EXPECT_NE(std::system((std::string(NEGSAMP_CLI) + " frobnicate > /dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(std::system((std::string(NEGSAMP_CLI) + " --help > /dev/null 2>&1").c_str()), 0);
}

TEST(Cli, StatsOnSampleMatchesHandCount) {
  const auto dir = scratch("stats");
  const auto r = invoke({"stats", "--input", kSample, "--out", (dir / "dist.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string expected =
      "1\t3\t0.5\tglad to help !\n"
      "2\t2\t0.3333333333333333\tplease restart your router .\n"
      "3\t1\t0.16666666666666666\tyes , in your account settings .\n";
  EXPECT_EQ(r.out, expected);
  EXPECT_EQ(slurp(dir / "dist.tsv"), expected);
  EXPECT_TRUE(fs::exists(dir / "dist.tsv.manifest.json"));
}

TEST(Cli, InvalidConfigListsEveryBadField) {
  const auto dir = scratch("badcfg");
  spit(dir / "cfg.json", R"({"sampling": {"transform": "power:x", "neg_ratio": 0},
                             "model": {"encoder": "lstm"}, "mystery": 1})");
  const auto r = invoke({"stats", "--config", (dir / "cfg.json").string(), "--input", kSample});
  EXPECT_EQ(r.code, 2);
  for (const char* field : {"sampling.transform", "sampling.neg_ratio", "model.encoder", "mystery"})
    EXPECT_NE(r.err.find(field), std::string::npos) << field << " missing from:\n" << r.err;
}

TEST(Cli, MalformedConfigJson) {
  const auto dir = scratch("badjson");
  spit(dir / "cfg.json", "{not json");
  EXPECT_EQ(invoke({"stats", "--config", (dir / "cfg.json").string(), "--input", kSample}).code, 2);
}

TEST(Cli, FlagsOverrideConfig) {
  const auto dir = scratch("override");
  spit(dir / "cfg.json", R"({"sampling": {"transform": "uniform", "neg_ratio": 2}})");
  const auto r = invoke({"build-trainset", "--config", (dir / "cfg.json").string(), "--input", kSample,
                      "--neg-ratio", "1", "--out", (dir / "ts.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(dir / "ts.jsonl.manifest.json"));
  EXPECT_EQ(m["config"]["sampling"]["transform"], "uniform");
  EXPECT_EQ(m["config"]["sampling"]["neg_ratio"], 1);
  // 6 positives, 1 negative each.
  std::istringstream lines(slurp(dir / "ts.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 12);
}

TEST(Cli, BadFlagValueIsUsageError) {
  EXPECT_EQ(invoke({"build-trainset", "--input", kSample, "--transform", "power:"}).code, 2);
  EXPECT_EQ(invoke({"eval", "--m", "abc"}).code, 2);
}

TEST(Cli, MissingInputIsInputError) {
  const auto r = invoke({"stats", "--input", "/nonexistent/dialogues.jsonl"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("/nonexistent/dialogues.jsonl"), std::string::npos);
}

TEST(Cli, TooFewDialoguesIsDataError) {
  const auto dir = scratch("few");
  spit(dir / "two.jsonl",
       R"({"id":"a","turns":[{"speaker":"user","text":"q"},{"speaker":"operator","text":"a"}]})" "\n"
       R"({"id":"b","turns":[{"speaker":"user","text":"q"},{"speaker":"operator","text":"a"}]})" "\n");
  EXPECT_EQ(invoke({"ingest", "--input", (dir / "two.jsonl").string(), "--output-dir", dir.string()}).code, 4);
}

TEST(Cli, PipelineProducesArtifacts) {
  const auto dir = scratch("pipe");
  pipeline(dir);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "train.ids", "ingest_issues.tsv",
                        "distribution.tsv", "model.ckpt", "model.loss.tsv", "index.bin", "eval.json",
                        "grid.txt", "grid.json", "grid_initial.ckpt", "grid_uniform.ckpt",
                        "annotation_sheet.tsv", "annotation_key.tsv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_TRUE(fs::exists(dir / (std::string(f) + ".manifest.json"))) << f;
  }

  // Grid table: header plus one line per (test, train) cell.
  std::istringstream table(slurp(dir / "grid.txt"));
  std::string line;
  std::getline(table, line);
  EXPECT_EQ(line.rfind("Test set (alternative responses)", 0), 0u);
  int cells = 0;
  while (std::getline(table, line)) {
    const double recall = std::stod(line.substr(line.find_last_of(' ') + 1));
    EXPECT_GE(recall, 0.0);
    EXPECT_LE(recall, 1.0);
    ++cells;
  }
  EXPECT_EQ(cells, 4);

  const auto eval = nlohmann::json::parse(slurp(dir / "eval.json"));
  EXPECT_EQ(eval["config"]["m"], 9);
  EXPECT_TRUE(eval["recall"].contains("recall@1"));

  const auto ingest = nlohmann::json::parse(slurp(dir / "train.jsonl.manifest.json"));
  EXPECT_EQ(ingest["command"], "ingest");
  EXPECT_EQ(ingest["seed"], 5);
  EXPECT_EQ(ingest["inputs"].size(), 1u);
  EXPECT_EQ(ingest["output"]["path"], (dir / "train.jsonl").string());
  EXPECT_EQ(ingest["output"]["fnv1a"].get<std::string>().size(), 16u);
  EXPECT_TRUE(ingest.contains("created"));
  EXPECT_TRUE(ingest.contains("argv"));

  const auto r = invoke({"retrieve", "--output-dir", dir.string(), "--query", "c0 c1", "--top-k", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream hits(r.out);
  std::getline(hits, line);
  EXPECT_EQ(line, "rank\tscore\tpair_id\tresponse");
  int rows = 0;
  while (std::getline(hits, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
    ++rows;
  }
  EXPECT_EQ(rows, 3);

  // Marked sheet: every response gets mark 1, so CR = 0 and UR = 1.
  std::istringstream sheet(slurp(dir / "annotation_sheet.tsv"));
  std::ostringstream marked;
  std::getline(sheet, line);
  marked << line << '\n';
  int sheet_rows = 0;
  while (std::getline(sheet, line)) {
    marked << line << "1\n";
    ++sheet_rows;
  }
  EXPECT_EQ(sheet_rows, 30);
  spit(dir / "marked.tsv", marked.str());
  const auto s = invoke({"score-anno", "--output-dir", dir.string(), "--sheet", (dir / "marked.tsv").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("model\tquestions\tCR\tUR\ndual\t10\t0\t1\n"), std::string::npos) << s.out;
}

TEST(Cli, RerunIsByteIdentical) {
  const auto dir = scratch("det");
  pipeline(dir);
  std::map<std::string, std::string> first;
  for (const auto& entry : fs::directory_iterator(dir)) first[entry.path().filename().string()] = slurp(entry.path());
  pipeline(dir);
  for (const auto& [name, bytes] : first) {
    const auto path = dir / name;
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json") {
      auto before = nlohmann::json::parse(bytes);
      before.erase("created");
      EXPECT_EQ(before, without_timestamp(path)) << name;
    } else {
      EXPECT_EQ(bytes, slurp(path)) << name;
    }
  }
  EXPECT_GT(first.size(), 30u);
}
