#include "pts/cli.hpp"
#include "pts/jsonl.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace pts {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pts_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Cli, Fig1SelectsDependents) {
  const auto dir = scratch("fig1");
  const auto g = run({"generate", "--fixture", "fig1", "--sim-changes", "20", "--out", (dir / "corpus").string()});
  ASSERT_EQ(g.code, kExitOk) << g.err;
  const auto s = run({"select", "--corpus", (dir / "corpus").string(), "--files", "file1,file2"});
  ASSERT_EQ(s.code, kExitOk) << s.err;
  EXPECT_EQ(s.out, "test1\t1\ntest2\t1\ntest3\t1\ntest4\t1\n");
  fs::remove_all(dir);
}

TEST(Cli, EvaluateTrivialSelection) {
  const auto dir = scratch("evaluate");
  const Json input = Json::array({Json{{"dependent", {"a", "b"}}, {"selected", {"a", "b"}}, {"failed", {"a"}},
                                       {"flaked", {"b"}}}});
  std::ofstream(dir / "in.json") << input.dump();
  const auto r = run({"evaluate", "--input", (dir / "in.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json report = Json::parse(r.out);
  for (const char* k : {"test_recall", "change_recall", "selection_rate", "test_recall_with_flakes"}) {
    EXPECT_DOUBLE_EQ(report[k]["value"].get<double>(), 1.0) << k;
  }
  fs::remove_all(dir);
}

TEST(Cli, ValidationErrorsExitTwo) {
  const auto dir = scratch("errors");
  EXPECT_EQ(run({"bogus"}).code, kExitValidation);
  EXPECT_EQ(run({"train", "--trees", "many"}).code, kExitValidation);
  // Selected outside dependent.
  std::ofstream(dir / "bad.json") << R"([{"dependent":["a"],"selected":["b"],"failed":[],"flaked":[]}])";
  const auto r = run({"evaluate", "--input", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("InvalidInput"), std::string::npos) << r.err;
  std::ofstream(dir / "cfg.json") << R"({"no-such-key": 1})";
  EXPECT_EQ(run({"--config", (dir / "cfg.json").string(), "generate", "--out", (dir / "x").string()}).code,
            kExitValidation);
  fs::remove_all(dir);
}

TEST(Cli, FlagsOverrideConfig) {
  const auto dir = scratch("config");
  std::ofstream(dir / "cfg.json") << R"({"seed": 4, "sim-changes": 30})";
  const auto r = run({"--config", (dir / "cfg.json").string(), "generate", "--fixture", "fig1", "--seed", "9",
                      "--out", (dir / "c").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json effective = Json::parse(slurp(dir / "c" / "config.json"));
  EXPECT_EQ(effective["seed"], 9);
  EXPECT_EQ(effective["sim-changes"], 30);
  const Json manifest = Json::parse(slurp(dir / "c" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 9);
  EXPECT_EQ(manifest["counts"]["changes"], 30);
  fs::remove_all(dir);
}

TEST(Cli, GenerateIsDeterministic) {
  const auto dir = scratch("det");
  std::ofstream(dir / "sim.json") << R"({"files": 200, "libraries": 40, "tests": 80, "projects": 2,
                                        "changes": 800, "timespan_days": 20})";
  for (const char* d : {"a", "b"}) {
    ASSERT_EQ(run({"generate", "--sim-config", (dir / "sim.json").string(), "--seed", "3", "--out",
                   (dir / d).string()})
                  .code,
              kExitOk);
  }
  for (const char* f : {"graph.jsonl", "changes.jsonl", "outcomes.jsonl", "manifest.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  fs::remove_all(dir);
}

TEST(Cli, RetrainGateFailureExitsThree) {
  const auto dir = scratch("retrain");
  std::ofstream(dir / "sim.json") << R"({"files": 300, "libraries": 60, "tests": 150, "projects": 3,
                                        "changes": 4000, "timespan_days": 30})";
  ASSERT_EQ(run({"generate", "--sim-config", (dir / "sim.json").string(), "--out", (dir / "c").string()}).code,
            kExitOk);
  const std::vector<std::string> common{"retrain", "--corpus", (dir / "c").string(), "--registry",
                                        (dir / "reg").string(), "--cycles", "1", "--window-days", "21",
                                        "--trees", "20", "--out", (dir / "o").string()};
  auto args = common;
  args.insert(args.end(), {"--gate", "SelectionRate < 0 at TestRecall = 0.5"});
  const auto r = run(args);
  EXPECT_EQ(r.code, kExitGateFailure) << r.err;
  EXPECT_FALSE(fs::exists(dir / "reg" / "CURRENT"));

  args = common;
  args.insert(args.end(), {"--gate", "SelectionRate <= 1 at TestRecall = 0.5"});
  const auto ok = run(args);
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_TRUE(fs::exists(dir / "reg" / "CURRENT"));

  args = common;
  args.insert(args.end(), {"--gate", "SelectionRate <= 0.3 at"});
  EXPECT_EQ(run(args).code, kExitValidation);
  fs::remove_all(dir);
}

TEST(Cli, PlotWritesSvg) {
  const auto dir = scratch("plot");
  std::ofstream(dir / "c.csv") << "x,y\n0,0\n0.5,0.8\n1,1\n";
  const auto r = run({"plot", "--series", (dir / "c.csv").string() + ":x:y:curve", "--out", (dir / "p.svg").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string svg = slurp(dir / "p.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("curve"), std::string::npos);
  EXPECT_EQ(run({"plot", "--series", (dir / "c.csv").string() + ":x:z:curve", "--out", (dir / "q.svg").string()}).code,
            kExitValidation);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pts
