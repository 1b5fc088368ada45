#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "afa/dataset.hpp"
#include "afa/mixture.hpp"
#include "synthetic.hpp"

using namespace afa;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_command(const std::string& command) {
  CommandResult result;
  std::string wrapped = command + " 2>&1";
  FILE* pipe = popen(wrapped.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 512> buffer;
  while (fgets(buffer.data(), buffer.size(), pipe)) result.output += buffer.data();
  int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string cli() { return AFA_CLI_PATH; }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  std::string dir;
  explicit Workspace(const std::string& name) : dir("cli_" + name) {
    std::string cmd = "rm -rf " + dir + " && mkdir -p " + dir;
    REQUIRE(std::system(cmd.c_str()) == 0);
  }
  std::string path(const std::string& file) const { return dir + "/" + file; }
};

void write_classification_csv(const std::string& path, int n,
                              std::uint64_t seed) {
  SplitRng rng(seed);
  std::ofstream out(path);
  out << "alpha,beta,gamma,target\n";
  out.precision(10);
  for (int r = 0; r < n; ++r) {
    int y = rng.uniform() < 0.5 ? 0 : 1;
    out << (rng.gaussian() + (y ? 2.0 : -2.0)) << "," << rng.gaussian() << ","
        << rng.gaussian() << "," << y << "\n";
  }
}

}  // namespace

TEST_CASE("fit-surrogate is deterministic and writes a loadable model") {
  Workspace ws("fit");
  write_classification_csv(ws.path("train.csv"), 120, 3);

  std::string fit_cmd = cli() + " fit-surrogate --data " + ws.path("train.csv") +
                        " --components 2 --seed 11 --out ";
  CommandResult a = run_command(fit_cmd + ws.path("m1.afa"));
  CHECK(a.exit_code == 0);
  CommandResult b = run_command(fit_cmd + ws.path("m2.afa"));
  CHECK(b.exit_code == 0);
  CHECK(read_file(ws.path("m1.afa")) == read_file(ws.path("m2.afa")));

  MixtureSurrogate model = MixtureSurrogate::load(ws.path("m1.afa"));
  CHECK(model.task().d == 3);
  CHECK(model.task().num_classes == 2);
  CHECK(model.feature_names() ==
        std::vector<std::string>{"alpha", "beta", "gamma"});
}

TEST_CASE("missing input files fail with exit code 2 naming the path") {
  CommandResult r = run_command(
      cli() + " fit-surrogate --data nowhere.csv --out x.afa --seed 1");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("nowhere.csv") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  CommandResult r = run_command(cli() + " acquire --budget 2");
  CHECK(r.exit_code == 1);
  CommandResult unknown = run_command(cli() + " not-a-command");
  CHECK(unknown.exit_code == 1);
}

TEST_CASE("acquire produces traces, metrics, and caps oversized budgets") {
  Workspace ws("acquire");
  write_classification_csv(ws.path("train.csv"), 150, 5);
  write_classification_csv(ws.path("test.csv"), 40, 7);
  REQUIRE(run_command(cli() + " fit-surrogate --data " + ws.path("train.csv") +
                      " --components 2 --seed 1 --out " + ws.path("model.afa"))
              .exit_code == 0);

  std::string base = cli() + " acquire --model " + ws.path("model.afa") +
                     " --data " + ws.path("test.csv") + " --policy random";
  CommandResult r1 = run_command(base + " --budget 2 --seed 101 --out " +
                                 ws.path("t1.jsonl"));
  CHECK(r1.exit_code == 0);
  CommandResult r2 = run_command(base + " --budget 2 --seed 202 --out " +
                                 ws.path("t2.jsonl"));
  CHECK(r2.exit_code == 0);
  std::string t1 = read_file(ws.path("t1.jsonl"));
  std::string t2 = read_file(ws.path("t2.jsonl"));
  CHECK(t1 != t2);  // different seeds explore different features
  CHECK(t1.find("\"action\"") != std::string::npos);
  CHECK(t1.find("\"prediction\"") != std::string::npos);

  // same seed reproduces the same traces
  CommandResult r3 = run_command(base + " --budget 2 --seed 101 --out " +
                                 ws.path("t3.jsonl"));
  CHECK(r3.exit_code == 0);
  CHECK(read_file(ws.path("t3.jsonl")) == t1);

  CommandResult capped = run_command(base + " --budget 9 --seed 1 --metrics " +
                                     ws.path("m.csv"));
  CHECK(capped.exit_code == 0);
  CHECK(capped.output.find("capping") != std::string::npos);
  std::string metrics = read_file(ws.path("m.csv"));
  CHECK(metrics.find("instance,acquired,metric") == 0);
}

TEST_CASE("greedy acquisition through the CLI beats the prior on signal data") {
  Workspace ws("greedy");
  write_classification_csv(ws.path("train.csv"), 200, 9);
  write_classification_csv(ws.path("test.csv"), 50, 13);
  REQUIRE(run_command(cli() + " fit-surrogate --data " + ws.path("train.csv") +
                      " --components 2 --seed 2 --out " + ws.path("model.afa"))
              .exit_code == 0);
  CommandResult r = run_command(
      cli() + " acquire --model " + ws.path("model.afa") + " --data " +
      ws.path("test.csv") + " --policy greedy --budget 1 --cmi-samples 64 "
      "--seed 3");
  CHECK(r.exit_code == 0);
  auto at = r.output.find("accuracy: ");
  REQUIRE(at != std::string::npos);
  double accuracy = std::stod(r.output.substr(at + 10));
  CHECK(accuracy > 0.9);
}

TEST_CASE("config files supply defaults that flags override") {
  Workspace ws("config");
  write_classification_csv(ws.path("train.csv"), 80, 17);
  {
    std::ofstream cfg(ws.path("run.cfg"));
    cfg << "# run configuration\n";
    cfg << "seed = 21\n";
    cfg << "[fit-surrogate]\n";
    cfg << "components = 3\n";
  }
  std::string base = cli() + " fit-surrogate --data " + ws.path("train.csv") +
                     " --config " + ws.path("run.cfg") + " --out ";
  CommandResult from_cfg = run_command(base + ws.path("cfg.afa"));
  CHECK(from_cfg.exit_code == 0);
  CHECK(from_cfg.output.find("components=3") != std::string::npos);
  CHECK(from_cfg.output.find("seed=21") != std::string::npos);

  CommandResult overridden =
      run_command(base + ws.path("over.afa") + " --components 2");
  CHECK(overridden.exit_code == 0);
  CHECK(overridden.output.find("components=2") != std::string::npos);
}

TEST_CASE("session replays a scripted input stream deterministically") {
  Workspace ws("session");
  write_classification_csv(ws.path("train.csv"), 150, 23);
  REQUIRE(run_command(cli() + " fit-surrogate --data " + ws.path("train.csv") +
                      " --components 2 --seed 4 --out " + ws.path("model.afa"))
              .exit_code == 0);

  {
    std::ofstream script(ws.path("script.txt"));
    script << "oops\n";        // rejected, no state change
    script << "1.5\n";         // acquire the suggested feature
    script << "acquire 2 0.25\n";
    script << "stop\n";
  }
  std::string base = cli() + " session --model " + ws.path("model.afa") +
                     " --cmi-samples 32 --seed 7 --out ";
  CommandResult a = run_command(base + ws.path("a.jsonl") + " < " +
                                ws.path("script.txt"));
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("not a finite number: oops") != std::string::npos);
  CommandResult b = run_command(base + ws.path("b.jsonl") + " < " +
                                ws.path("script.txt"));
  CHECK(b.exit_code == 0);
  auto strip_path_line = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, kept;
    while (std::getline(in, line)) {
      if (line.rfind("trace written to", 0) != 0) kept += line + "\n";
    }
    return kept;
  };
  CHECK(strip_path_line(a.output) == strip_path_line(b.output));
  CHECK(read_file(ws.path("a.jsonl")) == read_file(ws.path("b.jsonl")));

  std::string trace = read_file(ws.path("a.jsonl"));
  CHECK(trace.find("\"final\":true") != std::string::npos);

  // immediate quit: prior posterior shown, empty trace saved
  {
    std::ofstream script(ws.path("quit.txt"));
    script << "quit\n";
  }
  CommandResult q = run_command(base + ws.path("q.jsonl") + " < " +
                                ws.path("quit.txt"));
  CHECK(q.exit_code == 0);
  CHECK(q.output.find("posterior:") != std::string::npos);
  CHECK(q.output.find("session over after 0 acquisitions") != std::string::npos);
  std::string empty_trace = read_file(ws.path("q.jsonl"));
  CHECK(empty_trace.find("\"observed\":[]") != std::string::npos);
}

TEST_CASE("eval-curve writes the curve csv") {
  Workspace ws("curve");
  write_classification_csv(ws.path("train.csv"), 120, 29);
  write_classification_csv(ws.path("test.csv"), 30, 31);
  REQUIRE(run_command(cli() + " fit-surrogate --data " + ws.path("train.csv") +
                      " --components 2 --seed 6 --out " + ws.path("model.afa"))
              .exit_code == 0);
  CommandResult r = run_command(cli() + " eval-curve --model " +
                                ws.path("model.afa") + " --data " +
                                ws.path("test.csv") +
                                " --policy random --budgets 0,1,3 --seed 8 "
                                "--workers 2 --out " + ws.path("curve.csv"));
  CHECK(r.exit_code == 0);
  std::string curve = read_file(ws.path("curve.csv"));
  CHECK(curve.find("budget,accuracy,stderr") == 0);
  int lines = 0;
  for (char c : curve)
    if (c == '\n') ++lines;
  CHECK(lines == 4);
}
