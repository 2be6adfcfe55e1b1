#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(DELTASIM_BIN) + " " + args;
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() /
          ("deltasim_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string operator/(const std::string& name) const {
    return (dir / name).string();
  }
};

}  // namespace

TEST_CASE("generate, run, verify round trip exits 0") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  std::string report = tmp / "r.json";
  std::string timeline = tmp / "tl.json";
  CHECK(run_cli("generate --kind linear --n 8 --out " + trace +
                " > /dev/null") == 0);
  CHECK(run_cli("run --trace " + trace +
                " --budget 500 --report " + report + " --timeline " +
                timeline + " > /dev/null") == 0);
  CHECK(fs::exists(report));
  CHECK(fs::exists(timeline));
  CHECK(run_cli("verify --trace " + trace + " --timeline " + timeline +
                " --budget 500 --prefetch-n 2 > /dev/null") == 0);
}

TEST_CASE("usage problems exit 2") {
  CHECK(run_cli("run --no-such-flag 2> /dev/null") == 2);
  CHECK(run_cli("generate --kind nonsense --n 3 --out /dev/null "
                "2> /dev/null") == 2);
  CHECK(run_cli("2> /dev/null") == 2);
}

TEST_CASE("an infeasible run exits 3 and names the first unfit node") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  std::string err = tmp / "err.txt";
  REQUIRE(run_cli("generate --kind linear --n 4 --out " + trace +
                  " > /dev/null") == 0);
  CHECK(run_cli("run --trace " + trace + " --budget 1 2> " + err) == 3);
  std::string message = testutil::read_file(err);
  CHECK(message.find("node 0") != std::string::npos);
}

TEST_CASE("verify flags a tampered timeline with exit 4") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  std::string timeline = tmp / "tl.json";
  REQUIRE(run_cli("generate --kind linear --n 6 --out " + trace +
                  " > /dev/null") == 0);
  REQUIRE(run_cli("run --trace " + trace + " --budget 400 --timeline " +
                  timeline + " > /dev/null") == 0);
  // Append a backward-phase Evict.
  std::string text = testutil::read_file(timeline);
  std::string bogus =
      R"({"name":"Evict/B","ph":"X","ts":99999,"dur":0,"pid":0,"tid":0,)"
      R"("args":{"node":1,"bytes":100}}])";
  text.replace(text.rfind(']'), 1, "," + bogus);
  std::ofstream(timeline, std::ios::binary) << text;
  CHECK(run_cli("verify --trace " + trace + " --timeline " + timeline +
                " 2> /dev/null") == 4);
}

TEST_CASE("compare writes one row per grid cell") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  std::string out = tmp / "grid.csv";
  REQUIRE(run_cli("generate --kind resnet --n 4 --out " + trace +
                  " > /dev/null") == 0);
  CHECK(run_cli("compare --trace " + trace +
                " --budgets 6000000,9000000 --policies delta,baseline "
                "--heuristics base,greedy --out " + out + " > /dev/null") ==
        0);
  std::string csv = testutil::read_file(out);
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n';
  CHECK(rows == 9);  // header + 2 budgets x 2 policies x 2 heuristics
}

TEST_CASE("identical invocations produce byte-identical outputs") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  REQUIRE(run_cli("generate --kind resnet --n 8 --out " + trace +
                  " > /dev/null") == 0);
  std::string flags = "run --trace " + trace +
                      " --budget 20000000 --policy delta --heuristic base";
  REQUIRE(run_cli(flags + " --report " + (tmp / "r1.json") + " --timeline " +
                  (tmp / "t1.json") + " > /dev/null") == 0);
  REQUIRE(run_cli(flags + " --report " + (tmp / "r2.json") + " --timeline " +
                  (tmp / "t2.json") + " > /dev/null") == 0);
  CHECK(testutil::read_file(tmp / "r1.json") ==
        testutil::read_file(tmp / "r2.json"));
  CHECK(testutil::read_file(tmp / "t1.json") ==
        testutil::read_file(tmp / "t2.json"));
}

TEST_CASE("cost-model flags reach the engine") {
  TempDir tmp;
  std::string trace = tmp / "t.json";
  std::string r1 = tmp / "r1.json";
  std::string r2 = tmp / "r2.json";
  REQUIRE(run_cli("generate --kind resnet --n 8 --out " + trace +
                  " > /dev/null") == 0);
  // 1e6 bytes/s at fraction 1.0 is 1 byte/us: transfers get 22400x slower
  // than the default model, so offload decisions flip toward eviction.
  REQUIRE(run_cli("run --trace " + trace + " --budget 20000000 --report " +
                  r1 + " > /dev/null") == 0);
  REQUIRE(run_cli("run --trace " + trace + " --budget 20000000 " +
                  "--bandwidth 1e6 --eff-fraction 1.0 --report " + r2 +
                  " > /dev/null") == 0);
  CHECK(testutil::read_file(r1) != testutil::read_file(r2));
  CHECK(run_cli("run --trace " + trace + " --budget 20000000 "
                "--eff-fraction 0.0000001 2> /dev/null") == 2);
  CHECK(run_cli("run --trace " + trace + " --budget 20000000 "
                "--watermark 1.5 2> /dev/null") == 2);
  CHECK(run_cli("run --trace " + trace + " --budget 20000000 "
                "--swap-cost-mode sideways 2> /dev/null") == 2);
}

TEST_CASE("DELTA_SIM_SEED drives the generator when --seed is absent") {
  TempDir tmp;
  std::string a = tmp / "a.json";
  std::string b = tmp / "b.json";
  std::string c = tmp / "c.json";
  REQUIRE(run_cli("generate --kind linear --n 5 --out " + a +
                  " --seed 9 > /dev/null") == 0);
  CHECK(std::system(("DELTA_SIM_SEED=9 " + std::string(DELTASIM_BIN) +
                     " generate --kind linear --n 5 --out " + b +
                     " > /dev/null")
                        .c_str()) == 0);
  REQUIRE(run_cli("generate --kind linear --n 5 --out " + c +
                  " > /dev/null") == 0);
  CHECK(testutil::read_file(a) == testutil::read_file(b));
  CHECK(testutil::read_file(a) != testutil::read_file(c));
}
