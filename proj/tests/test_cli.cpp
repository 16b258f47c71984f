#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kBin = CASCIFF_BIN;  // injected by the build
const std::string kDir = "cli_scratch";

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunResult run(const std::string& args) {
  const std::string so = kDir + "/last_stdout", se = kDir + "/last_stderr";
  const int rc = std::system((kBin + " " + args + " >" + so + " 2>" + se).c_str());
  RunResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

// stdout lines of the form "key value ..." → first value per key
std::map<std::string, std::string> kv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto sp = line.find(' ');
    if (sp != std::string::npos && out.find(line.substr(0, sp)) == out.end())
      out[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

// flags shared by preprocess/train/eval so they agree on one configuration
const std::string kDataFlags =
    " --window 36000 --horizon 86400 --min-nodes 2 --max-nodes 100 --seed 5";

struct Scratch {
  Scratch() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

Scratch& scratch() {
  static Scratch s;  // wiped once, shared by every test case in file order
  return s;
}

std::string corpus() {
  static std::string path;
  if (path.empty()) {
    scratch();
    path = kDir + "/corpus.txt";
    const RunResult r =
        run("synth --nodes 80 --cascades 60 --prob 0.25 --seed 11 --out " + path);
    REQUIRE(r.code == 0);
  }
  return path;
}

}  // namespace

TEST_CASE("synth is deterministic per seed and labels its outputs") {
  scratch();
  const std::string a = kDir + "/synth_a.txt", b = kDir + "/synth_b.txt",
                    c = kDir + "/synth_c.txt";
  const RunResult ra = run("synth --nodes 50 --cascades 20 --prob 0.2 --seed 3 --out " + a);
  REQUIRE(ra.code == 0);
  const auto keys = kv(ra.out);
  CHECK(keys.count("corpus") == 1);
  CHECK(keys.count("manifest") == 1);
  CHECK(keys.at("cascades") == "20");
  REQUIRE(run("synth --nodes 50 --cascades 20 --prob 0.2 --seed 3 --out " + b).code == 0);
  REQUIRE(run("synth --nodes 50 --cascades 20 --prob 0.2 --seed 4 --out " + c).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
  CHECK(!slurp(a + ".manifest").empty());
  CHECK(slurp(a + ".manifest") == slurp(b + ".manifest"));
}

TEST_CASE("synth with zero spread emits root-only cascades") {
  scratch();
  const std::string p = kDir + "/solo.txt";
  REQUIRE(run("synth --nodes 30 --cascades 12 --prob 0 --seed 9 --out " + p).code == 0);
  const std::vector<std::string> rows = lines_of(slurp(p));
  REQUIRE(rows.size() == 12);
  for (const std::string& row : rows) {
    std::istringstream is(row);
    std::string id, root, pub, count, entries;
    std::getline(is, id, '\t');
    std::getline(is, root, '\t');
    std::getline(is, pub, '\t');
    std::getline(is, count, '\t');
    std::getline(is, entries, '\t');
    CHECK(count == "1");
    CHECK(entries == root + ":0");
  }
}

TEST_CASE("flag validation fails with exit code 2") {
  scratch();
  CHECK(run("synth --nodes 30 --cascades 5 --prob 1.5 --out " + kDir + "/x.txt").code == 2);
  CHECK(run("train --definitely-not-a-flag").code == 2);
  CHECK(run("").code == 2);  // a subcommand is required
  const RunResult bad = run("preprocess --data " + corpus() + kDataFlags +
                            " --min-nodes 0 --out-dir " + kDir + "/p0");
  CHECK(bad.code == 2);
}

TEST_CASE("missing input files fail with exit code 1") {
  scratch();
  const RunResult r =
      run("preprocess --data " + kDir + "/nowhere.txt --out-dir " + kDir + "/p1");
  CHECK(r.code == 1);
  CHECK(!r.err.empty());
}

TEST_CASE("preprocess writes split, stats and caches") {
  const std::string out = kDir + "/pre";
  const RunResult r = run("preprocess --data " + corpus() + kDataFlags + " --out-dir " + out);
  REQUIRE(r.code == 0);
  const auto keys = kv(r.out);
  REQUIRE(keys.count("split_manifest") == 1);
  REQUIRE(keys.count("stats_report") == 1);
  REQUIRE(keys.count("influence_cache") == 1);
  REQUIRE(keys.count("snapshot_cache") == 1);
  for (const char* k : {"split_manifest", "stats_report", "influence_cache", "snapshot_cache"})
    CHECK(fs::exists(keys.at(k)));

  // the split manifest opens with the generator pin and the seed
  const std::vector<std::string> man = lines_of(slurp(keys.at("split_manifest")));
  REQUIRE(man.size() > 2);
  CHECK(man[0] == "# rng: splitmix64-v1");
  CHECK(man[1] == "# seed: 5");

  // the stats report is exactly nine key-value lines
  const std::vector<std::string> stats = lines_of(slurp(keys.at("stats_report")));
  REQUIRE(stats.size() == 9);
  CHECK(stats[0].rfind("total_cascades ", 0) == 0);
  CHECK(stats[8].rfind("mean_target ", 0) == 0);

  // stdout repeats the counts under the same names as the stats file
  REQUIRE(keys.count("qualifying_cascades") == 1);
  const auto want = std::stoul(keys.at("train_cascades")) + std::stoul(keys.at("valid_cascades")) +
                    std::stoul(keys.at("test_cascades"));
  CHECK(std::stoul(keys.at("qualifying_cascades")) == want);
  CHECK(std::stoul(keys.at("qualifying_cascades")) >= 3);

  // a rerun into another directory produces byte-identical artifacts
  const std::string out2 = kDir + "/pre2";
  const RunResult r2 = run("preprocess --data " + corpus() + kDataFlags + " --out-dir " + out2);
  REQUIRE(r2.code == 0);
  const auto keys2 = kv(r2.out);
  CHECK(slurp(keys.at("split_manifest")) == slurp(keys2.at("split_manifest")));
  CHECK(slurp(keys.at("stats_report")) == slurp(keys2.at("stats_report")));
  CHECK(slurp(keys.at("influence_cache")) == slurp(keys2.at("influence_cache")));
  CHECK(slurp(keys.at("snapshot_cache")) == slurp(keys2.at("snapshot_cache")));
}

TEST_CASE("train writes a checkpoint whose eval reproduces the report") {
  const std::string out = kDir + "/run";
  const RunResult r = run("train --data " + corpus() + kDataFlags + " --out-dir " + out +
                          " --max-epochs 2 --batch-size 8");
  REQUIRE(r.code == 0);
  const auto keys = kv(r.out);
  REQUIRE(keys.count("checkpoint") == 1);
  REQUIRE(keys.count("report") == 1);
  REQUIRE(fs::exists(keys.at("checkpoint")));
  REQUIRE(fs::exists(keys.at("report")));
  REQUIRE(fs::exists(out + "/epochs.tsv"));
  CHECK(keys.count("test_msle") == 1);

  // the report repeats the printed metrics
  const auto report = kv(slurp(keys.at("report")));
  CHECK(report.at("tag") == "CasCIFF");
  CHECK(report.at("test_msle") == keys.at("test_msle"));
  CHECK(report.at("test_mape") == keys.at("test_mape"));
  CHECK(report.at("epochs_run") == keys.at("epochs_run"));

  // the epoch log has one row per epoch plus a header
  const std::vector<std::string> log = lines_of(slurp(out + "/epochs.tsv"));
  REQUIRE(log.size() == 1 + std::stoul(keys.at("epochs_run")));
  CHECK(log[0] == "epoch\treg\tcl\tae1\tae2\trgl\ttotal\tval\timproved\twall_ms");

  // an eval run on the stored configuration reproduces the numbers exactly
  const RunResult ev = run("eval --checkpoint " + keys.at("checkpoint") +
                           " --use-checkpoint-config --data " + corpus());
  REQUIRE(ev.code == 0);
  const auto ekeys = kv(ev.out);
  CHECK(ekeys.at("test_msle") == keys.at("test_msle"));
  CHECK(ekeys.at("test_mape") == keys.at("test_mape"));

  // a differing configuration is refused with both hashes named
  const RunResult bad =
      run("eval --checkpoint " + keys.at("checkpoint") + " --data " + corpus() +
          " --window 36000 --horizon 86400 --min-nodes 3 --max-nodes 100 --seed 5");
  CHECK(bad.code == 3);
  CHECK(bad.err.find("hash mismatch") != std::string::npos);
}

TEST_CASE("ablate reports the variant tag and structure") {
  const std::string out = kDir + "/ab";
  const RunResult r = run("ablate --data " + corpus() + kDataFlags + " --out-dir " + out +
                          " --variant Time --max-epochs 1 --batch-size 8");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("tag CasCIFF-Time ") != std::string::npos);
  const std::vector<std::string> tsv = lines_of(slurp(out + "/ablation.tsv"));
  REQUIRE(tsv.size() == 2);
  CHECK(tsv[0] ==
        "tag\tparameters\tgru_input_dim\tbest_val\ttest_msle\ttest_mape\tepochs_run");
  CHECK(tsv[1].rfind("CasCIFF-Time\t", 0) == 0);
  CHECK(tsv[1].find("\t64\t") != std::string::npos);  // GRU input without the time lane

  CHECK(run("ablate --data " + corpus() + " --variant Bogus --out-dir " + out).code == 2);
}

TEST_CASE("export-embeddings writes one row per cascade") {
  const std::string ckpt = kDir + "/run/model.ckpt";
  REQUIRE(fs::exists(ckpt));  // produced by the train test above
  const std::string csv = kDir + "/emb.csv";
  const RunResult r = run("export-embeddings --checkpoint " + ckpt +
                          " --use-checkpoint-config --data " + corpus() + " --split test --out " +
                          csv);
  REQUIRE(r.code == 0);
  const auto keys = kv(r.out);
  REQUIRE(keys.count("rows") == 1);
  const std::vector<std::string> rows = lines_of(slurp(csv));
  REQUIRE(rows.size() == 1 + std::stoul(keys.at("rows")));
  CHECK(rows[0].rfind("cascade_id,e0,", 0) == 0);
  CHECK(rows[0].find(",popularity,nodes,leaves,mean_reaction_s,leaders") != std::string::npos);
}

TEST_CASE("grad-check passes on the builtin scene") {
  const RunResult r = run("grad-check --toy --seed 7");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("result PASS") != std::string::npos);
  CHECK(r.out.find("max_rel_err") != std::string::npos);
}
