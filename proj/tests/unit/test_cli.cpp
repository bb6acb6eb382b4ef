// Runs the cpo binary as a subprocess and checks its observable contract.

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Sandbox {
 public:
  Sandbox() {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("cpo-cli-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  ~Sandbox() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  const fs::path& dir() const { return dir_; }

  void file(const std::string& name, const std::string& text) const {
    fs::create_directories((dir_ / name).parent_path());
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }

  Run run(const std::string& args) const {
    const fs::path err = dir_ / ".stderr";
    const std::string cmd =
        "cd '" + dir_.string() + "' && '" CPO_BINARY "' " + args + " 2>'" + err.string() + "'";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    fs::remove(err);
    return r;
  }

  std::set<std::string> listing() const {
    std::set<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) out.insert(fs::relative(e.path(), dir_).string());
    return out;
  }

 private:
  fs::path dir_;
};

const char* kTinyConfig = R"({
  "task": {"kind": "dict_swap", "lexicon_size": 12, "min_words": 2, "max_words": 4,
           "train": 48, "dev": 8, "test": 8},
  "model": {"layers": 1, "model_dim": 16, "heads": 2, "ff_dim": 32, "max_seq_len": 64},
  "adapter": {"rank": 2, "alpha": 4},
  "sft": {"lr": 0.003, "batch_size": 8, "epochs": 2},
  "finetune": {"lr": 0.001, "batch_size": 8, "epochs": 1},
  "eval": {"max_new": 24},
  "seed": 3,
  "run_dir": "run"
})";

double number_after(const std::string& text, const std::string& label) {
  const std::regex re(label + R"(\s*([-+0-9.eE]+))");
  std::smatch m;
  REQUIRE(std::regex_search(text, m, re));
  return std::stod(m[1].str());
}

}  // namespace

TEST_CASE("verify-theorem finds no violations on 1e5 samples") {
  Sandbox sb;
  const Run r = sb.run("verify-theorem --samples 100000 --seed 7");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("violations: 0") != std::string::npos);
}

TEST_CASE("gradcheck for cpo stays under 1e-4") {
  Sandbox sb;
  const Run r = sb.run("gradcheck --variant cpo");
  CHECK(r.exit_code == 0);
  CHECK(number_after(r.out, "max relative error:") <= 1e-4);
}

TEST_CASE("missing config prints usage and exits nonzero") {
  Sandbox sb;
  for (const std::string args : {"pipeline", "pipeline --config absent.json", "train --config absent.json"}) {
    CAPTURE(args);
    const Run r = sb.run(args);
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("Usage:") != std::string::npos);
    CHECK(r.err.find("error:") != std::string::npos);
  }
  CHECK(sb.run("").exit_code != 0);
}

TEST_CASE("errors are a single machine-parsable line") {
  Sandbox sb;
  sb.file("bad.json", "{\"seed\": 1, \"task\": {\"nonsense\": 2}}");
  const Run r = sb.run("pipeline --config bad.json");
  CHECK(r.exit_code != 0);
  CHECK(r.err.rfind("error: config: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("schema violations in JSONL report the line number") {
  Sandbox sb;
  sb.file("pairs.jsonl",
          "{\"id\":\"a\",\"direction\":\"en-xx\",\"source\":\"s\",\"preferred\":\"p\",\"dispreferred\":\"d\","
          "\"prov_w\":\"reference\",\"prov_l\":\"system_b\",\"score_w\":90,\"score_l\":10}\n"
          "{\"id\":\"b\",\"direction\":\"en-xx\"}\n");
  const Run r = sb.run("noise --pairs pairs.jsonl --out n.jsonl --seed 1");
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("pairs.jsonl:2") != std::string::npos);
  CHECK_FALSE(fs::exists(sb.dir() / "n.jsonl"));
}

TEST_CASE("seeded commands refuse to run without a seed") {
  Sandbox sb;
  const Run r = sb.run("gen-data --out data");
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("--seed") != std::string::npos);
  CHECK_FALSE(fs::exists(sb.dir() / "data"));
}

TEST_CASE("pipeline dry run prints the stage plan and touches no files") {
  Sandbox sb;
  sb.file("cfg.json", kTinyConfig);
  const auto before = sb.listing();
  const Run r = sb.run("pipeline --config cfg.json --dry-run");
  CHECK(r.exit_code == 0);
  for (const char* stage : {"generate", "pretrain", "build-preferences", "finetune:cpo", "evaluate", "report"}) {
    CHECK(r.out.find(stage) != std::string::npos);
  }
  CHECK(sb.listing() == before);
}

TEST_CASE("every writing subcommand is inert under --dry-run") {
  Sandbox sb;
  sb.file("cfg.json", kTinyConfig);
  REQUIRE(sb.run("gen-data --config cfg.json --out data").exit_code == 0);
  REQUIRE(sb.run("train --config cfg.json --steps 2 --train data/train.jsonl --dev data/dev.jsonl --out ck/sft")
              .exit_code == 0);
  REQUIRE(sb.run("build-prefs --config cfg.json --checkpoint ck/sft --records data/train.jsonl --out pairs.jsonl "
                 "--triplets-out triplets.jsonl")
              .exit_code == 0);
  const auto before = sb.listing();
  const std::vector<std::string> commands = {
      "gen-data --config cfg.json --out data2",
      "score --config cfg.json --triplets triplets.jsonl --out scored.jsonl",
      "build-prefs --triplets triplets.jsonl --out p2.jsonl",
      "noise --pairs pairs.jsonl --out noised.jsonl --seed 1",
      "train --config cfg.json --steps 1 --out ck/other",
      "finetune --config cfg.json --checkpoint ck/sft --pairs pairs.jsonl --steps 1 --out ck/cpo",
      "evaluate --corpus data/test.jsonl --checkpoint base=ck/sft --out report.txt",
      "pipeline --config cfg.json",
  };
  for (const auto& c : commands) {
    CAPTURE(c);
    const Run r = sb.run("--dry-run " + c);
    CHECK(r.exit_code == 0);
    CHECK(sb.listing() == before);
  }
}

TEST_CASE("--json carries the same content as the text output") {
  Sandbox sb;
  sb.file("cfg.json", kTinyConfig);
  const Run text = sb.run("gen-data --config cfg.json --out a");
  const Run js = sb.run("--json gen-data --config cfg.json --out b");
  REQUIRE(text.exit_code == 0);
  REQUIRE(js.exit_code == 0);
  const json j = json::parse(js.out);
  CHECK(number_after(text.out, "records: train") == j["records"]["train"].get<double>());
  CHECK(number_after(text.out, ", dev") == j["records"]["dev"].get<double>());
  CHECK(j["written"].size() == 3);

  const Run t = sb.run("verify-theorem --samples 2000 --seed 1");
  const Run jt = sb.run("--json verify-theorem --samples 2000 --seed 1");
  CHECK(number_after(t.out, "violations:") == json::parse(jt.out)["violations"].get<double>());
}

TEST_CASE("generated data and pipeline reports are byte-identical across runs") {
  Sandbox sb;
  sb.file("cfg.json", kTinyConfig);
  REQUIRE(sb.run("gen-data --config cfg.json --out a").exit_code == 0);
  REQUIRE(sb.run("gen-data --config cfg.json --out b").exit_code == 0);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl"}) {
    CHECK(slurp(sb.dir() / "a" / f) == slurp(sb.dir() / "b" / f));
  }

  json second = json::parse(kTinyConfig);
  second["run_dir"] = "run2";
  sb.file("cfg2.json", second.dump());
  REQUIRE(sb.run("pipeline --config cfg.json").exit_code == 0);
  REQUIRE(sb.run("pipeline --config cfg2.json").exit_code == 0);
  const std::string first = slurp(sb.dir() / "run/reports/main.txt");
  CHECK_FALSE(first.empty());
  CHECK(first == slurp(sb.dir() / "run2/reports/main.txt"));

  const Run rebuilt = sb.run("report --run-dir run --out rebuilt.txt");
  CHECK(rebuilt.exit_code == 0);
  CHECK(slurp(sb.dir() / "rebuilt.txt") == first);
}
