#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LOCCAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path work_dir() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / "loccal_cli_unit";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("full offline run exits 0") {
    const fs::path d = work_dir();
    const std::string w = d.string();
    REQUIRE(run("synth --out " + w + "/corpus --problems 40 --cache " + w + "/cache --model m --seed 2") == 0);
    REQUIRE(run("sample --manifest " + w + "/corpus/manifest.jsonl --out " + w +
                "/sampled.jsonl --offline --cache " + w + "/cache --model m") == 0);
    REQUIRE(run("label --manifest " + w + "/sampled.jsonl --out " + w + "/labels.jsonl --stats " +
                w + "/stats.csv") == 0);
    REQUIRE(run("estimate --manifest " + w + "/sampled.jsonl --estimator token_prob --out " + w +
                "/tp.jsonl") == 0);
    REQUIRE(run("estimate --manifest " + w + "/sampled.jsonl --estimator multisample --out " + w +
                "/ms.jsonl") == 0);
    REQUIRE(run("eval --labels " + w + "/labels.jsonl --confidences " + w + "/tp.jsonl " + w +
                "/ms.jsonl --out " + w + "/eval") == 0);
    for (const char* f : {"report.json", "table.csv", "table.txt", "reliability.csv", "reliability.svg"})
      CHECK(fs::exists(d / "eval" / f));
  }

  TEST_CASE("configuration errors exit 2") {
    CHECK(run("label --no-such-flag") == 2);
    CHECK(run("frobnicate") == 2);
    const std::string w = work_dir().string();
    std::ofstream(work_dir() / "pc.json") << "{\"proj_dim\": 3}";
    CHECK(run("estimate --manifest " + w + "/corpus/manifest.jsonl --estimator probe --labels " + w +
              "/labels.jsonl --probe-config " + w + "/pc.json --out " + w + "/x.jsonl") == 2);
    unsetenv("LOCCAL_CLI_NO_KEY");
    CHECK(run("sample --manifest " + w + "/corpus/manifest.jsonl --out " + w +
              "/y.jsonl --cache " + w + "/empty_cache --base-url http://127.0.0.1:1/v1 --model m "
              "--auth-env LOCCAL_CLI_NO_KEY") == 2);
  }

  TEST_CASE("data errors exit 3") {
    const fs::path bad = work_dir() / "bad.jsonl";
    std::ofstream(bad) << "{\"kind\":\"record\",\"schema_version\":\"v1\",\"id\":3}\n";
    CHECK(run("label --manifest " + bad.string() + " --out " + (work_dir() / "l.jsonl").string()) == 3);
  }

  TEST_CASE("offline cache miss exits 4") {
    const std::string w = work_dir().string();
    CHECK(run("sample --manifest " + w + "/corpus/manifest.jsonl --out " + w +
              "/z.jsonl --offline --cache " + w + "/empty_cache --model other") == 4);
  }
}
