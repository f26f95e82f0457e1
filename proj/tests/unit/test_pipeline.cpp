#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "loccal/error.hpp"
#include "loccal/pipeline.hpp"

using namespace loccal;

namespace {

struct Corpus {
  std::filesystem::path dir;
  RunConfig config;
  SynthResult synth;
  LabelResult labels;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus out;
    out.dir = std::filesystem::temp_directory_path() / "loccal_pipeline_unit";
    std::filesystem::remove_all(out.dir);
    out.config.endpoint.model_name = "synth-model";
    out.config.seed = 4;
    out.config.folds.seed = 4;
    out.config.probe.epochs = 4;
    out.config.probe.proj_dim = 8;
    out.config.probe.embedding_tag = "MIDDLE";
    SynthConfig sc;
    sc.problems = 80;
    sc.seed = 4;
    out.synth = synthesize(sc, out.config, out.dir, out.dir / "cache");
    out.labels = label_manifest(out.synth.manifest, out.config);
    return out;
  }();
  return c;
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char b[64];
  std::snprintf(b, sizeof(b), "%.6f", v);
  return b;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("ingest raw records") {
    std::stringstream in(
        R"({"id":"a","dataset":"d","prompt":"p","passed":false,"code":"x = 1\ny = 2\n","gen_tokens":[["x =",0.9],[" 1\ny",0.5],[" = 2\n",0.8]],"patches":[{"code":"x = 1\ny = 3\n","source":"model_fixer","fixer":"f","passes_tests":true}]})"
        "\n"
        R"({"id":"b","dataset":"d","prompt":"p","passed":true,"code":"z\n","token_probs":[0.7,0.9]})"
        "\n");
    const DatasetManifest m = ingest_raw(in, {});
    REQUIRE(m.records.size() == 2);
    CHECK(m.records[0].solution.line_spans.size() == 2);
    REQUIRE(m.records[0].solution.gen_tokens);
    RunConfig cfg;
    const ConfidenceFile tp = estimate_tokenprob(m, cfg);
    CHECK(tp.records[0].conf.line_conf == std::vector<double>{0.5, 0.5});
    const LabelResult lr = label_manifest(m, cfg);
    REQUIRE(lr.labels.records.size() == 2);
    CHECK(lr.labels.records[0].labels.line_kept == std::vector<bool>{true, false});
    CHECK(lr.labels.records[1].patch_source == "passed");
  }

  TEST_CASE("label counts match a recount") {
    const Corpus& c = corpus();
    std::map<std::string, LabelStats> expect;
    std::size_t discarded = 0;
    for (const ManifestRecord& r : c.synth.manifest.records) {
      for (const std::string key : {r.problem.dataset, std::string("Total")}) {
        LabelStats& s = expect[key];
        ++s.available;
        (r.problem.passed ? s.passed : s.failed)++;
      }
      const LabelRecord* lr = c.labels.labels.find(r.problem.id);
      if (!lr) {
        ++discarded;
        CHECK(!r.problem.passed);
        continue;
      }
      std::size_t not_kept = 0;
      for (bool k : lr->labels.token_kept) not_kept += !k;
      for (const std::string key : {r.problem.dataset, std::string("Total")}) {
        LabelStats& s = expect[key];
        ++s.used_problems;
        s.total_tokens += r.solution.tokens.size();
        if (lr->patch_source == "model_fixer") {
          ++s.patched_model;
          s.not_kept_model += not_kept;
          s.tokens_model += r.solution.tokens.size();
        } else if (lr->patch_source == "reference_fallback") {
          ++s.patched_reference;
          s.not_kept_reference += not_kept;
          s.tokens_reference += r.solution.tokens.size();
        }
      }
      if (r.problem.passed) CHECK(lr->labels.problem_kept);
    }
    CHECK(discarded == c.labels.discarded.size());
    for (const LabelStats& s : c.labels.stats) {
      LabelStats e = expect.at(s.dataset);
      e.dataset = s.dataset;
      CHECK(s == e);
    }
    // Labels are the realized draws for every labeled problem.
    for (const LabelRecord& lr : c.labels.labels.records)
      CHECK(lr.labels.token_kept == c.synth.realized.at(lr.problem_id));
  }

  TEST_CASE("eval table equals direct metric calls") {
    const Corpus& c = corpus();
    RunConfig cfg = c.config;
    cfg.offline = true;
    LlmClient client(cfg.endpoint, c.dir / "cache", true);
    DatasetManifest m = c.synth.manifest;
    sample_variants(m, client, cfg);
    const std::vector<ConfidenceFile> confs{estimate_tokenprob(m, cfg), estimate_multisample(m, cfg),
                                            estimate_reflective(m, client, &c.labels.labels, cfg)};
    const EvalResult ev = evaluate(confs, c.labels.labels, cfg);
    std::istringstream rows(ev.table_csv);
    std::string header;
    std::getline(rows, header);
    CHECK(header ==
          "technique,partition,line_bss,line_ece,line_auc,line_scaled_bss,line_scaled_ece,"
          "token_bss,token_ece,token_auc,token_scaled_bss,token_scaled_ece");
    std::size_t row = 0;
    for (const ConfidenceFile& cf : confs) {
      const auto samples = join_samples(cf, c.labels.labels);
      const auto reports = calib::crossfold_evaluate(samples, cfg.folds, cfg.buckets, cfg.scope);
      std::string line;
      REQUIRE(std::getline(rows, line));
      std::string expect = cf.name + ",all";
      for (Granularity g : {Granularity::kLine, Granularity::kToken}) {
        std::vector<PredictionSample> sub;
        for (const auto& s : samples)
          if (s.granularity == g) sub.push_back(s);
        const double rate = calib::mean_outcome(sub);
        const double bss = calib::skill_score(calib::brier(sub), calib::brier_ref(rate));
        const CalibrationReport* r = nullptr;
        for (const auto& rr : reports)
          if (rr.granularity == g) r = &rr;
        REQUIRE(r);
        expect += "," + fmt6(bss) + "," + fmt6(calib::ece(sub, cfg.buckets).ece) + "," +
                  fmt6(calib::auc_roc(sub)) + "," + fmt6(r->scaled_bss) + "," + fmt6(r->scaled_ece);
      }
      CHECK(line == expect);
      ++row;
    }
    CHECK(row == 3);
    CHECK(ev.curves_svg.find("<svg") == 0);
  }

  TEST_CASE("oracle and constant confidences") {
    const Corpus& c = corpus();
    const LabelFile& lf = c.labels.labels;
    ConfidenceFile oracle_cf, constant_cf;
    oracle_cf.name = "oracle";
    constant_cf.name = "constant";
    std::vector<bool> all_tokens, all_lines;
    for (const LabelRecord& r : lf.records) {
      all_tokens.insert(all_tokens.end(), r.labels.token_kept.begin(), r.labels.token_kept.end());
      all_lines.insert(all_lines.end(), r.labels.line_kept.begin(), r.labels.line_kept.end());
    }
    for (const LabelRecord& r : lf.records) {
      ConfidenceRecord o{r.problem_id, r.dataset, {}, true};
      for (bool k : r.labels.token_kept) o.conf.token_conf.push_back(k);
      for (bool k : r.labels.line_kept) o.conf.line_conf.push_back(k);
      o.conf.problem_conf = r.labels.problem_kept;
      oracle_cf.records.push_back(o);
      ConfidenceRecord k = o;
      k.conf.token_conf.assign(r.labels.token_kept.size(), base_rate(all_tokens));
      k.conf.line_conf.assign(r.labels.line_kept.size(), base_rate(all_lines));
      k.conf.problem_conf = 0.5;
      constant_cf.records.push_back(k);
    }
    const EvalResult ev = evaluate({oracle_cf, constant_cf}, lf, c.config);
    const CalibrationReport* o = find_report(ev.estimators[0], "all", Granularity::kLine);
    REQUIRE(o);
    CHECK(o->bss == 1.0);
    CHECK(o->ece == 0.0);
    const CalibrationReport* k = find_report(ev.estimators[1], "all", Granularity::kToken);
    REQUIRE(k);
    CHECK(std::abs(k->bss) < 1e-12);
  }

  TEST_CASE("join rejects misaligned confidences") {
    const Corpus& c = corpus();
    ConfidenceFile cf = estimate_tokenprob(c.synth.manifest, c.config);
    const std::string victim = c.labels.labels.records.front().problem_id;
    for (auto& r : cf.records)
      if (r.problem_id == victim) r.conf.token_conf.pop_back();
    try {
      join_samples(cf, c.labels.labels);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }
  }

  TEST_CASE("probe estimates cover the labeled problems") {
    const Corpus& c = corpus();
    const ConfidenceFile cf = estimate_probe(c.synth.manifest, c.labels.labels, c.config);
    CHECK(cf.name == "probe-MIDDLE");
    CHECK(cf.records.size() == c.labels.labels.records.size());
    CHECK_NOTHROW(join_samples(cf, c.labels.labels));
  }

  TEST_CASE("grid eta squared from cells") {
    auto cell = [](std::string a, std::string b, double bss, double ece) {
      return GridCell{{{"loss", a}, {"pooling", b}}, bss, ece};
    };
    // 2x2 with planted effects: loss moves BSS by 0.2, pooling by 0.1.
    const std::vector<GridCell> cells{cell("bce", "max", 0.0, 0.1), cell("bce", "mean", 0.1, 0.1),
                                      cell("focal", "max", 0.2, 0.1),
                                      cell("focal", "mean", 0.3, 0.1)};
    const auto eta = grid_eta_squared(cells);
    // Hand ANOVA: SS_total = 0.05, SS_loss = 4 * 0.1^2 = 0.04, SS_pool = 4 * 0.05^2 = 0.01.
    CHECK(eta.at("loss").first == doctest::Approx(0.8));
    CHECK(eta.at("pooling").first == doctest::Approx(0.2));
    CHECK(eta.at("loss").second == 0.0);
    const auto single = grid_eta_squared({cell("bce", "max", 0.3, 0.2)});
    CHECK(single.at("loss").first == 0.0);
    CHECK_THROWS(grid_eta_squared({}));
  }

  TEST_CASE("one-cell grid runs end to end") {
    const Corpus& c = corpus();
    save_manifest(c.synth.manifest, c.dir / "grid_manifest.jsonl");
    save_labels(c.labels.labels, c.dir / "grid_labels.jsonl");
    const std::string spec = R"({"factors":{"loss":["bce"]},"sources":[{"embedding_tag":"MIDDLE",
      "manifest":"grid_manifest.jsonl","labels":"grid_labels.jsonl"}],"probe":{"epochs":2}})";
    const GridResult g = run_grid(spec, c.dir, c.config);
    REQUIRE(g.cells.size() == 1);
    CHECK(std::isfinite(g.cells[0].mean_bss));
    CHECK(g.eta_squared.at("loss").first == 0.0);
    CHECK_THROWS_AS(run_grid(R"({"factors":{},"sources":[{"manifest":"a","labels":"b"}]})",
                             c.dir, c.config),
                    ConfigError);
  }
}
