#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "loccal/error.hpp"
#include "loccal/pipeline.hpp"

namespace {

using namespace loccal;

struct Common {
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::string fold_mode = "disjoint_kfold";
  std::size_t buckets = 10;
  std::string scope = "cumulative";
  bool offline = false;
  std::string probe_config;
  std::string line_agg = "mean";
  std::string token_agg = "min";
  std::string prob_merge = "min";
  std::size_t variants = 5;
  double temperature = 0.8;
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::string auth_env = "OPENAI_API_KEY";
  int max_parallel = 4;
  int max_tokens = 4096;
  int retries = 3;
  std::string cache_dir = "llm_cache";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed for folds, probe init and shuffles");
  cmd->add_option("--folds", c.folds, "Number of folds")->check(CLI::Range(2, 1000));
  cmd->add_option("--fold-mode", c.fold_mode, "disjoint_kfold or repeated_random_split");
  cmd->add_option("--buckets", c.buckets, "ECE buckets")->check(CLI::Range(1, 10000));
  cmd->add_option("--scope", c.scope, "cumulative, per-dataset or leave-one-out");
  cmd->add_flag("--offline", c.offline, "Replay cached responses only");
  cmd->add_option("--probe-config", c.probe_config, "Probe config JSON file");
  cmd->add_option("--line-agg", c.line_agg, "mean, gmean, min, pre_min or pre_mean");
  cmd->add_option("--token-agg", c.token_agg, "min, mean or gmean");
  cmd->add_option("--prob-merge", c.prob_merge, "min or mean for tokenizer alignment");
  cmd->add_option("--variants", c.variants, "Variant samples per problem");
  cmd->add_option("--temperature", c.temperature, "Variant sampling temperature");
  cmd->add_option("--base-url", c.base_url, "Chat-completions endpoint base URL");
  cmd->add_option("--model", c.model, "Model name");
  cmd->add_option("--auth-env", c.auth_env, "Environment variable holding the API token");
  cmd->add_option("--max-parallel", c.max_parallel, "Concurrent requests")->check(CLI::Range(1, 256));
  cmd->add_option("--max-tokens", c.max_tokens, "max_tokens per request");
  cmd->add_option("--retries", c.retries, "Retries per request");
  cmd->add_option("--cache", c.cache_dir, "Response cache directory");
}

RunConfig make_config(const std::string& sub, const Common& c, const CLI::App* cmd) {
  RunConfig rc;
  rc.subcommand = sub;
  if (!c.probe_config.empty()) {
    std::ifstream in(c.probe_config);
    if (!in) throw ConfigError("cannot open probe config " + c.probe_config);
    std::ostringstream ss;
    ss << in.rdbuf();
    rc.probe = probe_config_from_json(ss.str());
    rc.paths["probe_config"] = c.probe_config;
  }
  rc.seed = c.seed;
  if (cmd->count("--seed") > 0 || c.probe_config.empty()) rc.probe.seed = c.seed;
  rc.folds = {c.folds, fold_mode_from_string(c.fold_mode), c.seed};
  rc.buckets = c.buckets;
  rc.scope = eval_scope_from_string(c.scope);
  rc.offline = c.offline;
  rc.token_agg = token_agg_from_string(c.token_agg);
  if (c.prob_merge == "min") rc.prob_merge = tok::ProbMerge::kMin;
  else if (c.prob_merge == "mean") rc.prob_merge = tok::ProbMerge::kMean;
  else throw ConfigError("unknown --prob-merge '" + c.prob_merge + "'");
  rc.multisample.line_agg = line_agg_from_string(c.line_agg);
  rc.multisample.variant_count = c.variants;
  rc.multisample.temperature = c.temperature;
  rc.endpoint.base_url = c.base_url;
  rc.endpoint.model_name = c.model;
  rc.endpoint.auth_token_env_var = c.auth_env;
  rc.endpoint.max_parallel_requests = c.max_parallel;
  rc.endpoint.retry.count = c.retries;
  rc.max_tokens = c.max_tokens;
  rc.paths["cache"] = c.cache_dir;
  return rc;
}

std::string to_text(const ConfidenceFile& f) {
  std::ostringstream ss;
  write_confidences(f, ss);
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localized confidence estimation and calibration for generated code"};
  app.require_subcommand(1);
  Common c;

  std::string out, manifest_path, labels_path, raw_path, stats_path, estimator, spec_path,
      params_path, log_path;
  std::vector<std::string> conf_paths;
  std::optional<double> fallback_rate;
  std::size_t curve_buckets = 5;
  SynthConfig synth;
  std::string synth_datasets = "synth-a,synth-b";

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with known correctness");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--problems", synth.problems, "Problem count");
  synth_cmd->add_option("--datasets", synth_datasets, "Comma-separated dataset names");
  synth_cmd->add_option("--embed-dim", synth.embed_dim, "Embedding width");
  add_common(synth_cmd, c);

  auto* ingest_cmd = app.add_subcommand("ingest", "Tokenize raw problem records into a manifest");
  ingest_cmd->add_option("--raw", raw_path, "Raw JSONL")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--out", out, "Manifest to write")->required();
  add_common(ingest_cmd, c);

  auto* sample_cmd = app.add_subcommand("sample", "Fill variant samples from the endpoint or cache");
  sample_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", out, "Manifest to write")->required();
  add_common(sample_cmd, c);

  auto* label_cmd = app.add_subcommand("label", "Derive kept labels from minimal patches");
  label_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  label_cmd->add_option("--out", out, "Labels file")->required();
  label_cmd->add_option("--stats", stats_path, "Collection statistics CSV");
  add_common(label_cmd, c);

  auto* est_cmd = app.add_subcommand("estimate", "Compute confidences with one estimator");
  est_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--estimator", estimator, "token_prob, multisample, reflective or probe")
      ->required();
  est_cmd->add_option("--out", out, "Confidence file")->required();
  est_cmd->add_option("--labels", labels_path, "Labels (probe training, reflective fallback)");
  est_cmd->add_option("--fallback-rate", fallback_rate, "Reflective fallback confidence");
  est_cmd->add_option("--probe-params", params_path, "Apply trained probe parameters");
  add_common(est_cmd, c);

  auto* train_cmd = app.add_subcommand("train-probe", "Train a probe on all labeled problems");
  train_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--labels", labels_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "Parameter file")->required();
  train_cmd->add_option("--log", log_path, "Epoch loss log (JSON)");
  add_common(train_cmd, c);

  auto* eval_cmd = app.add_subcommand("eval", "Calibration reports, tables and reliability curves");
  eval_cmd->add_option("--labels", labels_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--confidences", conf_paths)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out, "Output directory")->required();
  eval_cmd->add_option("--curve-buckets", curve_buckets, "Quantile buckets for curves");
  add_common(eval_cmd, c);

  auto* grid_cmd = app.add_subcommand("grid", "Probe grid search with eta-squared factor shares");
  grid_cmd->add_option("--spec", spec_path)->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--out", out, "Output directory")->required();
  add_common(grid_cmd, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string sub = cmd->get_name();
    RunConfig rc = make_config(sub, c, cmd);
    if (!manifest_path.empty()) rc.paths["manifest"] = manifest_path;
    if (!labels_path.empty()) rc.paths["labels"] = labels_path;
    if (!out.empty()) rc.paths["out"] = out;

    if (sub == "synth") {
      synth.seed = c.seed;
      synth.variants = c.variants;
      synth.datasets.clear();
      std::stringstream ss(synth_datasets);
      for (std::string d; std::getline(ss, d, ',');)
        if (!d.empty()) synth.datasets.push_back(d);
      const SynthResult r = synthesize(synth, rc, out, c.cache_dir);
      std::cout << "wrote " << r.manifest.records.size() << " problems to " << out << "\n";
    } else if (sub == "ingest") {
      std::ifstream in(raw_path);
      rc.paths["raw"] = raw_path;
      const std::filesystem::path dest(out);
      const DatasetManifest m = ingest_raw(in, dest.parent_path());
      save_manifest(m, dest);
      std::cout << "ingested " << m.records.size() << " problems\n";
    } else if (sub == "sample") {
      DatasetManifest m = load_manifest(manifest_path);
      LlmClient client(rc.endpoint, c.cache_dir, c.offline);
      sample_variants(m, client, rc);
      save_manifest(m, out);
      std::cout << "sampled " << m.records.size() << " problems (" << client.network_calls()
                << " network calls)\n";
    } else if (sub == "label") {
      const DatasetManifest m = load_manifest(manifest_path);
      const LabelResult r = label_manifest(m, rc);
      save_labels(r.labels, out);
      const std::string csv = label_stats_csv(r.stats);
      if (!stats_path.empty()) write_text_file(stats_path, csv);
      std::cout << csv;
      std::cout << "labeled " << r.labels.records.size() << " problems, discarded "
                << r.discarded.size() << "\n";
    } else if (sub == "estimate") {
      rc.estimators = {estimator};
      if (fallback_rate) rc.fallback_rate = *fallback_rate;
      const DatasetManifest m = load_manifest(manifest_path);
      const EstimatorKind kind = estimator_from_string(estimator);
      std::optional<LabelFile> labels;
      if (!labels_path.empty()) labels = load_labels(labels_path);
      ConfidenceFile f;
      switch (kind) {
        case EstimatorKind::kTokenProb: f = estimate_tokenprob(m, rc); break;
        case EstimatorKind::kMultisample: f = estimate_multisample(m, rc); break;
        case EstimatorKind::kReflective: {
          LlmClient client(rc.endpoint, c.cache_dir, c.offline);
          f = estimate_reflective(m, client, labels ? &*labels : nullptr, rc);
          break;
        }
        case EstimatorKind::kProbe:
          if (!params_path.empty()) {
            rc.paths["probe_params"] = params_path;
            const auto [params, pc] = probe::load_params(params_path);
            f = estimate_probe_fixed(m, params, pc, rc);
          } else {
            if (!labels) throw ConfigError("probe estimation needs --labels or --probe-params");
            f = estimate_probe(m, *labels, rc);
          }
          break;
      }
      write_text_file(out, to_text(f));
      std::cout << "wrote " << f.records.size() << " " << f.name << " records\n";
    } else if (sub == "train-probe") {
      const DatasetManifest m = load_manifest(manifest_path);
      const LabelFile labels = load_labels(labels_path);
      const auto examples = probe_examples(m, labels, rc.probe.embedding_tag);
      const probe::TrainResult tr = probe::train(examples, rc.probe);
      probe::save_params(tr.params, rc.probe, out);
      if (!log_path.empty()) {
        std::ostringstream log;
        log << "{\"run_config\":" << rc.to_json() << ",\"batching\":\"" << tr.batching
            << "\",\"epochs\":[";
        for (std::size_t i = 0; i < tr.log.size(); ++i) {
          char buf[96];
          std::snprintf(buf, sizeof(buf), "%s{\"epoch\":%zu,\"mean_loss\":%.17g}", i ? "," : "",
                        tr.log[i].epoch, tr.log[i].mean_loss);
          log << buf;
        }
        log << "]}\n";
        write_text_file(log_path, log.str());
      }
      std::cout << "trained on " << examples.size() << " problems\n";
    } else if (sub == "eval") {
      rc.curve_buckets = curve_buckets;
      for (std::size_t i = 0; i < conf_paths.size(); ++i)
        rc.paths["confidences." + std::to_string(i)] = conf_paths[i];
      const LabelFile labels = load_labels(labels_path);
      std::vector<ConfidenceFile> files;
      for (const std::string& p : conf_paths) {
        files.push_back(load_confidences(p));
        rc.estimators.push_back(files.back().name);
      }
      const EvalResult r = evaluate(files, labels, rc);
      const std::filesystem::path dir(out);
      write_text_file(dir / "report.json", r.report_json);
      write_text_file(dir / "table.csv", r.table_csv);
      write_text_file(dir / "table.txt", r.table_text);
      write_text_file(dir / "reliability.csv", r.curves_csv);
      write_text_file(dir / "reliability.svg", r.curves_svg);
      std::cout << r.table_text;
    } else if (sub == "grid") {
      rc.paths["spec"] = spec_path;
      const std::filesystem::path spec(spec_path);
      const GridResult r = run_grid(read_text_file(spec), spec.parent_path(), rc);
      const std::filesystem::path dir(out);
      write_text_file(dir / "grid_log.jsonl", r.log_jsonl);
      write_text_file(dir / "eta_squared.csv", r.eta_csv);
      std::cout << r.eta_csv;
    }
  } catch (const loccal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
