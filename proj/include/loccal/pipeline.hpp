#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loccal/calib.hpp"
#include "loccal/confidence.hpp"
#include "loccal/corpus.hpp"
#include "loccal/formats.hpp"
#include "loccal/llm_client.hpp"
#include "loccal/probe.hpp"

namespace loccal {

struct RunConfig {
  std::string subcommand;
  std::map<std::string, std::string> paths;  // role -> path, recorded verbatim
  std::vector<std::string> estimators;
  ProbeConfig probe;
  MultisampleConfig multisample;
  TokenAgg token_agg = TokenAgg::kMin;
  tok::ProbMerge prob_merge = tok::ProbMerge::kMin;
  FoldConfig folds;
  std::size_t buckets = 10;
  std::size_t curve_buckets = 5;
  EvalScope scope = EvalScope::kCumulative;
  bool offline = false;
  std::uint64_t seed = 0;
  std::optional<double> fallback_rate;
  EndpointConfig endpoint;
  int max_tokens = 4096;

  // Canonical JSON object text; embedded in every artifact.
  std::string to_json() const;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware).
// The first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

// One raw JSON object per line: {"id","dataset","prompt","passed","code",
// "gen_tokens"?: [[text, prob]], "token_probs"?, "variants"?: [code],
// "embeddings"?, "patches"?: [{"code","source","fixer","passes_tests"}]}.
// Code is tokenized with tok::normalize_tokenize.
DatasetManifest ingest_raw(std::istream& in, const std::filesystem::path& base_dir);

// One row of the data collection summary, per dataset plus a "Total" row.
struct LabelStats {
  std::string dataset;
  std::size_t available = 0;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::size_t patched_model = 0;
  std::size_t not_kept_model = 0;  // tokens not kept, summed
  std::size_t tokens_model = 0;    // solution tokens of those problems
  std::size_t patched_reference = 0;
  std::size_t not_kept_reference = 0;
  std::size_t tokens_reference = 0;
  std::size_t used_problems = 0;
  std::size_t total_tokens = 0;

  friend bool operator==(const LabelStats&, const LabelStats&) = default;
};

struct LabelResult {
  LabelFile labels;
  std::vector<LabelStats> stats;
  std::vector<std::string> discarded;  // failing problems without a passing patch
};

// Passing solutions are labeled all-kept; failing ones are diffed against
// their minimal passing patch, or discarded when none exists. Records come
// out sorted by problem id.
LabelResult label_manifest(const DatasetManifest& manifest, const RunConfig& config);

// CSV in the layout of the data collection tables.
std::string label_stats_csv(const std::vector<LabelStats>& stats);

ConfidenceFile estimate_tokenprob(const DatasetManifest& manifest, const RunConfig& config);
ConfidenceFile estimate_multisample(const DatasetManifest& manifest, const RunConfig& config);
// Queries (or replays) the reflective prompt per problem. The fallback rate
// is config.fallback_rate or, failing that, the line-level base rate of
// `labels`.
ConfidenceFile estimate_reflective(const DatasetManifest& manifest, LlmClient& client,
                                   const LabelFile* labels, const RunConfig& config);

// Probe confidences for every labeled problem with embeddings. Cumulative
// and per-dataset scopes cross-fit over disjoint folds of problem ids;
// leave_one_out trains on all other datasets.
ConfidenceFile estimate_probe(const DatasetManifest& manifest, const LabelFile& labels,
                              const RunConfig& config);
// Applies fixed parameters to every record with embeddings.
ConfidenceFile estimate_probe_fixed(const DatasetManifest& manifest, const ProbeParams& params,
                                    const ProbeConfig& probe_config, const RunConfig& config);

std::vector<ProbeExample> probe_examples(const DatasetManifest& manifest,
                                         const LabelFile& labels,
                                         const std::string& embedding_tag);

SampleRequest variant_request(const Problem& problem, const RunConfig& config);
// Fills solution.variants of every record from the client.
void sample_variants(DatasetManifest& manifest, LlmClient& client, const RunConfig& config);

// Joins confidences to labels. Every labeled problem needs a confidence
// record with matching token and line counts; vacuous lines are skipped.
std::vector<PredictionSample> join_samples(const ConfidenceFile& conf, const LabelFile& labels);

struct EstimatorReport {
  std::string name;
  EstimatorKind estimator = EstimatorKind::kTokenProb;
  std::vector<CalibrationReport> reports;
  std::map<Granularity, std::vector<CurvePoint>> curves;
};

struct EvalResult {
  std::vector<EstimatorReport> estimators;
  std::string report_json;
  std::string table_csv;
  std::string table_text;
  std::string curves_csv;
  std::string curves_svg;
};

EvalResult evaluate(const std::vector<ConfidenceFile>& confidences, const LabelFile& labels,
                    const RunConfig& config);

const CalibrationReport* find_report(const EstimatorReport& r, const std::string& partition,
                                     Granularity g);

struct GridCell {
  std::map<std::string, std::string> levels;
  double mean_bss = 0.0;  // token/line/problem BSS, scaled and unscaled
  double mean_ece = 0.0;  // token/line/problem unscaled ECE
};

struct GridResult {
  std::vector<GridCell> cells;
  std::map<std::string, std::pair<double, double>> eta_squared;  // factor -> (bss, ece)
  std::string log_jsonl;
  std::string eta_csv;
};

// Grid spec: {"factors": {name: [levels]}, "sources": [{"embedding_tag",
// "gen_model"?, "manifest", "labels"}], "probe"?: {...}}. Factors:
// gen_model, embedding_tag, loss, level_agg, pooling, proj_dim. Relative
// paths resolve against base_dir.
GridResult run_grid(const std::string& spec_json, const std::filesystem::path& base_dir,
                    const RunConfig& config);

// Factor shares of a finished grid; factors with one level get 0.
std::map<std::string, std::pair<double, double>> grid_eta_squared(
    const std::vector<GridCell>& cells);

struct SynthConfig {
  std::size_t problems = 200;
  std::vector<std::string> datasets = {"synth-a", "synth-b"};
  std::size_t variants = 5;
  std::size_t embed_dim = 16;
  std::size_t min_lines = 3;
  std::size_t max_lines = 8;
  // Each line has one uncertain token with correctness logit ~ N(mean, sd);
  // every other token is certain, so the line probability equals the
  // minimum token probability.
  double logit_mean = 1.5;
  double logit_sd = 1.5;
  double noncompliant_rate = 0.05;
  double discard_rate = 0.03;
  std::uint64_t seed = 0;
};

struct SynthResult {
  DatasetManifest manifest;
  // Per problem: the per-token correctness probabilities used to draw it.
  std::map<std::string, std::vector<double>> truth;
  std::map<std::string, std::vector<bool>> realized;
};

// Builds a corpus with known per-token correctness probabilities. The
// manifest (and its embedding sidecar) go to out_dir; replayable responses
// for variant sampling and reflective prompts go to cache_dir under
// config.endpoint.model_name.
SynthResult synthesize(const SynthConfig& synth, const RunConfig& config,
                       const std::filesystem::path& out_dir,
                       const std::filesystem::path& cache_dir);

}  // namespace loccal
