#include "loccal/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "loccal/error.hpp"
#include "loccal/random.hpp"

namespace loccal {
namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string prob_merge_name(tok::ProbMerge m) { return m == tok::ProbMerge::kMin ? "min" : "mean"; }

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<const ManifestRecord*> sorted_records(const DatasetManifest& m) {
  std::vector<const ManifestRecord*> out;
  for (const ManifestRecord& r : m.records) out.push_back(&r);
  std::sort(out.begin(), out.end(), [](const ManifestRecord* a, const ManifestRecord* b) {
    return a->problem.id < b->problem.id;
  });
  return out;
}

ConfidenceFile make_file(const std::string& name, EstimatorKind kind, const RunConfig& config) {
  ConfidenceFile f;
  f.name = name;
  f.estimator = kind;
  f.run_config = config.to_json();
  return f;
}

}  // namespace

std::string RunConfig::to_json() const {
  json probe_json = json::parse(probe_config_to_json(probe));
  json j = {
      {"subcommand", subcommand},
      {"paths", paths},
      {"estimators", estimators},
      {"probe", probe_json},
      {"multisample",
       {{"variant_count", multisample.variant_count},
        {"temperature", multisample.temperature},
        {"line_agg", to_string(multisample.line_agg)}}},
      {"token_agg", to_string(token_agg)},
      {"prob_merge", prob_merge_name(prob_merge)},
      {"folds", {{"k", folds.k}, {"mode", to_string(folds.mode)}, {"seed", folds.seed}}},
      {"buckets", buckets},
      {"curve_buckets", curve_buckets},
      {"scope", to_string(scope)},
      {"seed", seed},
      {"fallback_rate", fallback_rate ? json(*fallback_rate) : json(nullptr)},
      {"endpoint",
       {{"base_url", endpoint.base_url},
        {"model_name", endpoint.model_name},
        {"max_parallel_requests", endpoint.max_parallel_requests},
        {"max_tokens", max_tokens}}},
  };
  return j.dump();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

DatasetManifest ingest_raw(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "raw line " + std::to_string(line_no) + ": ";
    ManifestRecord r;
    try {
      const json j = json::parse(line);
      r.problem.id = j.at("id").get<std::string>();
      r.problem.dataset = j.at("dataset").get<std::string>();
      r.problem.prompt = j.value("prompt", std::string{});
      r.problem.passed = j.at("passed").get<bool>();
      TokenStream ts = tok::normalize_tokenize(j.at("code").get<std::string>());
      r.solution.problem_id = r.problem.id;
      r.solution.tokens = std::move(ts.tokens);
      r.solution.line_spans = std::move(ts.line_spans);
      if (j.contains("token_probs"))
        r.solution.token_probs = j["token_probs"].get<std::vector<double>>();
      if (j.contains("gen_tokens")) {
        std::vector<tok::GeneratorToken> g;
        for (const json& t : j["gen_tokens"])
          g.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
        r.solution.gen_tokens = std::move(g);
      }
      if (j.contains("variants")) {
        std::vector<TokenList> vs;
        for (const json& v : j["variants"])
          vs.push_back(tok::normalize_tokenize(v.get<std::string>()).tokens);
        r.solution.variants = std::move(vs);
      }
      if (j.contains("embeddings")) {
        const json& e = j["embeddings"];
        EmbeddingRef ref;
        ref.tag = e.value("tag", std::string{});
        ref.dim = e.at("dim").get<std::size_t>();
        if (e.contains("path")) {
          ref.path = e["path"].get<std::string>();
          ref.offset = e.value("offset", std::uint64_t{0});
        } else {
          ref.inline_data = e.at("data").get<std::vector<float>>();
        }
        r.solution.embeddings = std::move(ref);
      }
      for (const json& p : j.value("patches", json::array())) {
        PatchCandidate c;
        c.problem_id = r.problem.id;
        c.tokens = tok::normalize_tokenize(p.at("code").get<std::string>()).tokens;
        c.source = patch_source_from_string(p.value("source", std::string{"model_fixer"}));
        c.fixer_name = p.value("fixer", std::string{});
        c.passes_tests = p.at("passes_tests").get<bool>();
        r.patches.push_back(std::move(c));
      }
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const Error& e) {
      throw DataError(where + e.what());
    }
    if (!seen.insert(r.problem.id).second)
      throw DataError(where + "duplicate problem id '" + r.problem.id + "'");
    validate_record(r, base_dir);
    m.records.push_back(std::move(r));
  }
  return m;
}

LabelResult label_manifest(const DatasetManifest& manifest, const RunConfig& config) {
  enum class Outcome { kPassed, kModel, kReference, kDiscarded };
  const auto recs = sorted_records(manifest);
  std::vector<Outcome> outcome(recs.size());
  std::vector<KeptLabels> labels(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    const ManifestRecord& r = *recs[i];
    const std::size_t n = r.solution.tokens.size();
    if (r.problem.passed) {
      outcome[i] = Outcome::kPassed;
      labels[i].token_kept.assign(n, true);
      labels[i].line_kept.assign(r.solution.line_spans.size(), true);
      labels[i].problem_kept = true;
      return;
    }
    try {
      const auto patch = diff::select_minimal_patch(r.patches, r.solution.tokens);
      if (!patch) {
        outcome[i] = Outcome::kDiscarded;
        return;
      }
      outcome[i] = patch->source == PatchSource::kModelFixer ? Outcome::kModel : Outcome::kReference;
      labels[i] = diff::kept_labels(r.solution.tokens, r.solution.line_spans, patch->tokens);
    } catch (const Error& e) {
      throw DataError("problem '" + r.problem.id + "': " + e.what());
    }
  });

  LabelResult out;
  out.labels.run_config = config.to_json();
  std::map<std::string, LabelStats> per;
  LabelStats total;
  total.dataset = "Total";
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const ManifestRecord& r = *recs[i];
    LabelStats& s = per[r.problem.dataset];
    s.dataset = r.problem.dataset;
    const std::size_t n = r.solution.tokens.size();
    std::size_t not_kept = 0;
    for (bool b : labels[i].token_kept) not_kept += b ? 0 : 1;
    for (LabelStats* t : {&s, &total}) {
      ++t->available;
      switch (outcome[i]) {
        case Outcome::kPassed: ++t->passed; break;
        case Outcome::kModel:
          ++t->failed;
          ++t->patched_model;
          t->not_kept_model += not_kept;
          t->tokens_model += n;
          break;
        case Outcome::kReference:
          ++t->failed;
          ++t->patched_reference;
          t->not_kept_reference += not_kept;
          t->tokens_reference += n;
          break;
        case Outcome::kDiscarded: ++t->failed; break;
      }
      if (outcome[i] != Outcome::kDiscarded) {
        ++t->used_problems;
        t->total_tokens += n;
      }
    }
    if (outcome[i] == Outcome::kDiscarded) {
      out.discarded.push_back(r.problem.id);
      continue;
    }
    LabelRecord lr;
    lr.problem_id = r.problem.id;
    lr.dataset = r.problem.dataset;
    lr.patch_source = outcome[i] == Outcome::kPassed ? "passed"
                      : outcome[i] == Outcome::kModel ? "model_fixer"
                                                      : "reference_fallback";
    lr.labels = std::move(labels[i]);
    out.labels.records.push_back(std::move(lr));
  }
  for (auto& [name, s] : per) out.stats.push_back(s);
  out.stats.push_back(total);
  return out;
}

std::string label_stats_csv(const std::vector<LabelStats>& stats) {
  std::ostringstream out;
  out << "dataset,available,pass,pass_pct,fail,count_w_model,avg_toks_w_model,pct_w_model,"
         "count_w_ref,avg_toks_w_ref,pct_w_ref,problems,total_tokens\n";
  auto ratio = [](std::size_t a, std::size_t b, double scale) {
    return b == 0 ? std::string("N/A") : fmt(scale * static_cast<double>(a) / static_cast<double>(b), 1);
  };
  for (const LabelStats& s : stats) {
    out << s.dataset << ',' << s.available << ',' << s.passed << ','
        << ratio(s.passed, s.available, 100.0) << ',' << s.failed << ',' << s.patched_model << ','
        << ratio(s.not_kept_model, s.patched_model, 1.0) << ','
        << ratio(s.not_kept_model, s.tokens_model, 100.0) << ',' << s.patched_reference << ','
        << ratio(s.not_kept_reference, s.patched_reference, 1.0) << ','
        << ratio(s.not_kept_reference, s.tokens_reference, 100.0) << ',' << s.used_problems << ','
        << s.total_tokens << '\n';
  }
  return out.str();
}

ConfidenceFile estimate_tokenprob(const DatasetManifest& manifest, const RunConfig& config) {
  ConfidenceFile f = make_file("token_prob", EstimatorKind::kTokenProb, config);
  const auto recs = sorted_records(manifest);
  f.records.resize(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    const ManifestRecord& r = *recs[i];
    std::vector<double> probs;
    if (r.solution.token_probs) {
      probs = *r.solution.token_probs;
    } else if (r.solution.gen_tokens) {
      try {
        probs = tok::align_probs(*r.solution.gen_tokens, r.solution.tokens, config.prob_merge);
      } catch (const Error& e) {
        throw DataError("problem '" + r.problem.id + "': " + e.what());
      }
    } else {
      throw DataError("problem '" + r.problem.id + "' has neither token_probs nor gen_tokens");
    }
    f.records[i] = {r.problem.id, r.problem.dataset,
                    confidence::tokenprob_confidence(probs, r.solution.line_spans, config.token_agg),
                    true};
  });
  return f;
}

ConfidenceFile estimate_multisample(const DatasetManifest& manifest, const RunConfig& config) {
  ConfidenceFile f = make_file("multisample", EstimatorKind::kMultisample, config);
  const auto recs = sorted_records(manifest);
  f.records.resize(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    const ManifestRecord& r = *recs[i];
    if (!r.solution.variants || r.solution.variants->empty())
      throw DataError("problem '" + r.problem.id + "' has no variant samples");
    f.records[i] = {r.problem.id, r.problem.dataset,
                    confidence::multisample_confidence(r.solution.tokens, r.solution.line_spans,
                                                       *r.solution.variants,
                                                       config.multisample.line_agg),
                    true};
  });
  return f;
}

ConfidenceFile estimate_reflective(const DatasetManifest& manifest, LlmClient& client,
                                   const LabelFile* labels, const RunConfig& config) {
  double fallback = 0.0;
  if (config.fallback_rate) {
    fallback = *config.fallback_rate;
  } else if (labels) {
    std::vector<bool> lines;
    for (const LabelRecord& r : labels->records)
      lines.insert(lines.end(), r.labels.line_kept.begin(), r.labels.line_kept.end());
    fallback = base_rate(lines);
  } else {
    throw ConfigError("reflective estimation needs --labels or --fallback-rate");
  }
  if (!(fallback >= 0.0 && fallback <= 1.0)) throw ConfigError("fallback rate must lie in [0,1]");

  ConfidenceFile f = make_file("reflective", EstimatorKind::kReflective, config);
  const auto recs = sorted_records(manifest);
  f.records.resize(recs.size());
  std::vector<Usage> usage(recs.size());
  parallel_for(
      recs.size(),
      [&](std::size_t i) {
        const ManifestRecord& r = *recs[i];
        const auto lines = tok::line_strings(r.solution.tokens, r.solution.line_spans);
        const ReflectResponse resp =
            client.reflect(tok::join(r.solution.tokens), lines, config.max_tokens);
        usage[i] = resp.usage;
        const auto parsed = confidence::parse_reflective_response(resp.text, lines.size(), fallback);
        f.records[i] = {r.problem.id, r.problem.dataset,
                        confidence::reflective_confidence(parsed, r.solution.line_spans),
                        parsed.compliant};
      },
      static_cast<std::size_t>(client.config().max_parallel_requests));
  std::size_t compliant = 0;
  std::int64_t completion_tokens = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    compliant += f.records[i].compliant ? 1 : 0;
    completion_tokens += usage[i].completion_tokens;
  }
  if (!recs.empty())
    std::cerr << "reflective: " << compliant << "/" << recs.size()
              << " compliant responses, mean completion tokens "
              << fmt(static_cast<double>(completion_tokens) / static_cast<double>(recs.size()), 1)
              << '\n';
  return f;
}

std::vector<ProbeExample> probe_examples(const DatasetManifest& manifest, const LabelFile& labels,
                                         const std::string& embedding_tag) {
  std::vector<ProbeExample> out;
  for (const LabelRecord& lr : labels.records) {
    const ManifestRecord* r = manifest.find(lr.problem_id);
    if (!r) throw DataError("labeled problem '" + lr.problem_id + "' is not in the manifest");
    const GeneratedSolution& s = r->solution;
    if (!s.embeddings) throw DataError("problem '" + lr.problem_id + "' has no embeddings");
    if (!embedding_tag.empty() && s.embeddings->tag != embedding_tag)
      throw DataError("problem '" + lr.problem_id + "' has embeddings tagged '" +
                      s.embeddings->tag + "', expected '" + embedding_tag + "'");
    if (lr.labels.token_kept.size() != s.tokens.size() ||
        lr.labels.line_kept.size() != s.line_spans.size())
      throw DataError("labels of problem '" + lr.problem_id + "' do not match its tokens");
    const EmbeddingMatrix m = read_embeddings(*s.embeddings, s.tokens.size(), manifest.base_dir);
    ProbeExample ex;
    ex.problem_id = lr.problem_id;
    ex.dataset = lr.dataset;
    ex.embeddings.resize(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t c = 0; c < m.cols; ++c)
        ex.embeddings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = m.at(i, c);
    ex.line_spans = s.line_spans;
    ex.labels = lr.labels;
    out.push_back(std::move(ex));
  }
  return out;
}

ConfidenceFile estimate_probe(const DatasetManifest& manifest, const LabelFile& labels,
                              const RunConfig& config) {
  validate(config.probe);
  const std::vector<ProbeExample> examples =
      probe_examples(manifest, labels, config.probe.embedding_tag);
  if (examples.empty()) throw DataError("no labeled problems to probe");

  // Each group trains one probe and predicts its held-out members.
  std::vector<std::vector<std::size_t>> held_out;
  if (config.scope == EvalScope::kLeaveOneOut) {
    std::map<std::string, std::vector<std::size_t>> by_dataset;
    for (std::size_t i = 0; i < examples.size(); ++i) by_dataset[examples[i].dataset].push_back(i);
    if (by_dataset.size() < 2)
      throw DataError("leave-one-out probing needs at least two datasets");
    for (auto& [name, idx] : by_dataset) held_out.push_back(std::move(idx));
  } else {
    std::vector<std::string> ids;
    for (const ProbeExample& ex : examples) ids.push_back(ex.problem_id);
    const FoldAssignment fa =
        assign_folds(ids, config.folds.k, FoldMode::kDisjointKFold, config.folds.seed);
    held_out.resize(fa.k);
    for (std::size_t i = 0; i < examples.size(); ++i)
      held_out[fa.assignment.at(examples[i].problem_id)].push_back(i);
  }

  std::vector<ConfidenceAssignment> predicted(examples.size());
  parallel_for(held_out.size(), [&](std::size_t g) {
    std::vector<bool> is_test(examples.size(), false);
    for (std::size_t i : held_out[g]) is_test[i] = true;
    std::vector<ProbeExample> train;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (!is_test[i]) train.push_back(examples[i]);
    const probe::TrainResult tr = probe::train(train, config.probe);
    for (std::size_t i : held_out[g])
      predicted[i] = probe::predict_all(examples[i].embeddings, examples[i].line_spans, tr.params,
                                        config.probe);
  });

  const std::string name =
      config.probe.embedding_tag.empty() ? "probe" : "probe-" + config.probe.embedding_tag;
  ConfidenceFile f = make_file(name, EstimatorKind::kProbe, config);
  for (std::size_t i = 0; i < examples.size(); ++i)
    f.records.push_back({examples[i].problem_id, examples[i].dataset, std::move(predicted[i]), true});
  return f;
}

ConfidenceFile estimate_probe_fixed(const DatasetManifest& manifest, const ProbeParams& params,
                                    const ProbeConfig& probe_config, const RunConfig& config) {
  const std::string name =
      probe_config.embedding_tag.empty() ? "probe" : "probe-" + probe_config.embedding_tag;
  ConfidenceFile f = make_file(name, EstimatorKind::kProbe, config);
  for (const ManifestRecord* r : sorted_records(manifest)) {
    const GeneratedSolution& s = r->solution;
    if (!s.embeddings) throw DataError("problem '" + r->problem.id + "' has no embeddings");
    const EmbeddingMatrix m = read_embeddings(*s.embeddings, s.tokens.size(), manifest.base_dir);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t c = 0; c < m.cols; ++c)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = m.at(i, c);
    f.records.push_back({r->problem.id, r->problem.dataset,
                         probe::predict_all(x, s.line_spans, params, probe_config), true});
  }
  return f;
}

SampleRequest variant_request(const Problem& problem, const RunConfig& config) {
  SampleRequest r;
  r.prompt = problem.prompt;
  r.n = static_cast<int>(config.multisample.variant_count);
  r.temperature = config.multisample.temperature;
  r.want_logprobs = false;
  r.max_tokens = config.max_tokens;
  return r;
}

void sample_variants(DatasetManifest& manifest, LlmClient& client, const RunConfig& config) {
  std::vector<SampleRequest> requests;
  for (const ManifestRecord& r : manifest.records) {
    if (r.problem.prompt.empty())
      throw DataError("problem '" + r.problem.id + "' has no prompt to sample from");
    requests.push_back(variant_request(r.problem, config));
  }
  const std::vector<SampleResponse> responses = client.sample_batch(requests);
  for (std::size_t i = 0; i < responses.size(); ++i) {
    std::vector<TokenList> variants;
    for (const Completion& c : responses[i].completions)
      variants.push_back(tok::normalize_tokenize(c.text).tokens);
    manifest.records[i].solution.variants = std::move(variants);
  }
}

std::vector<PredictionSample> join_samples(const ConfidenceFile& conf, const LabelFile& labels) {
  std::map<std::string, const ConfidenceRecord*> by_id;
  for (const ConfidenceRecord& r : conf.records) by_id[r.problem_id] = &r;
  std::vector<PredictionSample> out;
  for (const LabelRecord& lr : labels.records) {
    const auto it = by_id.find(lr.problem_id);
    if (it == by_id.end())
      throw DataError(conf.name + ": no confidences for problem '" + lr.problem_id + "'");
    const ConfidenceAssignment& c = it->second->conf;
    if (c.token_conf.size() != lr.labels.token_kept.size())
      throw DataError(conf.name + ": problem '" + lr.problem_id + "' has " +
                      std::to_string(c.token_conf.size()) + " token confidences but " +
                      std::to_string(lr.labels.token_kept.size()) + " token labels");
    if (c.line_conf.size() != lr.labels.line_kept.size())
      throw DataError(conf.name + ": problem '" + lr.problem_id + "' has " +
                      std::to_string(c.line_conf.size()) + " line confidences but " +
                      std::to_string(lr.labels.line_kept.size()) + " line labels");
    for (std::size_t i = 0; i < c.token_conf.size(); ++i)
      out.push_back({c.token_conf[i], lr.labels.token_kept[i], Granularity::kToken, lr.dataset,
                     lr.problem_id});
    const std::set<std::size_t> vacuous(c.vacuous_lines.begin(), c.vacuous_lines.end());
    for (std::size_t l = 0; l < c.line_conf.size(); ++l) {
      if (vacuous.count(l)) continue;
      out.push_back({c.line_conf[l], lr.labels.line_kept[l], Granularity::kLine, lr.dataset,
                     lr.problem_id});
    }
    out.push_back({c.problem_conf, lr.labels.problem_kept, Granularity::kProblem, lr.dataset,
                   lr.problem_id});
  }
  for (const PredictionSample& s : out)
    if (!(s.confidence >= 0.0 && s.confidence <= 1.0))
      throw DataError(conf.name + ": confidence outside [0,1] for problem '" + s.problem_id + "'");
  return out;
}

const CalibrationReport* find_report(const EstimatorReport& r, const std::string& partition,
                                     Granularity g) {
  for (const CalibrationReport& c : r.reports)
    if (c.partition == partition && c.granularity == g) return &c;
  return nullptr;
}

namespace {

json report_to_json(const CalibrationReport& r) {
  json buckets = json::array();
  for (const Bucket& b : r.bucket_table)
    buckets.push_back({{"lower", b.lower},
                       {"upper", b.upper},
                       {"count", b.count},
                       {"weight", b.weight},
                       {"accuracy", b.accuracy},
                       {"confidence", b.confidence}});
  json folds = json::array();
  for (const FoldMetrics& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"n_test", f.n_test},
                     {"platt_scale", f.platt.scale},
                     {"platt_bias", f.platt.bias},
                     {"brier", num(f.brier)},
                     {"bss", num(f.bss)},
                     {"ece", num(f.ece)}});
  return {{"partition", r.partition},
          {"scope", to_string(r.scope)},
          {"granularity", to_string(r.granularity)},
          {"n", r.n},
          {"base_rate", num(r.base_rate)},
          {"brier", num(r.brier)},
          {"brier_ref", num(r.brier_ref)},
          {"bss", num(r.bss)},
          {"ece", num(r.ece)},
          {"auc", num(r.auc)},
          {"buckets", buckets},
          {"scaled",
           {{"applied", r.scaled},
            {"brier", num(r.scaled_brier)},
            {"bss", num(r.scaled_bss)},
            {"ece", num(r.scaled_ece)},
            {"folds", folds}}},
          {"notes", r.notes}};
}

std::string render_svg(const std::vector<EstimatorReport>& estimators, std::size_t buckets) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  constexpr double kPanel = 300.0, kMargin = 50.0, kGap = 60.0;
  const double width = 2 * kPanel + kGap + 2 * kMargin + 140.0;
  const double height = kPanel + 2 * kMargin;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width, 0) << "\" height=\""
    << fmt(height, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  const Granularity panels[] = {Granularity::kLine, Granularity::kToken};
  for (int p = 0; p < 2; ++p) {
    const double x0 = kMargin + p * (kPanel + kGap), y0 = kMargin;
    auto px = [&](double v) { return fmt(x0 + v * kPanel, 2); };
    auto py = [&](double v) { return fmt(y0 + (1.0 - v) * kPanel, 2); };
    s << "<text x=\"" << fmt(x0 + kPanel / 2, 2) << "\" y=\"" << fmt(y0 - 15, 2)
      << "\" text-anchor=\"middle\">" << (p == 0 ? "Line" : "Token") << " level (" << buckets
      << " quantile buckets)</text>\n";
    s << "<rect x=\"" << fmt(x0, 2) << "\" y=\"" << fmt(y0, 2) << "\" width=\"" << fmt(kPanel, 2)
      << "\" height=\"" << fmt(kPanel, 2) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
      << py(1) << "\" stroke=\"#aaa\" stroke-dasharray=\"4 3\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = t / 4.0;
      s << "<text x=\"" << px(v) << "\" y=\"" << fmt(y0 + kPanel + 14, 2)
        << "\" text-anchor=\"middle\">" << fmt(v, 2) << "</text>\n";
      s << "<text x=\"" << fmt(x0 - 6, 2) << "\" y=\"" << py(v)
        << "\" text-anchor=\"end\" dominant-baseline=\"middle\">" << fmt(v, 2) << "</text>\n";
    }
    s << "<text x=\"" << fmt(x0 + kPanel / 2, 2) << "\" y=\"" << fmt(y0 + kPanel + 32, 2)
      << "\" text-anchor=\"middle\">confidence</text>\n";
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto it = estimators[e].curves.find(panels[p]);
      if (it == estimators[e].curves.end() || it->second.empty()) continue;
      const char* color = kColors[e % 8];
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < it->second.size(); ++k)
        s << (k ? " " : "") << px(it->second[k].mean_confidence) << ','
          << py(it->second[k].frequency);
      s << "\"/>\n";
      for (const CurvePoint& c : it->second)
        s << "<circle cx=\"" << px(c.mean_confidence) << "\" cy=\"" << py(c.frequency)
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
  }
  const double lx = kMargin + 2 * kPanel + kGap + 20;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    const double ly = kMargin + 10 + 18.0 * static_cast<double>(e);
    s << "<rect x=\"" << fmt(lx, 2) << "\" y=\"" << fmt(ly - 8, 2)
      << "\" width=\"10\" height=\"10\" fill=\"" << kColors[e % 8] << "\"/>\n";
    s << "<text x=\"" << fmt(lx + 16, 2) << "\" y=\"" << fmt(ly, 2) << "\">" << estimators[e].name
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

EvalResult evaluate(const std::vector<ConfidenceFile>& confidences, const LabelFile& labels,
                    const RunConfig& config) {
  if (confidences.empty()) throw ConfigError("eval needs at least one confidence file");
  if (labels.records.empty()) throw DataError("label file has no records");
  EvalResult out;
  std::set<std::string> names;
  for (const ConfidenceFile& cf : confidences) {
    if (!names.insert(cf.name).second)
      throw ConfigError("two confidence files share the name '" + cf.name + "'");
    const std::vector<PredictionSample> samples = join_samples(cf, labels);
    EstimatorReport er;
    er.name = cf.name;
    er.estimator = cf.estimator;
    er.reports = calib::crossfold_evaluate(samples, config.folds, config.buckets, config.scope);
    for (Granularity g : {Granularity::kLine, Granularity::kToken}) {
      std::vector<PredictionSample> part;
      for (const PredictionSample& s : samples)
        if (s.granularity == g) part.push_back(s);
      er.curves[g] = calib::reliability_curve(part, BucketScheme::kQuantile, config.curve_buckets);
    }
    out.estimators.push_back(std::move(er));
  }

  json reports = json::array();
  for (const EstimatorReport& er : out.estimators) {
    json rs = json::array();
    for (const CalibrationReport& r : er.reports) rs.push_back(report_to_json(r));
    json curves = json::object();
    for (const auto& [g, pts] : er.curves) {
      json arr = json::array();
      for (const CurvePoint& c : pts)
        arr.push_back({{"mean_confidence", c.mean_confidence},
                       {"frequency", c.frequency},
                       {"weight", c.weight}});
      curves[to_string(g)] = arr;
    }
    reports.push_back({{"name", er.name},
                       {"estimator", to_string(er.estimator)},
                       {"reports", rs},
                       {"reliability_curves", curves}});
  }
  out.report_json =
      json{{"run_config", json::parse(config.to_json())}, {"estimators", reports}}.dump(2) + "\n";

  std::ostringstream csv, text, curves;
  csv << "technique,partition,line_bss,line_ece,line_auc,line_scaled_bss,line_scaled_ece,"
         "token_bss,token_ece,token_auc,token_scaled_bss,token_scaled_ece\n";
  char head[256];
  std::snprintf(head, sizeof(head), "%-22s %-14s | %-32s | %-32s\n", "", "", "Line-Level",
                "Token-Level");
  text << head;
  std::snprintf(head, sizeof(head), "%-22s %-14s | %-20s %-11s | %-20s %-11s\n", "", "",
                "Unscaled", "Scaled", "Unscaled", "Scaled");
  text << head;
  std::snprintf(head, sizeof(head),
                "%-22s %-14s | %6s %6s %6s %5s %5s | %6s %6s %6s %5s %5s\n", "Technique",
                "Partition", "BSS", "ECE", "AUC", "BSS", "ECE", "BSS", "ECE", "AUC", "BSS", "ECE");
  text << head;
  for (const EstimatorReport& er : out.estimators) {
    std::set<std::string> partitions;
    for (const CalibrationReport& r : er.reports) partitions.insert(r.partition);
    for (const std::string& part : partitions) {
      csv << er.name << ',' << part;
      std::string cells[10];
      int c = 0;
      for (Granularity g : {Granularity::kLine, Granularity::kToken}) {
        const CalibrationReport* r = find_report(er, part, g);
        const double vals[5] = {r ? r->bss : kNaN, r ? r->ece : kNaN, r ? r->auc : kNaN,
                                r ? r->scaled_bss : kNaN, r ? r->scaled_ece : kNaN};
        for (double v : vals) {
          csv << ',' << fmt(v, 6);
          cells[c++] = fmt(v, 2);
        }
      }
      csv << '\n';
      char row[256];
      std::snprintf(row, sizeof(row),
                    "%-22s %-14s | %6s %6s %6s %5s %5s | %6s %6s %6s %5s %5s\n",
                    er.name.c_str(), part.c_str(), cells[0].c_str(), cells[1].c_str(),
                    cells[2].c_str(), cells[3].c_str(), cells[4].c_str(), cells[5].c_str(),
                    cells[6].c_str(), cells[7].c_str(), cells[8].c_str(), cells[9].c_str());
      text << row;
    }
    for (const auto& [g, pts] : er.curves)
      for (std::size_t k = 0; k < pts.size(); ++k)
        curves << er.name << ',' << to_string(g) << ',' << k << ',' << fmt(pts[k].mean_confidence, 6)
               << ',' << fmt(pts[k].frequency, 6) << ',' << fmt(pts[k].weight, 6) << '\n';
  }
  out.table_csv = csv.str();
  out.table_text = text.str();
  out.curves_csv = "estimator,granularity,bucket,mean_confidence,frequency,weight\n" + curves.str();
  out.curves_svg = render_svg(out.estimators, config.curve_buckets);
  return out;
}

std::map<std::string, std::pair<double, double>> grid_eta_squared(
    const std::vector<GridCell>& cells) {
  if (cells.empty()) throw DataError("empty grid");
  std::map<std::string, std::set<std::string>> levels;
  for (const GridCell& c : cells)
    for (const auto& [f, v] : c.levels) levels[f].insert(v);
  std::vector<calib::FactorResult> bss, ece;
  for (const GridCell& c : cells) {
    bss.push_back({c.levels, c.mean_bss});
    ece.push_back({c.levels, c.mean_ece});
  }
  std::map<std::string, std::pair<double, double>> out;
  for (const auto& [factor, lv] : levels) {
    if (lv.size() < 2) {
      out[factor] = {0.0, 0.0};
      continue;
    }
    out[factor] = {calib::eta_squared(bss, factor), calib::eta_squared(ece, factor)};
  }
  return out;
}

GridResult run_grid(const std::string& spec_json, const std::filesystem::path& base_dir,
                    const RunConfig& config) {
  static const std::set<std::string> kFactors = {"gen_model", "embedding_tag", "loss",
                                                 "level_agg", "pooling",       "proj_dim"};
  json spec;
  try {
    spec = json::parse(spec_json);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("grid spec: ") + e.what());
  }
  std::map<std::string, std::vector<std::string>> factors;
  struct Source {
    std::string gen_model, tag, manifest, labels;
  };
  std::vector<Source> sources;
  ProbeConfig base = config.probe;
  try {
    for (const auto& [name, values] : spec.at("factors").items()) {
      if (!kFactors.count(name)) throw ConfigError("grid spec: unknown factor '" + name + "'");
      std::vector<std::string> lv;
      for (const json& v : values) lv.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      if (lv.empty()) throw ConfigError("grid spec: factor '" + name + "' has no levels");
      factors[name] = lv;
    }
    for (const json& s : spec.at("sources"))
      sources.push_back({s.value("gen_model", std::string{"default"}),
                         s.value("embedding_tag", std::string{}),
                         s.at("manifest").get<std::string>(), s.at("labels").get<std::string>()});
    if (spec.contains("probe")) {
      json merged = json::parse(probe_config_to_json(base));
      merged.update(spec["probe"]);
      base = probe_config_from_json(merged.dump());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid spec: ") + e.what());
  }
  if (sources.empty()) throw ConfigError("grid spec lists no sources");

  // Cartesian product, last factor varying fastest.
  std::vector<std::map<std::string, std::string>> combos = {{}};
  for (const auto& [name, lv] : factors) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& c : combos)
      for (const std::string& v : lv) {
        auto d = c;
        d[name] = v;
        next.push_back(std::move(d));
      }
    combos = std::move(next);
  }
  if (factors.empty()) throw ConfigError("empty grid");

  std::map<std::pair<std::string, std::string>, std::pair<DatasetManifest, LabelFile>> loaded;
  auto source_for = [&](const std::map<std::string, std::string>& levels)
      -> std::pair<const Source*, std::pair<DatasetManifest, LabelFile>*> {
    const Source* found = nullptr;
    std::size_t matches = 0;
    for (const Source& s : sources) {
      const auto g = levels.find("gen_model");
      const auto t = levels.find("embedding_tag");
      if (g != levels.end() && g->second != s.gen_model) continue;
      if (t != levels.end() && t->second != s.tag) continue;
      found = &s;
      ++matches;
    }
    if (matches != 1)
      throw ConfigError("grid spec: " + std::to_string(matches) + " sources match a cell; " +
                        "add gen_model/embedding_tag factors or sources to disambiguate");
    auto key = std::make_pair(found->gen_model, found->tag);
    auto it = loaded.find(key);
    if (it == loaded.end())
      it = loaded
               .emplace(key, std::make_pair(load_manifest(resolve(found->manifest, base_dir)),
                                            load_labels(resolve(found->labels, base_dir))))
               .first;
    return {found, &it->second};
  };

  GridResult out;
  for (const auto& levels : combos) {
    RunConfig cell = config;
    cell.scope = EvalScope::kCumulative;
    cell.probe = base;
    for (const auto& [name, v] : levels) {
      if (name == "loss") cell.probe.loss = loss_style_from_string(v);
      else if (name == "level_agg") cell.probe.level_agg = level_agg_from_string(v);
      else if (name == "pooling") cell.probe.pooling = pooling_from_string(v);
      else if (name == "proj_dim") {
        try {
          cell.probe.proj_dim = static_cast<std::size_t>(std::stoul(v));
        } catch (const std::exception&) {
          throw ConfigError("grid spec: bad proj_dim level '" + v + "'");
        }
      }
    }
    auto [src, data] = source_for(levels);
    cell.probe.embedding_tag = src->tag;
    validate(cell.probe);
    const ConfidenceFile cf = estimate_probe(data->first, data->second, cell);
    const auto samples = join_samples(cf, data->second);
    const auto reports = calib::crossfold_evaluate(samples, cell.folds, cell.buckets,
                                                   EvalScope::kCumulative);
    double bss_sum = 0.0, ece_sum = 0.0;
    std::size_t bss_n = 0, ece_n = 0;
    for (const CalibrationReport& r : reports) {
      for (double v : {r.bss, r.scaled_bss})
        if (std::isfinite(v)) {
          bss_sum += v;
          ++bss_n;
        }
      if (std::isfinite(r.ece)) {
        ece_sum += r.ece;
        ++ece_n;
      }
    }
    GridCell gc;
    gc.levels = levels;
    gc.mean_bss = bss_n ? bss_sum / static_cast<double>(bss_n) : kNaN;
    gc.mean_ece = ece_n ? ece_sum / static_cast<double>(ece_n) : kNaN;
    out.cells.push_back(std::move(gc));
  }
  out.eta_squared = grid_eta_squared(out.cells);

  std::ostringstream log;
  log << json{{"kind", "header"}, {"run_config", json::parse(config.to_json())}, {"spec", spec}}
             .dump()
      << '\n';
  for (const GridCell& c : out.cells)
    log << json{{"kind", "cell"}, {"levels", c.levels}, {"mean_bss", num(c.mean_bss)},
                {"mean_ece", num(c.mean_ece)}}
               .dump()
        << '\n';
  out.log_jsonl = log.str();
  std::ostringstream eta;
  eta << "factor,mean_bss_eta2,mean_ece_eta2\n";
  for (const auto& [f, v] : out.eta_squared)
    eta << f << ',' << fmt(v.first, 6) << ',' << fmt(v.second, 6) << '\n';
  out.eta_csv = eta.str();
  return out;
}

namespace {

// Replacement for a synthetic token that keeps its token class, so the
// edited text re-tokenizes to the same boundaries.
std::string replacement(const Token& t, std::size_t uid) {
  const unsigned char c = static_cast<unsigned char>(t[0]);
  if (std::isalpha(c) || c == '_') return "fix" + std::to_string(uid) + "_z";
  if (std::isdigit(c)) return "1000" + std::to_string(uid);
  if (c == ' ' || c == '\t') return t == " " ? "\t" : " ";
  static const char* kPunct[] = {"@", "?", "~", "$"};
  return kPunct[uid % 4];
}

std::string chat_body(const std::string& id, const std::string& model,
                      const std::vector<std::string>& texts, std::int64_t prompt_tokens) {
  json choices = json::array();
  std::int64_t completion = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    choices.push_back({{"index", i},
                       {"message", {{"role", "assistant"}, {"content", texts[i]}}},
                       {"logprobs", nullptr},
                       {"finish_reason", "stop"}});
    completion += static_cast<std::int64_t>(tok::normalize_tokenize(texts[i]).tokens.size());
  }
  return json{{"id", id},
              {"object", "chat.completion"},
              {"model", model},
              {"choices", choices},
              {"usage",
               {{"prompt_tokens", prompt_tokens},
                {"completion_tokens", completion},
                {"total_tokens", prompt_tokens + completion}}}}
      .dump();
}

}  // namespace

SynthResult synthesize(const SynthConfig& synth, const RunConfig& config,
                       const std::filesystem::path& out_dir,
                       const std::filesystem::path& cache_dir) {
  if (synth.problems == 0) throw ConfigError("synth needs at least one problem");
  if (synth.datasets.empty()) throw ConfigError("synth needs at least one dataset");
  if (synth.min_lines == 0 || synth.max_lines < synth.min_lines)
    throw ConfigError("synth line range is empty");
  if (synth.embed_dim == 0) throw ConfigError("synth embed_dim must be positive");
  std::filesystem::create_directories(out_dir);
  const auto sidecar = out_dir / "embeddings.f32";
  std::filesystem::remove(sidecar);

  static const char* kNames[] = {"count", "total", "items", "value", "index", "result", "left",
                                 "right", "node",  "queue", "stack", "width", "height", "key",
                                 "acc",   "buf",   "limit", "step",  "row",   "col"};
  static const char kPunct[] = "+-*/()=<>,:";
  Rng rng(synth.seed);
  Rng embed_rng(synth.seed ^ 0xA5A5A5A5DEADBEEFULL);

  std::vector<double> direction(synth.embed_dim);
  double norm = 0.0;
  for (double& d : direction) {
    d = embed_rng.normal();
    norm += d * d;
  }
  for (double& d : direction) d /= std::sqrt(norm);

  SynthResult out;
  out.manifest.base_dir = out_dir;
  const std::string model = config.endpoint.model_name;
  std::size_t uid = 0;
  char idbuf[32];
  for (std::size_t p = 0; p < synth.problems; ++p) {
    std::snprintf(idbuf, sizeof(idbuf), "synth-%05zu", p);
    ManifestRecord r;
    r.problem.id = idbuf;
    r.problem.dataset = synth.datasets[p % synth.datasets.size()];
    r.problem.prompt = "Write the function " + r.problem.id + " as specified.";

    TokenList tokens;
    std::vector<double> q;
    const std::size_t lines =
        synth.min_lines + rng.index(synth.max_lines - synth.min_lines + 1);
    for (std::size_t l = 0; l < lines; ++l) {
      if (const std::size_t depth = rng.index(3)) {
        tokens.push_back(std::string(4 * depth, ' '));
        q.push_back(1.0);
      }
      const std::size_t k = 3 + rng.index(6);
      const std::size_t risky = rng.index(k);
      for (std::size_t t = 0; t < k; ++t) {
        if (t) {
          tokens.push_back(" ");
          q.push_back(1.0);
        }
        const double u = rng.uniform();
        if (u < 0.5) tokens.push_back(std::string(kNames[rng.index(20)]) + "_" + std::to_string(rng.index(10)));
        else if (u < 0.8) tokens.push_back(std::string(1, kPunct[rng.index(sizeof(kPunct) - 1)]));
        else tokens.push_back(std::to_string(rng.index(1000)));
        q.push_back(t == risky ? calib::sigmoid(synth.logit_mean + synth.logit_sd * rng.normal())
                               : 1.0);
      }
      tokens.push_back("\n");
      q.push_back(1.0);
    }
    const std::string code = tok::join(tokens);
    TokenStream ts = tok::normalize_tokenize(code);
    if (ts.tokens != tokens) throw DataError("synthetic tokens do not round-trip the tokenizer");
    const std::size_t n = ts.tokens.size();
    std::vector<bool> correct(n);
    bool all = true;
    for (std::size_t i = 0; i < n; ++i) {
      correct[i] = q[i] >= 1.0 || rng.bernoulli(q[i]);
      all = all && correct[i];
    }
    r.problem.passed = all;
    r.solution.problem_id = r.problem.id;
    r.solution.tokens = ts.tokens;
    r.solution.line_spans = ts.line_spans;

    std::vector<tok::GeneratorToken> gen;
    for (std::size_t i = 0; i < n; ++i) {
      const Token& t = ts.tokens[i];
      if (t.size() >= 4 && std::isalpha(static_cast<unsigned char>(t[0])) && rng.bernoulli(0.3)) {
        const std::size_t cut = 1 + rng.index(t.size() - 1);
        gen.push_back({t.substr(0, cut), q[i]});
        gen.push_back({t.substr(cut), q[i]});
      } else {
        gen.push_back({t, q[i]});
      }
    }
    r.solution.gen_tokens = std::move(gen);

    EmbeddingMatrix em;
    em.rows = n;
    em.cols = synth.embed_dim;
    em.data.resize(n * synth.embed_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = calib::logit(std::min(q[i], 0.999));
      for (std::size_t c = 0; c < synth.embed_dim; ++c)
        em.data[i * synth.embed_dim + c] =
            static_cast<float>(0.5 * s * direction[c] + 0.5 * embed_rng.normal());
    }
    EmbeddingRef ref;
    ref.tag = config.probe.embedding_tag.empty() ? "MIDDLE" : config.probe.embedding_tag;
    ref.dim = synth.embed_dim;
    ref.path = sidecar.filename().string();
    ref.offset = append_embeddings(sidecar, em);
    r.solution.embeddings = std::move(ref);

    if (!all) {
      if (rng.bernoulli(0.1)) {
        TokenList wrong = ts.tokens;
        wrong[0] = replacement(wrong[0], uid++);
        r.patches.push_back({r.problem.id, wrong, PatchSource::kModelFixer, "synth-weak", false});
      }
      if (!rng.bernoulli(synth.discard_rate)) {
        TokenList fixed = ts.tokens;
        for (std::size_t i = 0; i < n; ++i)
          if (!correct[i]) fixed[i] = replacement(fixed[i], uid++);
        r.patches.push_back({r.problem.id, fixed, PatchSource::kModelFixer, "synth-fixer", true});
        TokenList reference = tok::normalize_tokenize("def reference_" + std::to_string(p) +
                                                      " ( ) :\n    return 0\n")
                                  .tokens;
        r.patches.push_back(
            {r.problem.id, reference, PatchSource::kReferenceFallback, "reference", true});
      }
    }

    if (!cache_dir.empty()) {
      const std::int64_t prompt_tokens =
          static_cast<std::int64_t>(tok::normalize_tokenize(r.problem.prompt).tokens.size());
      std::vector<std::string> variants;
      for (std::size_t v = 0; v < synth.variants; ++v) {
        TokenList vt = ts.tokens;
        for (std::size_t i = 0; i < n; ++i)
          if (!rng.bernoulli(q[i])) vt[i] = replacement(vt[i], uid++);
        variants.push_back(tok::join(vt));
      }
      RunConfig vc = config;
      vc.multisample.variant_count = synth.variants;
      const SampleRequest vreq = variant_request(r.problem, vc);
      store_cached_response(cache_dir, model, vreq,
                            chat_body("synth-v-" + r.problem.id, model, variants, prompt_tokens));

      const auto line_text = tok::line_strings(ts.tokens, ts.line_spans);
      std::string reply;
      if (rng.bernoulli(synth.noncompliant_rate)) {
        reply = "I cannot judge this code without running it.";
      } else {
        reply = "Here are my estimates.\n```python\n[";
        for (std::size_t l = 0; l < ts.line_spans.size(); ++l) {
          double prod = 1.0;
          for (std::size_t i = ts.line_spans[l].begin; i < ts.line_spans[l].end; ++i) prod *= q[i];
          reply += (l ? ", " : "") + fmt(std::clamp(prod, 0.01, 0.99), 2);
        }
        reply += "]\n```\n";
      }
      const auto prompt = confidence::build_reflective_prompt(code, line_text);
      SampleRequest rreq{prompt.text, 1, 0.0, false, config.max_tokens};
      store_cached_response(
          cache_dir, model, rreq,
          chat_body("synth-r-" + r.problem.id, model, {reply},
                    static_cast<std::int64_t>(tok::normalize_tokenize(prompt.text).tokens.size())));
    }

    out.truth[r.problem.id] = q;
    out.realized[r.problem.id] = correct;
    out.manifest.records.push_back(std::move(r));
  }
  save_manifest(out.manifest, out_dir / "manifest.jsonl");
  return out;
}

}  // namespace loccal
