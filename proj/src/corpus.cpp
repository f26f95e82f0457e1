#include "loccal/corpus.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "loccal/error.hpp"
#include "loccal/random.hpp"

namespace loccal {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "embedding sidecars are read as native little-endian float32");

std::string to_string(PatchSource s) {
  return s == PatchSource::kModelFixer ? "model_fixer" : "reference_fallback";
}

PatchSource patch_source_from_string(const std::string& s) {
  if (s == "model_fixer") return PatchSource::kModelFixer;
  if (s == "reference_fallback") return PatchSource::kReferenceFallback;
  throw DataError("unknown patch source '" + s + "'");
}

std::string to_string(FoldMode m) {
  return m == FoldMode::kDisjointKFold ? "disjoint_kfold" : "repeated_random_split";
}

FoldMode fold_mode_from_string(const std::string& s) {
  if (s == "disjoint_kfold" || s == "disjoint") return FoldMode::kDisjointKFold;
  if (s == "repeated_random_split" || s == "repeated") return FoldMode::kRepeatedRandomSplit;
  throw ConfigError("unknown fold mode '" + s + "'");
}

const ManifestRecord* DatasetManifest::find(const std::string& problem_id) const {
  for (const ManifestRecord& r : records)
    if (r.problem.id == problem_id) return &r;
  return nullptr;
}

namespace {

[[noreturn]] void field_error(const std::string& id, const std::string& field,
                              const std::string& what) {
  throw DataError("record '" + id + "' field '" + field + "': " + what);
}

std::filesystem::path resolve(const std::string& path, const std::filesystem::path& base) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base.empty()) return p;
  return base / p;
}

json to_json(const ManifestRecord& r) {
  json problem = {{"id", r.problem.id},
                  {"dataset", r.problem.dataset},
                  {"prompt", r.problem.prompt},
                  {"passed", r.problem.passed}};
  const GeneratedSolution& s = r.solution;
  json spans = json::array();
  for (const LineSpan& l : s.line_spans) spans.push_back({l.begin, l.end});
  json sol = {{"problem_id", s.problem_id}, {"tokens", s.tokens}, {"line_spans", spans}};
  if (s.token_probs) sol["token_probs"] = *s.token_probs;
  if (s.variants) sol["variants"] = *s.variants;
  if (s.embeddings) {
    const EmbeddingRef& e = *s.embeddings;
    json emb = {{"tag", e.tag}, {"dim", e.dim}};
    if (!e.path.empty()) {
      emb["path"] = e.path;
      emb["offset"] = e.offset;
    } else {
      emb["data"] = e.inline_data;
    }
    sol["embeddings"] = emb;
  }
  if (s.gen_tokens) {
    json g = json::array();
    for (const tok::GeneratorToken& t : *s.gen_tokens) g.push_back({t.text, t.prob});
    sol["gen_tokens"] = g;
  }
  json patches = json::array();
  for (const PatchCandidate& p : r.patches) {
    patches.push_back({{"problem_id", p.problem_id},
                       {"tokens", p.tokens},
                       {"source", to_string(p.source)},
                       {"fixer_name", p.fixer_name},
                       {"passes_tests", p.passes_tests}});
  }
  return {{"schema_version", kSchemaVersion},
          {"problem", problem},
          {"solution", sol},
          {"patches", patches}};
}

ManifestRecord from_json(const json& j) {
  ManifestRecord r;
  const json& p = j.at("problem");
  r.problem.id = p.at("id").get<std::string>();
  r.problem.dataset = p.at("dataset").get<std::string>();
  r.problem.prompt = p.value("prompt", std::string{});
  r.problem.passed = p.at("passed").get<bool>();

  const json& s = j.at("solution");
  GeneratedSolution& sol = r.solution;
  sol.problem_id = s.at("problem_id").get<std::string>();
  sol.tokens = s.at("tokens").get<TokenList>();
  if (s.contains("line_spans")) {
    for (const json& span : s.at("line_spans")) {
      sol.line_spans.push_back({span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()});
    }
  } else {
    sol.line_spans = tok::line_spans_of(sol.tokens);
  }
  if (s.contains("token_probs") && !s["token_probs"].is_null())
    sol.token_probs = s["token_probs"].get<std::vector<double>>();
  if (s.contains("variants") && !s["variants"].is_null())
    sol.variants = s["variants"].get<std::vector<TokenList>>();
  if (s.contains("embeddings") && !s["embeddings"].is_null()) {
    const json& e = s["embeddings"];
    EmbeddingRef ref;
    ref.tag = e.value("tag", std::string{});
    ref.dim = e.at("dim").get<std::size_t>();
    if (e.contains("path")) {
      ref.path = e.at("path").get<std::string>();
      ref.offset = e.value("offset", std::uint64_t{0});
    } else {
      ref.inline_data = e.at("data").get<std::vector<float>>();
    }
    sol.embeddings = std::move(ref);
  }
  if (s.contains("gen_tokens") && !s["gen_tokens"].is_null()) {
    std::vector<tok::GeneratorToken> g;
    for (const json& t : s["gen_tokens"])
      g.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
    sol.gen_tokens = std::move(g);
  }

  if (j.contains("patches")) {
    for (const json& pc : j.at("patches")) {
      PatchCandidate c;
      c.problem_id = pc.at("problem_id").get<std::string>();
      c.tokens = pc.at("tokens").get<TokenList>();
      c.source = patch_source_from_string(pc.value("source", std::string{"model_fixer"}));
      c.fixer_name = pc.value("fixer_name", std::string{});
      c.passes_tests = pc.at("passes_tests").get<bool>();
      r.patches.push_back(std::move(c));
    }
  }
  return r;
}

void check_probs(const std::string& id, const std::string& field,
                 const std::vector<double>& probs) {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(probs[i]) || probs[i] < 0.0 || probs[i] > 1.0)
      field_error(id, field, "value " + std::to_string(probs[i]) + " at index " +
                                 std::to_string(i) + " outside [0,1]");
  }
}

}  // namespace

void validate_record(const ManifestRecord& r, const std::filesystem::path& base_dir) {
  const std::string& id = r.problem.id;
  if (id.empty()) field_error(id, "problem.id", "empty");
  if (r.problem.dataset.empty()) field_error(id, "problem.dataset", "empty");
  const GeneratedSolution& s = r.solution;
  if (s.problem_id != id)
    field_error(id, "solution.problem_id", "references '" + s.problem_id + "'");
  for (std::size_t i = 0; i < s.tokens.size(); ++i)
    if (s.tokens[i].empty()) field_error(id, "solution.tokens", "empty token at " + std::to_string(i));
  try {
    tok::check_partition(s.line_spans, s.tokens.size());
  } catch (const DataError& e) {
    field_error(id, "solution.line_spans", e.what());
  }
  if (s.token_probs) {
    if (s.token_probs->size() != s.tokens.size())
      field_error(id, "solution.token_probs",
                  "length " + std::to_string(s.token_probs->size()) + " != token count " +
                      std::to_string(s.tokens.size()));
    check_probs(id, "solution.token_probs", *s.token_probs);
  }
  if (s.gen_tokens) {
    std::string text;
    std::vector<double> probs;
    for (const auto& g : *s.gen_tokens) {
      text += g.text;
      probs.push_back(g.prob);
    }
    if (text != tok::join(s.tokens))
      field_error(id, "solution.gen_tokens", "text differs from solution tokens");
    check_probs(id, "solution.gen_tokens", probs);
  }
  if (s.embeddings) {
    const EmbeddingRef& e = *s.embeddings;
    if (e.dim == 0) field_error(id, "solution.embeddings.dim", "zero");
    const std::uint64_t need = static_cast<std::uint64_t>(s.tokens.size()) * e.dim;
    if (e.path.empty()) {
      if (e.inline_data.size() != need)
        field_error(id, "solution.embeddings.data",
                    "holds " + std::to_string(e.inline_data.size()) + " values, expected " +
                        std::to_string(need));
    } else {
      const auto p = resolve(e.path, base_dir);
      std::error_code ec;
      const auto size = std::filesystem::file_size(p, ec);
      if (ec) field_error(id, "solution.embeddings.path", "cannot stat " + p.string());
      if (size < e.offset + need * sizeof(float))
        field_error(id, "solution.embeddings.path",
                    "sidecar too short for " + std::to_string(s.tokens.size()) + " x " +
                        std::to_string(e.dim) + " floats at offset " + std::to_string(e.offset));
    }
  }
  for (std::size_t i = 0; i < r.patches.size(); ++i) {
    if (r.patches[i].problem_id != id)
      field_error(id, "patches[" + std::to_string(i) + "].problem_id",
                  "references '" + r.patches[i].problem_id + "'");
  }
}

ManifestReader::ManifestReader(const std::filesystem::path& path)
    : owned_(std::make_unique<std::ifstream>(path)), base_dir_(path.parent_path()) {
  if (!*owned_) throw ConfigError("cannot open record file " + path.string());
  in_ = owned_.get();
}

ManifestReader::ManifestReader(std::istream& in, std::filesystem::path base_dir)
    : in_(&in), base_dir_(std::move(base_dir)) {}

ManifestReader::~ManifestReader() = default;
ManifestReader::ManifestReader(ManifestReader&&) noexcept = default;
ManifestReader& ManifestReader::operator=(ManifestReader&&) noexcept = default;

std::optional<ManifestRecord> ManifestReader::next() {
  std::string line;
  while (std::getline(*in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no_) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + "parse error: " + e.what());
    }
    if (!j.is_object()) throw DataError(where + "record is not an object");
    const std::string kind = j.value("kind", std::string{"record"});
    if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion)
      throw DataError(where + "missing or unsupported schema_version (expected \"v1\")");
    if (kind == "header") continue;
    if (kind == "base_rates") {
      for (const auto& [k, v] : j.at("base_rates").items()) base_rates_[k] = v.get<double>();
      continue;
    }
    if (kind != "record") throw DataError(where + "unknown record kind '" + kind + "'");
    ManifestRecord r;
    try {
      r = from_json(j);
    } catch (const json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    try {
      validate_record(r, base_dir_);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    return r;
  }
  return std::nullopt;
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  ManifestReader reader(in, base_dir);
  std::set<std::string> ids;
  while (auto r = reader.next()) {
    if (!ids.insert(r->problem.id).second)
      throw DataError("line " + std::to_string(reader.line_number()) + ": record '" +
                      r->problem.id + "' field 'problem.id': duplicate id");
    m.records.push_back(std::move(*r));
  }
  m.base_rate_cache = reader.base_rates();
  if (m.records.empty()) {
    m.warnings.push_back("record file contains no records");
    std::cerr << "warning: record file contains no records\n";
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open record file " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(const DatasetManifest& m, std::ostream& out) {
  if (!m.base_rate_cache.empty()) {
    json j = {{"schema_version", kSchemaVersion}, {"kind", "base_rates"},
              {"base_rates", m.base_rate_cache}};
    out << j.dump() << '\n';
  }
  for (const ManifestRecord& r : m.records) out << to_json(r).dump() << '\n';
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  // Relative sidecar paths are rewritten against the new manifest directory.
  const fs::path from = fs::absolute(m.base_dir.empty() ? fs::path(".") : m.base_dir);
  const fs::path to = fs::absolute(path).parent_path();
  const DatasetManifest* src = &m;
  DatasetManifest moved;
  if (from.lexically_normal() != to.lexically_normal()) {
    moved = m;
    for (ManifestRecord& r : moved.records) {
      auto& e = r.solution.embeddings;
      if (e && !e->path.empty() && fs::path(e->path).is_relative())
        e->path = (from / e->path).lexically_normal().lexically_relative(to).generic_string();
    }
    src = &moved;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_manifest(*src, out);
}

EmbeddingMatrix read_embeddings(const EmbeddingRef& ref, std::size_t token_count,
                                const std::filesystem::path& base_dir) {
  EmbeddingMatrix m;
  m.rows = token_count;
  m.cols = ref.dim;
  const std::size_t n = token_count * ref.dim;
  if (ref.path.empty()) {
    if (ref.inline_data.size() != n) throw DataError("inline embeddings have wrong size");
    m.data = ref.inline_data;
    return m;
  }
  const auto p = resolve(ref.path, base_dir);
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open embedding sidecar " + p.string());
  in.seekg(static_cast<std::streamoff>(ref.offset));
  m.data.resize(n);
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw DataError("embedding sidecar " + p.string() + " truncated");
  return m;
}

std::uint64_t append_embeddings(const std::filesystem::path& sidecar, const EmbeddingMatrix& m) {
  std::ofstream out(sidecar, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot write " + sidecar.string());
  out.seekp(0, std::ios::end);
  const auto offset = static_cast<std::uint64_t>(out.tellp());
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  return offset;
}

double base_rate(const std::vector<bool>& labels) {
  if (labels.empty()) throw DataError("base rate of an empty label list");
  std::size_t pos = 0;
  for (bool b : labels) pos += b ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

FoldAssignment assign_folds(const std::vector<std::string>& record_ids, std::size_t k,
                            FoldMode mode, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (record_ids.size() < k)
    throw DataError("cannot split " + std::to_string(record_ids.size()) + " records into " +
                    std::to_string(k) + " folds");
  FoldAssignment fa;
  fa.k = k;
  fa.mode = mode;
  fa.seed = seed;
  Rng rng(seed);
  const std::size_t n = record_ids.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  if (mode == FoldMode::kDisjointKFold) {
    rng.shuffle(order);
    std::vector<std::size_t> fold_of(n);
    for (std::size_t pos = 0; pos < n; ++pos) fold_of[order[pos]] = pos % k;
    for (std::size_t i = 0; i < n; ++i) fa.assignment[record_ids[i]] = fold_of[i];
    fa.splits.resize(k);
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t i = 0; i < n; ++i)
        (fold_of[i] == f ? fa.splits[f].test : fa.splits[f].train).push_back(record_ids[i]);
    }
    return fa;
  }

  const auto holdout = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(kHoldoutFraction * static_cast<double>(n))));
  for (std::size_t f = 0; f < k; ++f) {
    rng.shuffle(order);
    std::vector<bool> in_test(n, false);
    for (std::size_t pos = 0; pos < holdout; ++pos) in_test[order[pos]] = true;
    FoldSplit split;
    for (std::size_t i = 0; i < n; ++i)
      (in_test[i] ? split.test : split.train).push_back(record_ids[i]);
    fa.splits.push_back(std::move(split));
  }
  return fa;
}

}  // namespace loccal
