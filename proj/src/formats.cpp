#include "loccal/formats.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "loccal/error.hpp"

namespace loccal {
namespace {

using nlohmann::json;

json parse_line(const std::string& line, std::size_t line_no, const char* what) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
  }
}

json header_json(const std::string& run_config) {
  return run_config.empty() ? json::object() : json::parse(run_config);
}

template <typename F>
void for_each_line(std::istream& in, const char* what, F&& f) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = parse_line(line, line_no, what);
    try {
      f(j);
    } catch (const json::exception& e) {
      throw DataError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<std::size_t> rle_encode(const std::vector<bool>& bits) {
  std::vector<std::size_t> runs;
  bool current = true;
  std::size_t count = 0;
  for (bool b : bits) {
    if (b == current) {
      ++count;
    } else {
      runs.push_back(count);
      current = b;
      count = 1;
    }
  }
  if (count > 0 || runs.empty()) runs.push_back(count);
  return runs;
}

std::vector<bool> rle_decode(const std::vector<std::size_t>& runs) {
  std::vector<bool> bits;
  bool value = true;
  for (std::size_t r : runs) {
    bits.insert(bits.end(), r, value);
    value = !value;
  }
  return bits;
}

const LabelRecord* LabelFile::find(const std::string& problem_id) const {
  for (const LabelRecord& r : records)
    if (r.problem_id == problem_id) return &r;
  return nullptr;
}

const ConfidenceRecord* ConfidenceFile::find(const std::string& problem_id) const {
  for (const ConfidenceRecord& r : records)
    if (r.problem_id == problem_id) return &r;
  return nullptr;
}

void write_labels(const LabelFile& f, std::ostream& out) {
  out << json{{"kind", "header"}, {"schema_version", "v1"}, {"run_config", header_json(f.run_config)}}
             .dump()
      << '\n';
  for (const LabelRecord& r : f.records) {
    json line_kept = json::array();
    for (bool b : r.labels.line_kept) line_kept.push_back(b);
    out << json{{"kind", "labels"},
                {"problem_id", r.problem_id},
                {"dataset", r.dataset},
                {"patch_source", r.patch_source},
                {"n_tokens", r.labels.token_kept.size()},
                {"token_kept_rle", rle_encode(r.labels.token_kept)},
                {"line_kept", line_kept},
                {"problem_kept", r.labels.problem_kept}}
               .dump()
        << '\n';
  }
}

LabelFile read_labels(std::istream& in) {
  LabelFile f;
  for_each_line(in, "labels", [&](const json& j) {
    const std::string kind = j.value("kind", "labels");
    if (kind == "header") {
      f.run_config = j.value("run_config", json::object()).dump();
      return;
    }
    LabelRecord r;
    r.problem_id = j.at("problem_id").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.patch_source = j.value("patch_source", "");
    r.labels.token_kept = rle_decode(j.at("token_kept_rle").get<std::vector<std::size_t>>());
    if (j.contains("n_tokens") && j["n_tokens"].get<std::size_t>() != r.labels.token_kept.size())
      throw DataError("labels for '" + r.problem_id + "': run lengths do not sum to n_tokens");
    for (const json& b : j.at("line_kept")) r.labels.line_kept.push_back(b.get<bool>());
    r.labels.problem_kept = j.at("problem_kept").get<bool>();
    f.records.push_back(std::move(r));
  });
  return f;
}

void write_confidences(const ConfidenceFile& f, std::ostream& out) {
  out << json{{"kind", "header"},
              {"schema_version", "v1"},
              {"name", f.name},
              {"estimator", to_string(f.estimator)},
              {"run_config", header_json(f.run_config)}}
             .dump()
      << '\n';
  for (const ConfidenceRecord& r : f.records) {
    json j = {{"kind", "confidence"},
              {"problem_id", r.problem_id},
              {"dataset", r.dataset},
              {"token_conf", r.conf.token_conf},
              {"line_conf", r.conf.line_conf},
              {"problem_conf", r.conf.problem_conf},
              {"vacuous_lines", r.conf.vacuous_lines}};
    if (f.estimator == EstimatorKind::kReflective) j["compliant"] = r.compliant;
    out << j.dump() << '\n';
  }
}

ConfidenceFile read_confidences(std::istream& in) {
  ConfidenceFile f;
  bool have_header = false;
  for_each_line(in, "confidences", [&](const json& j) {
    const std::string kind = j.value("kind", "confidence");
    if (kind == "header") {
      f.name = j.at("name").get<std::string>();
      f.estimator = estimator_from_string(j.at("estimator").get<std::string>());
      f.run_config = j.value("run_config", json::object()).dump();
      have_header = true;
      return;
    }
    if (!have_header) throw DataError("confidence file lacks a header line");
    ConfidenceRecord r;
    r.problem_id = j.at("problem_id").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.conf.estimator = f.estimator;
    r.conf.token_conf = j.at("token_conf").get<std::vector<double>>();
    r.conf.line_conf = j.at("line_conf").get<std::vector<double>>();
    r.conf.problem_conf = j.at("problem_conf").get<double>();
    r.conf.vacuous_lines = j.value("vacuous_lines", std::vector<std::size_t>{});
    r.compliant = j.value("compliant", true);
    f.records.push_back(std::move(r));
  });
  return f;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_labels(const LabelFile& f, const std::filesystem::path& path) {
  std::ostringstream ss;
  write_labels(f, ss);
  write_text_file(path, ss.str());
}

LabelFile load_labels(const std::filesystem::path& path) {
  std::istringstream ss(read_text_file(path));
  return read_labels(ss);
}

void save_confidences(const ConfidenceFile& f, const std::filesystem::path& path) {
  std::ostringstream ss;
  write_confidences(f, ss);
  write_text_file(path, ss.str());
}

ConfidenceFile load_confidences(const std::filesystem::path& path) {
  std::istringstream ss(read_text_file(path));
  return read_confidences(ss);
}

}  // namespace loccal
