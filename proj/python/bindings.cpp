#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "loccal/calib.hpp"
#include "loccal/confidence.hpp"
#include "loccal/diff_label.hpp"
#include "loccal/error.hpp"
#include "loccal/tok.hpp"

namespace py = pybind11;
using namespace loccal;

namespace {

std::vector<PredictionSample> samples_of(const std::vector<double>& conf,
                                         const std::vector<bool>& outcome) {
  if (conf.size() != outcome.size())
    throw DataError("confidence and outcome lists differ in length");
  std::vector<PredictionSample> s;
  s.reserve(conf.size());
  for (std::size_t i = 0; i < conf.size(); ++i) s.push_back({conf[i], outcome[i]});
  return s;
}

std::vector<LineSpan> spans_of(const std::vector<std::pair<std::size_t, std::size_t>>& v) {
  std::vector<LineSpan> out;
  for (const auto& [b, e] : v) out.push_back({b, e});
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> pairs_of(const std::vector<LineSpan>& v) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const LineSpan& s : v) out.emplace_back(s.begin, s.end);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Localized confidence labels, estimators and calibration metrics";

  static py::exception<Error> base_exc(m, "Error");
  static py::exception<ConfigError> config_exc(m, "ConfigError", base_exc.ptr());
  static py::exception<DataError> data_exc(m, "DataError", base_exc.ptr());
  static py::exception<TransportError> transport_exc(m, "TransportError", base_exc.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_exc, e.what());
    } catch (const DataError& e) {
      py::set_error(data_exc, e.what());
    } catch (const TransportError& e) {
      py::set_error(transport_exc, e.what());
    } catch (const Error& e) {
      py::set_error(base_exc, e.what());
    }
  });

  m.def("tokenize", [](const std::string& text) {
    TokenStream ts = tok::normalize_tokenize(text);
    return py::make_tuple(ts.tokens, pairs_of(ts.line_spans));
  }, py::arg("text"), "Tokens and (begin, end) line spans of `text`.");

  m.def("align_probs", [](const std::vector<std::pair<std::string, double>>& gen,
                          const TokenList& norm, const std::string& merge) {
    std::vector<tok::GeneratorToken> g;
    for (const auto& [t, p] : gen) g.push_back({t, p});
    return tok::align_probs(g, norm, merge == "mean" ? tok::ProbMerge::kMean : tok::ProbMerge::kMin);
  }, py::arg("gen_tokens"), py::arg("tokens"), py::arg("merge") = "min");

  m.def("token_diff", [](const TokenList& a, const TokenList& b) {
    py::list ops;
    for (const DiffOp& op : diff::token_diff(a, b).ops)
      ops.append(py::make_tuple(to_string(op.tag), op.a_begin, op.a_end, op.b_begin, op.b_end));
    return ops;
  }, py::arg("a"), py::arg("b"));

  m.def("kept_labels", [](const TokenList& solution,
                          const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                          const TokenList& patch) {
    const KeptLabels k = diff::kept_labels(solution, spans_of(spans), patch);
    py::dict d;
    d["token_kept"] = k.token_kept;
    d["line_kept"] = k.line_kept;
    d["problem_kept"] = k.problem_kept;
    return d;
  }, py::arg("solution"), py::arg("line_spans"), py::arg("patch"));

  m.def("multisample_token_confidence", [](const TokenList& sample,
                                           const std::vector<TokenList>& variants) {
    return confidence::multisample_token_confidence(sample, variants);
  }, py::arg("sample"), py::arg("variants"));

  m.def("build_reflective_prompt", [](const std::string& code,
                                      const std::vector<std::string>& lines) {
    return confidence::build_reflective_prompt(code, lines).text;
  }, py::arg("code"), py::arg("lines"));

  m.def("parse_reflective_response", [](const std::string& text, std::size_t n, double rate) {
    const auto r = confidence::parse_reflective_response(text, n, rate);
    return py::make_tuple(r.line_conf, r.compliant);
  }, py::arg("text"), py::arg("expected_len"), py::arg("fallback_rate"));

  m.def("brier", [](const std::vector<double>& c, const std::vector<bool>& y) {
    return calib::brier(samples_of(c, y));
  }, py::arg("confidence"), py::arg("outcome"));
  m.def("brier_ref", &calib::brier_ref, py::arg("base_rate"));
  m.def("skill_score", &calib::skill_score, py::arg("brier"), py::arg("brier_ref"));
  m.def("ece", [](const std::vector<double>& c, const std::vector<bool>& y, std::size_t buckets) {
    return calib::ece(samples_of(c, y), buckets).ece;
  }, py::arg("confidence"), py::arg("outcome"), py::arg("buckets") = 10);
  m.def("auc_roc", [](const std::vector<double>& c, const std::vector<bool>& y) {
    return calib::auc_roc(samples_of(c, y));
  }, py::arg("confidence"), py::arg("outcome"));
  m.def("fit_platt", [](const std::vector<double>& c, const std::vector<bool>& y) {
    const PlattParams p = calib::fit_platt(samples_of(c, y));
    return py::make_tuple(p.scale, p.bias);
  }, py::arg("confidence"), py::arg("outcome"));
  m.def("apply_platt", [](double scale, double bias, const std::vector<double>& c) {
    std::vector<double> out;
    for (double p : c) out.push_back(calib::apply_platt({scale, bias}, p));
    return out;
  }, py::arg("scale"), py::arg("bias"), py::arg("confidence"));
  m.def("eta_squared", [](const std::vector<std::pair<std::map<std::string, std::string>, double>>& cells,
                          const std::string& factor) {
    std::vector<calib::FactorResult> r;
    for (const auto& [levels, v] : cells) r.push_back({levels, v});
    return calib::eta_squared(r, factor);
  }, py::arg("cells"), py::arg("factor"));
}
