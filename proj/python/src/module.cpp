#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "icl/attention.hpp"
#include "icl/bayes.hpp"
#include "icl/config.hpp"
#include "icl/corpus.hpp"
#include "icl/encoding.hpp"
#include "icl/error.hpp"
#include "icl/experiments.hpp"
#include "icl/solver.hpp"

namespace py = pybind11;
using namespace icl;

namespace {

TokenSeq to_tokens(const std::vector<std::pair<int, int>>& pairs) {
  TokenSeq seq;
  seq.reserve(pairs.size());
  for (auto [t, k] : pairs) seq.push_back({t, k});
  return seq;
}

std::vector<std::pair<int, int>> from_tokens(const TokenSeq& seq) {
  std::vector<std::pair<int, int>> out;
  out.reserve(seq.size());
  for (const auto& tok : seq) out.emplace_back(tok.topic, tok.cls);
  return out;
}

AttentionSpec attention_from(const std::string& kind, const std::vector<double>& weights) {
  if (kind == "uniform") return UniformAttention{};
  if (kind == "position_weighted") return make_position_weighted(weights);
  throw InvalidArgument("attention must be 'uniform' or 'position_weighted'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Masked-prediction transformer laboratory";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InfiniteDivergence>(m, "InfiniteDivergence", PyExc_ArithmeticError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def("closed_form_value_matrix", [](double mask_prob, int topics, int classes) {
    auto s = closed_form_value_matrix(mask_prob, topics, classes);
    py::dict d;
    d["u"] = s.u;
    d["q"] = s.q;
    d["value"] = s.value;
    return d;
  }, py::arg("mask_prob"), py::arg("topics"), py::arg("classes"));

  m.def("encode", [](int topics, int classes, const std::vector<std::pair<int, int>>& tokens,
                     const std::vector<int>& mask_positions) {
    Vocabulary v(topics, classes);
    MaskedSeq seq{to_tokens(tokens), mask_positions};
    return encode_masked(v, seq).values;
  }, py::arg("topics"), py::arg("classes"), py::arg("tokens"), py::arg("mask_positions") = std::vector<int>{});

  m.def("position_weights", &position_weights, py::arg("contexts"), py::arg("gamma"));

  m.def("forward", [](const Eigen::MatrixXd& value, const Eigen::MatrixXd& z, const std::string& attention,
                      const std::vector<double>& weights, int segment_len) {
    return forward(value, attention_from(attention, weights), z, segment_len);
  }, py::arg("value"), py::arg("z"), py::arg("attention") = "uniform",
     py::arg("weights") = std::vector<double>{}, py::arg("segment_len") = 0);

  m.def("sample_train_sequence", [](std::uint64_t seed, int topics, int classes, int tau, int length,
                                    const std::string& mode, double key_topic_prob, double key_class_prob) {
    Vocabulary v(topics, classes);
    Rng rng(seed);
    auto spec = sample_concept(rng, v, tau, topic_mode_from_string(mode), key_topic_prob, key_class_prob);
    return from_tokens(gen_train_sequence(rng, v, spec, length));
  }, py::arg("seed"), py::arg("topics"), py::arg("classes"), py::arg("tau"), py::arg("length"),
     py::arg("mode") = "uniform", py::arg("key_topic_prob") = 0.55, py::arg("key_class_prob") = 0.91);

  m.def("parse_sequence_line", [](const std::string& line) {
    auto s = parse_sequence_line(line);
    return py::make_tuple(from_tokens(s.base), s.mask_positions);
  }, py::arg("line"));

  m.def("canonical_config", [](const std::string& text) {
    auto c = parse_config(text);
    validate(c);
    return to_text(c);
  }, py::arg("text") = "", "Parses and validates a config, returning the full resolved text.");

  m.def("config_keys", &config_keys);
  m.def("command_names", &command_names);

  m.def("run_command", [](const std::string& name, const std::string& config_text, std::uint64_t seed,
                          const std::filesystem::path& out_dir) {
    auto c = parse_config(config_text);
    validate(c);
    CommandResult r;
    {
      py::gil_scoped_release release;
      r = run_command(name, c, seed, out_dir);
    }
    return py::make_tuple(static_cast<int>(r.exit_code()), r.summary_json);
  }, py::arg("name"), py::arg("config_text"), py::arg("seed"), py::arg("out_dir"),
     "Runs a named command and returns (exit_code, summary_json).");

  m.def("kl_divergence", [](const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q) {
    return kl_divergence(CategoricalSequenceDist(p), CategoricalSequenceDist(q));
  }, py::arg("p"), py::arg("q"));

  m.def("exact_posterior", [](const std::string& family_text, const std::vector<std::vector<Sequence>>& pretrain,
                              const std::vector<Sequence>& contexts, const Sequence& query) {
    auto f = parse_concept_family(family_text);
    auto r = exact_posterior(f, Observations{pretrain, contexts, query});
    py::dict d;
    d["posterior"] = r.posterior;
    d["concept_weights"] = r.concept_weights;
    d["argmax"] = r.argmax;
    d["reference_argmax"] = r.reference_argmax;
    d["agreement"] = r.agreement;
    return d;
  }, py::arg("family_text"), py::arg("pretrain"), py::arg("contexts"), py::arg("query"));
}
