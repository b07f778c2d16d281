// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "attrlab/analysis.hpp"
#include "attrlab/experiment.hpp"
#include "attrlab/faithfulness.hpp"

namespace py = pybind11;
using namespace attrlab;

namespace {

using json = nlohmann::json;

json parse(const std::string& s) { return s.empty() ? json::object() : json::parse(s); }

TargetMode parse_target(const std::string& s) {
  if (s == "predicted") return TargetMode::kPredicted;
  if (s == "gold") return TargetMode::kGold;
  throw InvalidArgument("target must be 'predicted' or 'gold'");
}

py::dict trace_dict(const ForwardTrace& tr) {
  py::dict d;
  d["logits"] = tr.logits;
  d["probs"] = tr.probs;
  d["predicted"] = tr.predicted;
  d["last_hidden"] = tr.last_hidden;
  d["activations"] = tr.mlp_activations;
  return d;
}

py::dict ia_dict(const IaNeurons& ia) {
  py::dict d;
  d["raw"] = ia.raw;
  d["raw_sources"] = ia.raw_sources;
  d["unique"] = ia.unique;
  d["unique_sources"] = ia.unique_sources;
  d["short_list"] = ia.short_list;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Instance and neuron attribution on a small transformer classifier";
  m.attr("__version__") = std::string(kToolVersion);

  // Translators registered later are tried first, so the base class goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());

  py::class_<NeuronId>(m, "NeuronId")
      .def(py::init<std::uint32_t, std::uint32_t>(), py::arg("layer"), py::arg("unit"))
      .def_readwrite("layer", &NeuronId::layer)
      .def_readwrite("unit", &NeuronId::unit)
      .def("__eq__", [](const NeuronId& a, const NeuronId& b) { return a == b; })
      .def("__lt__", [](const NeuronId& a, const NeuronId& b) { return a < b; })
      .def("__hash__", [](const NeuronId& n) { return (std::size_t{n.layer} << 32) | n.unit; })
      .def("__repr__", [](const NeuronId& n) {
        return "NeuronId(" + std::to_string(n.layer) + ", " + std::to_string(n.unit) + ")";
      });

  py::class_<Instance>(m, "Instance")
      .def(py::init<>())
      .def_readwrite("id", &Instance::id)
      .def_readwrite("premise", &Instance::premise)
      .def_readwrite("hypothesis", &Instance::hypothesis)
      .def_readwrite("raw_premise", &Instance::raw_premise)
      .def_readwrite("raw_hypothesis", &Instance::raw_hypothesis)
      .def_readwrite("label", &Instance::label)
      .def("__repr__", [](const Instance& i) { return "Instance('" + i.id + "')"; });

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("instances", &Dataset::instances)
      .def_readwrite("split_name", &Dataset::split_name)
      .def_readwrite("label_names", &Dataset::label_names)
      .def("__len__", &Dataset::size)
      .def("__getitem__",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.size()) throw py::index_error();
             return d[i];
           })
      .def("ids",
           [](const Dataset& d) {
             std::vector<std::string> out;
             for (const auto& inst : d.instances) out.push_back(inst.id);
             return out;
           })
      .def("subset", &Dataset::subset, py::arg("ids"))
      .def("index_of", &Dataset::index_of);

  py::class_<SyntheticNli>(m, "SyntheticNli")
      .def_readonly("train", &SyntheticNli::train)
      .def_readonly("test", &SyntheticNli::test)
      .def_readonly("counterexamples", &SyntheticNli::counterexamples)
      .def_property_readonly("vocab_size", [](const SyntheticNli& s) { return s.vocab.size(); });

  m.def("gen_synthetic_nli",
        [](const std::string& cfg, std::uint64_t seed) {
          return gen_synthetic_nli(GenConfig::from_json(parse(cfg)), seed);
        },
        py::arg("config_json"), py::arg("seed"));
  m.def("lexical_overlap", &lexical_overlap, py::arg("instance"));
  m.def("model_input", &model_input, py::arg("instance"), py::arg("max_len"));
  m.def("load_data_dir",
        [](const std::filesystem::path& dir) {
          auto d = load_data_dir(dir);
          return py::make_tuple(d.train, d.test, d.counterexamples);
        },
        py::arg("path"));

  py::class_<Parameters>(m, "Model")
      .def_property_readonly("config_json", [](const Parameters& p) { return p.config.to_json().dump(); })
      .def_property_readonly("parameter_count", &Parameters::parameter_count)
      .def(
          "forward",
          [](const Parameters& p, const TokenSeq& tokens, std::optional<std::vector<NeuronId>> deny,
             std::optional<std::vector<NeuronId>> allow) {
            if (deny && allow) throw InvalidArgument("pass deny or allow, not both");
            std::optional<InterventionSpec> spec;
            if (deny) spec = InterventionSpec::deny(*deny);
            if (allow) spec = InterventionSpec::allow(*allow);
            return trace_dict(forward(p, tokens, spec));
          },
          py::arg("tokens"), py::arg("deny") = py::none(), py::arg("allow") = py::none())
      .def("predict", [](const Parameters& p, const Dataset& d, int jobs) { return predict_all(p, d, jobs); },
           py::arg("dataset"), py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>())
      .def("accuracy", [](const Parameters& p, const Dataset& d, int jobs) { return accuracy(p, d, jobs); },
           py::arg("dataset"), py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>())
      .def("__eq__", [](const Parameters& a, const Parameters& b) { return a == b; });

  m.def("init_model",
        [](const std::string& cfg) { return init_model(ModelConfig::from_json(parse(cfg))); },
        py::arg("config_json"));
  m.def(
      "train",
      [](const Parameters& init, const Dataset& data, const std::string& hp) {
        const auto hyper = TrainHyper::from_json(parse(hp));
        TrainResult res;
        {
          py::gil_scoped_release nogil;
          res = train(init, data, hyper);
        }
        std::vector<std::pair<double, double>> hist;
        for (const auto& e : res.history) hist.emplace_back(e.loss, e.accuracy);
        return py::make_tuple(std::move(res.params), hist);
      },
      py::arg("model"), py::arg("dataset"), py::arg("hyper_json") = "");
  m.def("save_checkpoint",
        [](const Parameters& p, const std::filesystem::path& path) { save_checkpoint(p, path); },
        py::arg("model"), py::arg("path"));
  m.def("load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).params; },
        py::arg("path"));

  m.def("head_gradient",
        [](const Parameters& p, const TokenSeq& t, int label) { return head_gradient(p, t, label).values; },
        py::arg("model"), py::arg("tokens"), py::arg("label"));
  m.def("head_hessian",
        [](const Parameters& p, const Dataset& d, double damping) { return head_hessian(p, d, damping).values; },
        py::arg("model"), py::arg("dataset"), py::arg("damping") = kDefaultDamping,
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "prob_grad_wrt_neurons",
      [](const Parameters& p, const TokenSeq& t, std::size_t layer, int target, double scale) {
        return prob_grad_wrt_neurons(p, t, layer, target, scale);
      },
      py::arg("model"), py::arg("tokens"), py::arg("layer"), py::arg("target"), py::arg("scale") = 1.0);

  m.def(
      "attribute_neurons",
      [](const Parameters& p, const TokenSeq& t, int gold, std::size_t steps, const std::string& target) {
        auto na = attribute_neurons(p, t, gold, steps, parse_target(target));
        return py::make_tuple(na.scores, na.target);
      },
      py::arg("model"), py::arg("tokens"), py::arg("gold_label"), py::arg("steps") = kDefaultIgSteps,
      py::arg("target") = "predicted");

  py::class_<RankedNeurons>(m, "RankedNeurons")
      .def_readonly("neurons", &RankedNeurons::neurons)
      .def_readonly("scores", &RankedNeurons::scores)
      .def_readonly("normalized", &RankedNeurons::normalized)
      .def("__len__", &RankedNeurons::size);
  m.def("top_r", &top_r, py::arg("scores"), py::arg("r"));
  m.def("make_ranked", &make_ranked, py::arg("neurons"), py::arg("scores"));
  m.def("dcns", &dcns, py::arg("test_neurons"), py::arg("train_neurons"), py::arg("use_normalized") = true);
  m.def("dcns_upper_bound", &dcns_upper_bound, py::arg("r"));

  py::class_<InstanceScores>(m, "InstanceScores")
      .def_property_readonly("method", [](const InstanceScores& s) { return to_string(s.method); })
      .def_readonly("test_id", &InstanceScores::test_id)
      .def_readonly("scores", &InstanceScores::scores)
      .def_readonly("ranking", &InstanceScores::ranking);

  py::class_<AttributionContext>(m, "AttributionContext")
      .def(py::init([](const Parameters& p, const Dataset& train, const std::string& opts) {
             return std::make_unique<AttributionContext>(p, train, AttributionOptions::from_json(parse(opts)));
           }),
           py::arg("model"), py::arg("train"), py::arg("options_json") = "")
      .def_property_readonly("options_json",
                             [](const AttributionContext& c) { return c.options().to_json().dump(); });

  auto release = py::call_guard<py::gil_scoped_release>();
  m.def("gs_scores", py::overload_cast<const AttributionContext&, const Instance&>(&gs_scores),
        py::arg("context"), py::arg("instance"), release);
  m.def("if_scores", py::overload_cast<const AttributionContext&, const Instance&>(&if_scores),
        py::arg("context"), py::arg("instance"), release);
  m.def("na_instances", py::overload_cast<const AttributionContext&, const Instance&>(&na_instances),
        py::arg("context"), py::arg("instance"), release);
  m.def(
      "instance_scores",
      [](const AttributionContext& c, const Instance& i, const std::string& method) {
        return instance_scores(c, i, parse_ia_method(method));
      },
      py::arg("context"), py::arg("instance"), py::arg("method"), release);
  m.def(
      "ia_neurons",
      [](const AttributionContext& c, const Instance& i, const std::string& method, std::size_t r) {
        IaNeurons out;
        {
          py::gil_scoped_release nogil;
          out = ia_neurons(c, i, parse_ia_method(method), r);
        }
        return ia_dict(out);
      },
      py::arg("context"), py::arg("instance"), py::arg("method"), py::arg("r"));
  m.def(
      "select_fraction",
      [](const std::vector<std::string>& ranking, double f, const std::string& dir) {
        return select_fraction(ranking, f, parse_direction(dir));
      },
      py::arg("ranking"), py::arg("fraction"), py::arg("direction"));

  m.def(
      "run_test",
      [](const AttributionContext& c, const Dataset& test, const std::string& selector,
         const std::string& kind, std::size_t r, std::uint64_t seed) {
        TestKind k;
        if (kind == "sufficiency") k = TestKind::kSufficiency;
        else if (kind == "comprehensiveness") k = TestKind::kComprehensiveness;
        else throw InvalidArgument("kind must be 'sufficiency' or 'comprehensiveness'");
        std::string out;
        {
          py::gil_scoped_release nogil;
          out = run_test(c, test, parse_selector(selector), k, r, seed).to_json().dump();
        }
        return out;
      },
      py::arg("context"), py::arg("test_set"), py::arg("selector"), py::arg("kind"), py::arg("r"),
      py::arg("seed") = 0);
  m.def(
      "run_protocol",
      [](const AttributionContext& c, const Dataset& test, const std::vector<std::string>& selectors,
         const std::vector<std::uint64_t>& seeds, std::size_t suff_r, std::size_t comp_r) {
        std::vector<Selector> sels;
        for (const auto& s : selectors) sels.push_back(parse_selector(s));
        std::string out;
        {
          py::gil_scoped_release nogil;
          out = protocol_to_json(run_protocol(c, test, sels, seeds, {suff_r, comp_r})).dump();
        }
        return out;
      },
      py::arg("context"), py::arg("test_set"), py::arg("selectors"), py::arg("seeds"),
      py::arg("sufficiency_r") = 1, py::arg("comprehensiveness_r") = 100);

  m.def(
      "global_ranking",
      [](const std::vector<InstanceScores>& per, const std::string& agg) {
        return global_ranking(per, parse_aggregation(agg));
      },
      py::arg("per_test"), py::arg("aggregation") = "sum");
  m.def("random_ranking", &random_ranking, py::arg("train_ids"), py::arg("seed"));
  m.def(
      "retrain_eval",
      [](const Parameters& original, const std::vector<std::string>& subset, const Dataset& full_train,
         const Dataset& test, const std::string& hp, std::uint64_t seed) {
        const auto hyper = TrainHyper::from_json(parse(hp));
        RetrainResult r;
        {
          py::gil_scoped_release nogil;
          r = retrain_eval(original.config, subset, full_train, test, hyper, seed,
                           predict_all(original, test));
        }
        return std::make_pair(r.accuracy, r.preserved_pct);
      },
      py::arg("original"), py::arg("subset"), py::arg("full_train"), py::arg("test_set"),
      py::arg("hyper_json") = "", py::arg("seed") = 0);

  m.def("unique_instance_count", &unique_instance_count, py::arg("per_test_top"));
  m.def("instance_overlap", &instance_overlap, py::arg("a"), py::arg("b"));
  m.def("regression_coefficient", &regression_coefficient, py::arg("x"), py::arg("y"));
  m.def(
      "diversity_metrics",
      [](const Dataset& subset, const Parameters& p, int jobs) {
        return diversity_metrics(subset, p, jobs).to_json().dump();
      },
      py::arg("subset"), py::arg("model"), py::arg("jobs") = 1, release);
  m.def(
      "artifact_detection",
      [](const AttributionContext& c, const Dataset& heuristic, const std::vector<std::string>& methods,
         const std::vector<std::size_t>& ks, std::uint64_t seed) {
        std::vector<IaMethod> ms;
        for (const auto& s : methods) ms.push_back(parse_ia_method(s));
        std::string out;
        {
          py::gil_scoped_release nogil;
          out = artifact_detection(c, heuristic, ms, ks, seed).to_json().dump();
        }
        return out;
      },
      py::arg("context"), py::arg("heuristic_set"), py::arg("methods"), py::arg("ks"),
      py::arg("seed") = 0);
}
