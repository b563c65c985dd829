// Python surface over the core engine: graph codec and validation,
// mutation operators, the synthetic proxy task, single-model training and
// the evolution loop.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msnas/config.hpp"
#include "msnas/evolution.hpp"

namespace py = pybind11;
using namespace msnas;

namespace {

py::dict node_dict(const BlockNode& n) {
  py::dict d;
  d["id"] = n.id;
  d["level"] = n.level;
  d["kind"] = std::string(to_string(n.kind));
  d["channels"] = n.channels;
  d["temporal_resolution"] = n.temporal_resolution;
  d["spatial_stride"] = n.spatial_stride;
  return d;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["top1"] = r.top1;
  d["top5"] = r.top5;
  d["fitness"] = r.top1 + r.top5;
  return d;
}

RunConfig config_from_text(const std::string& text) {
  RunConfig cfg = default_run_config();
  apply_config_text(cfg, text, "<python>");
  return cfg;
}

}  // namespace

PYBIND11_MODULE(msnas, m) {
  m.doc() = "Evolutionary architecture search for multi-stream spatio-temporal networks";

  py::register_exception<Error>(m, "EngineError");

  py::class_<ArchitectureGraph>(m, "Graph")
      .def_static("decode", &decode_table, py::arg("table_text"))
      .def_static("reference", [] { return decode_table(reference_table_text()); })
      .def_static("baseline",
                  [](const std::string& name) {
                    return build_baseline(baseline_from_string(name));
                  })
      .def("encode", [](const ArchitectureGraph& g) { return encode_table(g); })
      .def("validate",
           [](const ArchitectureGraph& g) {
             const ValidationReport report = validate_graph(g);
             std::vector<std::string> violations;
             for (const auto& v : report.violations) violations.push_back(v.rule + ": " + v.detail);
             return py::make_tuple(report.ok, violations);
           })
      .def_property_readonly("depth", &longest_path_depth)
      .def_property_readonly("nodes",
                             [](const ArchitectureGraph& g) {
                               py::list out;
                               for (const auto& n : g.nodes) out.append(node_dict(n));
                               return out;
                             })
      .def_property_readonly("edges",
                             [](const ArchitectureGraph& g) {
                               py::list out;
                               for (const auto& e : g.edges)
                                 out.append(py::make_tuple(e.src, e.dst, e.logit));
                               return out;
                             })
      .def("summary", [](const ArchitectureGraph& g) { return summarize(g); })
      .def("dot", [](const ArchitectureGraph& g) { return export_dot(g); })
      .def("parameter_counts",
           [](const ArchitectureGraph& g, bool full_scale) {
             const LayerSchedule s =
                 full_scale ? LayerSchedule::reference_scale() : LayerSchedule::desk();
             const ParameterBreakdown p = parameter_count(g, s);
             py::dict d;
             d["stem_conv"] = p.stem_conv;
             d["stem_bn"] = p.stem_bn;
             d["block_conv"] = p.block_conv;
             d["block_bn"] = p.block_bn;
             d["adapter"] = p.adapter;
             d["edge_logits"] = p.edge_logits;
             d["head"] = p.head;
             d["total"] = p.total();
             return d;
           },
           py::arg("full_scale") = false)
      .def("split",
           [](const ArchitectureGraph& g, NodeId id, uint64_t seed) {
             Rng rng(seed);
             return split_node(g, id, rng);
           },
           py::arg("node_id"), py::arg("seed") = 0)
      .def("merge",
           [](const ArchitectureGraph& g, NodeId a, NodeId b, uint64_t seed) {
             Rng rng(seed);
             return merge_nodes(g, a, b, rng);
           },
           py::arg("a"), py::arg("b"), py::arg("seed") = 0)
      .def("change_resolution",
           [](const ArchitectureGraph& g, NodeId id, uint64_t seed) {
             Rng rng(seed);
             return change_temporal_resolution(g, id, rng);
           },
           py::arg("node_id"), py::arg("seed") = 0)
      .def("guided_edge_mutation",
           [](const ArchitectureGraph& g, uint64_t seed) {
             MutationConfig cfg;
             Rng rng(seed);
             GuidedMutationStats stats;
             const ArchitectureGraph child = guided_edge_mutation(g, cfg, rng, &stats);
             py::dict d;
             d["kept"] = stats.kept;
             d["dropped"] = stats.dropped;
             d["added"] = stats.added;
             d["repaired"] = stats.repaired;
             return py::make_tuple(child, d);
           },
           py::arg("seed") = 0)
      .def("random_edge_mutation",
           [](const ArchitectureGraph& g, double fraction, uint64_t seed) {
             Rng rng(seed);
             return random_edge_mutation(g, fraction, rng);
           },
           py::arg("fraction") = 1.0 / 3.0, py::arg("seed") = 0)
      .def("__eq__", [](const ArchitectureGraph& a, const ArchitectureGraph& b) { return a == b; })
      .def("__repr__", [](const ArchitectureGraph& g) { return "<Graph " + summarize(g) + ">"; });

  m.def("baseline_names", [] { return baseline_names(); });
  m.def(
      "random_architecture",
      [](uint64_t seed) {
        MutationConfig cfg;
        Rng rng(seed);
        return random_architecture(cfg, GraphDefaults::desk(), rng);
      },
      py::arg("seed") = 0);

  m.def("inflate_filter",
        [](const std::vector<double>& taps, int dilation) {
          const std::vector<real> k(taps.begin(), taps.end());
          const auto out = inflate_filter(k, dilation);
          return std::vector<double>(out.begin(), out.end());
        },
        py::arg("taps"), py::arg("dilation"));

  m.def("temporal_conv1d",
        [](const std::vector<double>& series, const std::vector<double>& taps, int dilation) {
          const int t = static_cast<int>(series.size());
          Tensor x = Tensor::from({1, t, 1, 1, 1}, std::vector<real>(series.begin(), series.end()));
          Tensor w = Tensor::from({static_cast<int>(taps.size()), 1, 1},
                                  std::vector<real>(taps.begin(), taps.end()));
          const Tensor out = temporal_conv1d_dilated(x, w, dilation);
          return std::vector<double>(out.values().begin(), out.values().end());
        },
        py::arg("series"), py::arg("taps"), py::arg("dilation"),
        "Temporally dilated 1D convolution of a scalar series, zero same-padding.");

  py::class_<RunConfig>(m, "Config")
      .def_static("defaults", &default_run_config)
      .def_static("from_toml", &config_from_text, py::arg("toml_text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("override",
           [](const RunConfig& cfg, const std::string& toml_text) {
             RunConfig out = cfg;
             apply_config_text(out, toml_text, "<override>");
             return out;
           })
      .def("toml", &print_config)
      .def_property_readonly("seed", [](const RunConfig& cfg) { return cfg.seed; });

  m.def("dataset_summary", [](const RunConfig& cfg) {
    const Dataset ds = generate_dataset(cfg.search.proxy);
    py::dict d;
    d["clips"] = ds.clips.size();
    d["train"] = ds.train_indices.size();
    d["val"] = ds.val_indices.size();
    d["classes"] = ds.cfg.num_classes;
    d["appearance_groups"] = ds.appearance_groups();
    return d;
  });

  m.def("train_architecture",
        [](const ArchitectureGraph& g, const RunConfig& cfg) {
          const SearchConfig& s = cfg.search;
          const Dataset ds = generate_dataset(s.proxy);
          LayerSchedule schedule = s.schedule;
          schedule.num_classes = s.proxy.num_classes;
          CompileOptions copts = s.compile_opts;
          copts.init_seed = cfg.seed;
          ExecutableNetwork net = compile(g, schedule, copts);
          TrainerConfig tcfg = s.trainer;
          tcfg.seed = cfg.seed;
          const TrainResult tr = train(net, ds, tcfg);
          const EvalResult ev = evaluate(net, ds);
          py::dict d = eval_dict(ev);
          d["steps"] = tr.steps;
          d["initial_loss"] = tr.initial_loss;
          d["final_loss"] = tr.final_loss;
          d["trained"] = net.graph_with_trained_logits();
          d["parameters"] = net.num_trainable();
          return d;
        },
        py::arg("graph"), py::arg("config"));

  m.def("run_search",
        [](const RunConfig& cfg) {
          const SearchState state = run_search(cfg.search);
          py::dict d;
          d["best"] = state.best.graph;
          d["best_fitness"] = state.best.fitness;
          py::list history;
          for (const auto& rec : state.history) {
            py::dict h;
            h["round"] = rec.round;
            h["child_fitness"] = rec.child_fitness;
            h["best"] = rec.best;
            h["top3_mean"] = rec.top3_mean;
            history.append(h);
          }
          d["history"] = history;
          d["history_csv"] = history_csv(state);
          return d;
        },
        py::arg("config"));
}
