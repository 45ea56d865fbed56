#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "commands.hpp"
#include "ega/adapter.hpp"
#include "ega/bound.hpp"
#include "ega/embeddings.hpp"
#include "ega/error.hpp"
#include "ega/ivf.hpp"
#include "ega/metrics.hpp"
#include "ega/train.hpp"

namespace py = pybind11;
using namespace ega;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

EmbeddingSet make_set(const FloatArray& vectors, const LabelArray& labels) {
  if (vectors.ndim() != 2) throw DimensionError("vectors must be a 2-D array");
  if (labels.ndim() != 1 || labels.shape(0) != vectors.shape(0)) {
    throw DimensionError("labels must be 1-D with one entry per row");
  }
  EmbeddingSet s;
  s.dim = static_cast<std::size_t>(vectors.shape(1));
  s.vectors.assign(vectors.data(), vectors.data() + vectors.size());
  s.labels.assign(labels.data(), labels.data() + labels.size());
  return s;
}

py::array_t<float> vectors_of(const EmbeddingSet& s) {
  py::array_t<float> out({static_cast<py::ssize_t>(s.size()), static_cast<py::ssize_t>(s.dim)});
  std::memcpy(out.mutable_data(), s.vectors.data(), s.vectors.size() * sizeof(float));
  return out;
}

py::array_t<float> forward_rows(const Adapter<float>& a, const FloatArray& z) {
  if (z.ndim() == 1) {
    const auto y = a.forward(std::span<const float>(z.data(), z.size()));
    py::array_t<float> out(static_cast<py::ssize_t>(y.size()));
    std::memcpy(out.mutable_data(), y.data(), y.size() * sizeof(float));
    return out;
  }
  if (z.ndim() != 2 || static_cast<std::size_t>(z.shape(1)) != a.dim()) {
    throw DimensionError("expected shape (n, " + std::to_string(a.dim()) + ")");
  }
  const std::size_t n = static_cast<std::size_t>(z.shape(0)), d = a.dim();
  py::array_t<float> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(d)});
  float* dst = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    a.forward(std::span<const float>(z.data() + i * d, d), std::span<float>(dst + i * d, d));
  }
  return out;
}

py::dict telemetry_dict(const TrainTelemetry& t) {
  py::dict d;
  std::vector<double> loss, rho, g, update, lr, grad;
  for (const auto& s : t.steps) {
    loss.push_back(s.loss);
    rho.push_back(s.rho);
    g.push_back(s.max_triplet_grad_norm);
    update.push_back(s.update_norm);
    lr.push_back(s.lr);
    grad.push_back(s.grad_norm);
  }
  d["loss"] = py::array(py::cast(loss));
  d["rho"] = py::array(py::cast(rho));
  d["max_triplet_grad_norm"] = py::array(py::cast(g));
  d["update_norm"] = py::array(py::cast(update));
  d["lr"] = py::array(py::cast(lr));
  d["grad_norm"] = py::array(py::cast(grad));
  std::vector<double> epoch_rho, epoch_loss;
  for (const auto& e : t.epochs) {
    epoch_rho.push_back(e.mean_rho);
    epoch_loss.push_back(e.mean_loss);
  }
  d["epoch_mean_rho"] = py::array(py::cast(epoch_rho));
  d["epoch_mean_loss"] = py::array(py::cast(epoch_loss));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the ega_core library";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", data_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def(py::init(&make_set), py::arg("vectors"), py::arg("labels"))
      .def_readonly("dim", &EmbeddingSet::dim)
      .def_readwrite("provenance", &EmbeddingSet::provenance)
      .def_property_readonly("vectors", &vectors_of)
      .def_property_readonly("labels",
                             [](const EmbeddingSet& s) { return py::array(py::cast(s.labels)); })
      .def("__len__", &EmbeddingSet::size)
      .def("class_count", &EmbeddingSet::class_count)
      .def("subset", [](const EmbeddingSet& s, const std::vector<std::size_t>& idx) {
        return s.subset(idx);
      });

  m.def("gen_synthetic", &gen_synthetic, py::arg("dim"), py::arg("classes"),
        py::arg("per_class"), py::arg("sigma"), py::arg("seed") = 42);
  m.def("load_embeddings", [](const std::filesystem::path& p) { return load_embeddings(p); });
  m.def("save_embeddings", &save_embeddings, py::arg("set"), py::arg("path"));
  m.def("import_csv", [](const std::filesystem::path& p) { return import_csv(p); });

  py::class_<Split>(m, "Split")
      .def_readonly("train", &Split::train)
      .def_readonly("database", &Split::database)
      .def_readonly("queries", &Split::queries);
  m.def(
      "make_split",
      [](const EmbeddingSet& s, const std::string& mode, double seen_fraction, double db_fraction,
         std::uint64_t seed) {
        return make_split(s, {parse_split_mode(mode), seen_fraction, db_fraction, seed});
      },
      py::arg("set"), py::arg("mode") = "ood", py::arg("seen_fraction") = 0.8,
      py::arg("db_fraction") = 0.75, py::arg("seed") = 42);

  py::class_<AdapterConfig>(m, "AdapterConfig")
      .def(py::init<>())
      .def_property(
          "variant", [](const AdapterConfig& c) { return std::string(to_string(c.variant)); },
          [](AdapterConfig& c, const std::string& v) { c.variant = parse_variant(v); })
      .def_readwrite("use_residual", &AdapterConfig::use_residual)
      .def_readwrite("use_zero_init", &AdapterConfig::use_zero_init)
      .def_readwrite("use_l2_norm", &AdapterConfig::use_l2_norm)
      .def_readwrite("dim", &AdapterConfig::dim)
      .def_readwrite("hidden", &AdapterConfig::hidden)
      .def_readwrite("rank", &AdapterConfig::rank)
      .def_readwrite("seed", &AdapterConfig::seed);

  py::class_<Adapter<float>>(m, "Adapter")
      .def(py::init<const AdapterConfig&>())
      .def_property_readonly("config", &Adapter<float>::config)
      .def_property_readonly("dim", &Adapter<float>::dim)
      .def_property_readonly("param_count", &Adapter<float>::param_count)
      .def_property_readonly("slice_names",
                             [](const Adapter<float>& a) {
                               std::vector<std::string> names;
                               for (const auto& s : a.layout()) names.push_back(s.name);
                               return names;
                             })
      .def_property(
          "params",
          [](const Adapter<float>& a) {
            const auto p = a.params();
            return py::array_t<float>(static_cast<py::ssize_t>(p.size()), p.data());
          },
          [](Adapter<float>& a, const FloatArray& v) {
            if (static_cast<std::size_t>(v.size()) != a.param_count()) {
              throw DimensionError("expected " + std::to_string(a.param_count()) + " parameters");
            }
            std::memcpy(a.params().data(), v.data(), a.param_count() * sizeof(float));
          })
      .def("forward", &forward_rows, py::arg("z"))
      .def("__call__", &forward_rows, py::arg("z"));

  m.def("save_params", &save_params, py::arg("adapter"), py::arg("path"));
  m.def("load_params", py::overload_cast<const std::filesystem::path&>(&load_params));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("lr_min", &TrainConfig::lr_min)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("margin", &TrainConfig::margin)
      .def_property(
          "loss", [](const TrainConfig& c) { return std::string(to_string(c.loss)); },
          [](TrainConfig& c, const std::string& v) { c.loss = parse_loss_kind(v); })
      .def_readwrite("temperature", &TrainConfig::temperature)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("track_triplet_grad_norms", &TrainConfig::track_triplet_grad_norms);

  m.def(
      "train",
      [](const EmbeddingSet& data, const TrainConfig& cfg, const AdapterConfig& adapter_cfg) {
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(data, cfg, adapter_cfg);
        }();
        return py::make_tuple(std::move(r.adapter), telemetry_dict(r.telemetry));
      },
      py::arg("data"), py::arg("config"), py::arg("adapter_config"),
      "Returns (adapter, telemetry dict of per-step and per-epoch arrays).");
  m.def("apply_adapter", &apply_adapter, py::arg("adapter"), py::arg("set"));

  py::class_<SearchResult>(m, "SearchResult")
      .def_readonly("indices", &SearchResult::indices)
      .def_readonly("distances", &SearchResult::distances);
  py::class_<IvfIndex>(m, "IvfIndex")
      .def_static("build", &IvfIndex::build, py::arg("base"), py::arg("nlist"),
                  py::arg("seed") = 42, py::arg("kmeans_iterations") = 25)
      .def_property_readonly("nlist", &IvfIndex::nlist)
      .def("__len__", &IvfIndex::size)
      .def_property_readonly("posting_lists", &IvfIndex::posting_lists)
      .def("search", &IvfIndex::search, py::arg("queries"), py::arg("k"), py::arg("nprobe"));
  m.def("brute_force_knn", &brute_force_knn, py::arg("base"), py::arg("queries"), py::arg("k"));

  m.def(
      "label_precision",
      [](const SearchResult& r, const std::vector<std::uint32_t>& query_labels,
         const std::vector<std::uint32_t>& base_labels, std::size_t k) {
        return label_precision(r, query_labels, base_labels, k);
      },
      py::arg("results"), py::arg("query_labels"), py::arg("base_labels"), py::arg("k"));
  m.def("anns_recall", &anns_recall, py::arg("approx"), py::arg("exact"), py::arg("k"));

  py::class_<EvalOptions>(m, "EvalOptions")
      .def(py::init<>())
      .def_readwrite("ks", &EvalOptions::ks)
      .def_readwrite("nprobes", &EvalOptions::nprobes)
      .def_readwrite("nlist", &EvalOptions::nlist)
      .def_readwrite("seed", &EvalOptions::seed);
  py::class_<MetricsReport>(m, "MetricsReport")
      .def("lp", [](const MetricsReport& r, std::size_t k, std::size_t np) { return r.at(k, np).lp; })
      .def("ar", [](const MetricsReport& r, std::size_t k, std::size_t np) { return r.at(k, np).ar; })
      .def("to_json", &MetricsReport::to_json)
      .def("to_csv", &MetricsReport::to_csv);
  m.def("evaluate_retrieval", &evaluate_retrieval, py::arg("database"), py::arg("queries"),
        py::arg("options") = EvalOptions{});

  m.def(
      "linear_illustration",
      [](std::uint64_t seed) {
        LinearDemoOptions o;
        o.seed = seed;
        const LinearDemoReport r = linear_illustration(o);
        py::dict d;
        d["bound_holds"] = r.bound_holds();
        d["lipschitz"] = r.lipschitz;
        d["grad_bound"] = r.grad_bound;
        d["eta"] = r.eta;
        d["in_span"] = r.perturbation.in_span;
        d["orthogonal"] = r.perturbation.orthogonal;
        d["csv"] = r.to_csv();
        return d;
      },
      py::arg("seed") = 42);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        const int code = cli::run(args, out);
        return py::make_tuple(code, out.str());
      },
      py::arg("args"), "Runs one ega command; returns (exit code, stdout text).");
}
