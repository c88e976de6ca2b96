#include <algorithm>
#include <cstring>
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "attndiff/cli.hpp"
#include "attndiff/container.hpp"
#include "attndiff/diffcore.hpp"
#include "attndiff/parallel.hpp"
#include "attndiff/routing_stats.hpp"
#include "attndiff/similarity.hpp"
#include "attndiff/spectral.hpp"

namespace py = pybind11;
using namespace attndiff;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Which parse_which(const std::string& which) {
  if (which == "origin") return Which::origin;
  if (which == "corrupted") return Which::corrupted;
  throw InvalidArgument("unknown tensor", which + " (expected origin or corrupted)");
}

py::dict bound_to_dict(const BoundCheck& b) {
  py::dict d;
  d["cka"] = b.cka;
  d["epsilon"] = b.epsilon;
  d["bound_2eps2"] = b.bound_2eps2;
  d["one_minus_cka"] = b.one_minus_cka;
  d["applicable"] = b.applicable;
  d["holds"] = b.holds;
  return d;
}

py::dict stats_to_dict(const RoutingStats& s) {
  py::dict d;
  for (auto name : kMetricNames) d[py::str(std::string(name))] = metric_value(s, name);
  d["degenerate"] = s.degenerate;
  return d;
}

py::dict fingerprint_to_dict(const FingerprintMatrix& fp) {
  py::dict d;
  d["values"] = fp.values;
  d["probe_ids"] = fp.probe_ids;
  d["domains"] = fp.domains;
  d["layers"] = fp.layers;
  d["heads"] = fp.heads;
  d["rank"] = fp.rank;
  d["model_id"] = fp.model_id;
  return d;
}

std::vector<std::pair<std::string, std::string>> diagnostics_list(const std::vector<Diagnostic>& ds) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& d : ds) out.emplace_back(d.code, d.detail);
  return out;
}

// Probes as (probe_id, domain, origin[L,H,N,N], corrupted[L,H,Ñ,Ñ]).
void write_attention_pack(const std::string& path, const py::list& probes,
                          const std::string& model_id, std::int64_t created_unix,
                          bool validate) {
  struct Entry {
    std::string id, domain;
    FloatArray origin, corrupted;
  };
  std::vector<Entry> entries;
  for (const auto& item : probes) {
    const auto t = item.cast<py::tuple>();
    if (t.size() != 4) throw InvalidArgument("bad probe entry", "expected (id, domain, origin, corrupted)");
    entries.push_back({t[0].cast<std::string>(), t[1].cast<std::string>(),
                       FloatArray::ensure(t[2]), FloatArray::ensure(t[3])});
  }
  if (entries.empty()) throw InvalidArgument("empty pack", "no probes given");
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.id < b.id; });

  PackManifest m;
  m.kind = PackKind::attention;
  m.model_id = model_id;
  m.created_unix = created_unix;
  auto check = [&](const FloatArray& a, const std::string& what) {
    if (!a || a.ndim() != 4 || a.shape(2) != a.shape(3)) {
      throw InvalidArgument("bad tensor shape", what + ": expected [L, H, N, N]");
    }
    if (m.layers == 0) {
      m.layers = static_cast<std::uint32_t>(a.shape(0));
      m.heads = static_cast<std::uint32_t>(a.shape(1));
    }
    if (a.shape(0) != m.layers || a.shape(1) != m.heads) {
      throw InvalidArgument("bad tensor shape", what + ": layer/head count differs from first probe");
    }
    return static_cast<std::uint64_t>(a.shape(2));
  };
  for (const auto& e : entries) {
    ProbeTensorRef ref;
    ref.probe_id = e.id;
    ref.domain = e.domain;
    ref.origin_tokens = check(e.origin, e.id + " origin");
    ref.corrupted_tokens = check(e.corrupted, e.id + " corrupted");
    m.probes.push_back(ref);
  }
  std::vector<float> payload(assign_contiguous_offsets(m));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::memcpy(payload.data() + m.probes[i].origin_offset, entries[i].origin.data(),
                static_cast<std::size_t>(entries[i].origin.size()) * sizeof(float));
    std::memcpy(payload.data() + m.probes[i].corrupted_offset, entries[i].corrupted.data(),
                static_cast<std::size_t>(entries[i].corrupted.size()) * sizeof(float));
  }
  if (validate) {
    auto diags = validate_pack(m, payload);
    if (!diags.empty()) {
      const std::string first = diags.front().to_string();
      throw ValidationError("invalid pack", first, std::move(diags));
    }
  }
  save_pack(path, m, payload);
}

}  // namespace

PYBIND11_MODULE(_attndiff, m) {
  m.doc() = "Differential-attention fingerprints: native core";

  auto base = py::register_exception<Error>(m, "AttndiffError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DegenerateError>(m, "DegenerateError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<ValueError>(m, "InvalidValueError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgumentError", base.ptr());

  m.def("mask_causal", [](Matrix a) { return mask_causal(std::move(a)).values; }, py::arg("a"));
  m.def("adaptive_pool", &adaptive_pool, py::arg("x"), py::arg("rows"), py::arg("cols"));
  m.def("diff_attention",
        [](Matrix origin, Matrix corrupted) {
          return diff_attention(mask_causal(std::move(origin)), mask_causal(std::move(corrupted)))
              .values;
        },
        py::arg("origin"), py::arg("corrupted"),
        "Masks both maps, pools to the shorter length, returns corrupted - origin.");
  m.def("singular_values", &singular_values, py::arg("x"));
  m.def("leading_singular_values", &leading_singular_values, py::arg("x"), py::arg("count"));

  m.def("centered_gram", &centered_gram, py::arg("features"));
  m.def("cka", &cka, py::arg("features"), py::arg("other"));
  m.def("epsilon_and_bound",
        [](const Matrix& v, const Matrix& s) { return bound_to_dict(epsilon_and_bound(v, s)); },
        py::arg("victim"), py::arg("suspect"));

  m.def("gini_coefficient", &gini_coefficient, py::arg("values"));
  m.def("routing_stats",
        [](Matrix origin, Matrix corrupted) {
          const auto aligned =
              align_pair(mask_causal(std::move(origin)), mask_causal(std::move(corrupted)));
          return stats_to_dict(
              compute_routing_stats(aligned.origin, aligned.corrupted, aligned.delta.values));
        },
        py::arg("origin"), py::arg("corrupted"));

  py::class_<Pack>(m, "Pack")
      .def_static("load", [](const std::string& path) { return load_pack(path); }, py::arg("path"))
      .def_property_readonly("manifest_json",
                             [](const Pack& p) { return manifest_to_json(p.manifest); })
      .def("attention",
           [](const Pack& p, std::size_t probe, const std::string& which, std::uint32_t layer,
              std::uint32_t head) {
             const auto& man = p.manifest;
             if (man.kind != PackKind::attention) {
               throw InvalidArgument("wrong pack kind", "not an attention pack");
             }
             if (probe >= man.probes.size() || layer >= man.layers || head >= man.heads) {
               throw InvalidArgument("index out of range", "probe, layer or head");
             }
             const auto view = attention_view(p, probe, parse_which(which), layer, head);
             FloatArray out({view.rows(), view.cols()});
             std::memcpy(out.mutable_data(), view.data(),
                         static_cast<std::size_t>(view.size()) * sizeof(float));
             return out;
           },
           py::arg("probe"), py::arg("which"), py::arg("layer"), py::arg("head"))
      .def("validate", [](const Pack& p) { return diagnostics_list(validate_pack(p)); });

  m.def("write_attention_pack", &write_attention_pack, py::arg("path"), py::arg("probes"),
        py::arg("model_id"), py::arg("created_unix") = 0, py::arg("validate") = true,
        "Write an .attnpack from (probe_id, domain, origin, corrupted) tuples; tensors are\n"
        "float32 [L, H, N, N]. Probes are stored sorted by id.");

  m.def("fingerprint",
        [](const std::string& attnpack, int rank, int threads) {
          const Pack pack = load_pack(attnpack);
          py::gil_scoped_release release;
          auto build = build_fingerprint_matrix(pack, rank, resolve_threads(threads));
          py::gil_scoped_acquire acquire;
          auto d = fingerprint_to_dict(build.matrix);
          d["warnings"] = diagnostics_list(build.warnings);
          return d;
        },
        py::arg("attnpack"), py::arg("rank") = kDefaultRank, py::arg("threads") = 0);
  m.def("load_fingerprint",
        [](const std::string& path) { return fingerprint_to_dict(load_fingerprint(path)); },
        py::arg("path"));
  m.def("compare_json",
        [](const std::string& victim, const std::string& suspect, double upper, double lower) {
          return report_to_json(compare_report(load_fingerprint(victim), load_fingerprint(suspect),
                                               Thresholds{upper, lower}));
        },
        py::arg("victim"), py::arg("suspect"), py::arg("upper") = Thresholds{}.upper,
        py::arg("lower") = Thresholds{}.lower);

  m.def("run_cli",
        [](std::vector<std::string> args) {
          args.insert(args.begin(), "attndiff");
          std::vector<const char*> argv;
          for (const auto& a : args) argv.push_back(a.c_str());
          std::ostringstream out, err;
          const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run one attndiff command; returns (exit_code, stdout, stderr).");
}
