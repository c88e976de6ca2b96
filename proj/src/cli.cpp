#include "attndiff/cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "attndiff/container.hpp"
#include "attndiff/format.hpp"
#include "attndiff/parallel.hpp"
#include "attndiff/probeset.hpp"
#include "attndiff/routing_stats.hpp"
#include "attndiff/similarity.hpp"
#include "attndiff/spectral.hpp"
#include "attndiff/synth.hpp"
#include "json.hpp"

namespace attndiff::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::string read_text(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                   text.size()));
}

// Writes to `path`, or to `out` when the path is empty or "-".
void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

Pack load_attention_pack(const std::string& path) {
  Pack pack = load_pack(path);
  if (pack.manifest.kind != PackKind::attention) {
    throw InvalidArgument("wrong pack kind", path + " is a fingerprint pack");
  }
  return pack;
}

// File being processed when an error escaped; prefixed to the message.
thread_local std::string error_context;

template <typename Fn>
auto with_file(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (...) {
    if (error_context.empty()) error_context = path;
    throw;
  }
}

void report_error(std::ostream& err, const std::exception& e) {
  err << "error: ";
  if (!error_context.empty()) err << error_context << ": ";
  err << e.what() << '\n';
}

struct Options {
  // probes
  std::string probes_path;
  double fraction = 0.2;
  std::uint64_t seed = 0;
  std::string active_out;
  std::string held_out_out;
  // packs
  std::string attnpack;
  std::string fingerprint;
  std::string out;
  int rank = kDefaultRank;
  int threads = 0;
  // compare
  std::string victim;
  std::string suspect;
  bool json = false;
  double upper = Thresholds{}.upper;
  double lower = Thresholds{}.lower;
  // stats / profile / heatmap
  std::string format = "text";
  std::string instances_out;
  std::string metric = "rho";
  std::string probe_id;
  // synth
  int layers = 8;
  int heads = 8;
  int basis_len = kDefaultBasisLen;
  std::string parent;
  double perturbation = 0.05;
  std::string family_path;
  std::size_t count = 60;
  int tokens = 40;
  int jitter = 3;
  double noise = 0.0;
  bool identical = false;
  std::string model_id = "synthetic";
  // validate
  std::string pack_path;
};

void print_diagnostics(std::ostream& err, const std::vector<Diagnostic>& diags) {
  for (const auto& d : diags) err << "  " << d.to_string() << '\n';
}

int cmd_probes_validate(const Options& o, std::ostream& out) {
  const ProbeSet set = with_file(o.probes_path, [&] { return load_probeset_file(o.probes_path); });
  std::map<std::string, int> per_domain;
  for (const auto& p : set.probes) ++per_domain[p.domain];
  out << o.probes_path << ": ok, " << set.probes.size() << " probes (target "
      << set.target_word_len << " +/- " << kLengthWindow << " words)\n";
  for (const auto& [domain, n] : per_domain) out << "  " << domain << ": " << n << '\n';
  return kExitOk;
}

int cmd_probes_split(const Options& o, std::ostream& out) {
  const ProbeSet set = with_file(o.probes_path, [&] { return load_probeset_file(o.probes_path); });
  const auto [active, held_out] = split_pool(set, o.fraction, o.seed);
  write_text(o.active_out, probeset_to_json(active));
  write_text(o.held_out_out, probeset_to_json(held_out));
  out << "fraction=" << format_double(o.fraction) << " seed=" << o.seed
      << " active=" << active.probes.size() << " held_out=" << held_out.probes.size()
      << '\n';
  return kExitOk;
}

int cmd_fingerprint(const Options& o, std::ostream& out, std::ostream& err) {
  const Pack pack = with_file(o.attnpack, [&] { return load_attention_pack(o.attnpack); });
  const int threads = resolve_threads(o.threads);
  const auto build = with_file(o.attnpack, [&] {
    return build_fingerprint_matrix(pack, o.rank, threads);
  });
  for (const auto& w : build.warnings) err << "warning: " << w.to_string() << '\n';
  const Pack fp = fingerprint_to_pack(build.matrix);
  save_pack(o.out, fp.manifest, fp.payload);
  out << "M=" << build.matrix.rows() << " D=" << build.matrix.width()
      << " K=" << o.rank << " L=" << build.matrix.layers << " H=" << build.matrix.heads
      << '\n';
  return kExitOk;
}

FingerprintMatrix load_fp(const std::string& path) {
  return with_file(path, [&] { return load_fingerprint(path); });
}

int cmd_compare(const Options& o, std::ostream& out) {
  const auto victim = load_fp(o.victim);
  const auto suspect = load_fp(o.suspect);
  const auto report = compare_report(victim, suspect, Thresholds{o.upper, o.lower});
  out << (o.json ? report_to_json(report) + "\n" : report_to_text(report));
  return kExitOk;
}

std::string cell_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("nan");
}

int cmd_layerwise(const Options& o, std::ostream& out) {
  const auto lw = layerwise_cka(load_fp(o.victim), load_fp(o.suspect));
  if (o.format == "json") {
    ojson j;
    j["victim_layers"] = lw.victim_layers;
    j["suspect_layers"] = lw.suspect_layers;
    auto cells = ojson::array();
    for (int a = 0; a < lw.victim_layers; ++a) {
      auto row = ojson::array();
      for (int b = 0; b < lw.suspect_layers; ++b) {
        const auto v = lw.at(a, b);
        row.push_back(v ? ojson(*v) : ojson(nullptr));
      }
      cells.push_back(std::move(row));
    }
    j["cells"] = std::move(cells);
    auto diag = ojson::array();
    for (const auto& v : lw.diagonal()) diag.push_back(v ? ojson(*v) : ojson(nullptr));
    j["diagonal"] = std::move(diag);
    out << j.dump(2) << '\n';
  } else if (o.format == "csv") {
    out << "victim_layer,suspect_layer,cka\n";
    for (int a = 0; a < lw.victim_layers; ++a) {
      for (int b = 0; b < lw.suspect_layers; ++b) {
        out << a << ',' << b << ',' << cell_text(lw.at(a, b)) << '\n';
      }
    }
  } else {
    for (int a = 0; a < lw.victim_layers; ++a) {
      for (int b = 0; b < lw.suspect_layers; ++b) {
        const auto v = lw.at(a, b);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%8.4f", v ? *v : std::nan(""));
        out << (b ? " " : "") << buf;
      }
      out << '\n';
    }
  }
  return kExitOk;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const Pack pack = with_file(o.attnpack, [&] { return load_attention_pack(o.attnpack); });
  if (pack.manifest.probes.empty()) throw InvalidArgument("empty pack", o.attnpack);
  const auto instances = with_file(o.attnpack, [&] {
    return collect_instance_stats(pack, resolve_threads(o.threads));
  });
  if (!o.instances_out.empty()) {
    std::ostringstream csv;
    write_instance_csv(csv, instances);
    write_text(o.instances_out, csv.str());
  }
  const auto summary = aggregate_stats(instances);
  if (o.format == "csv") {
    write_summary_csv(out, summary);
  } else if (o.format == "json") {
    ojson j;
    j["instances"] = instances.size();
    j["locality_band"] = kLocalityBand;
    auto metrics = ojson::array();
    for (const auto& s : summary) {
      metrics.push_back({{"metric", s.metric}, {"count", s.count}, {"mean", s.mean}, {"sd", s.sd}});
    }
    j["metrics"] = std::move(metrics);
    out << j.dump(2) << '\n';
  } else {
    out << "instances " << instances.size() << " (locality band " << kLocalityBand << ")\n";
    for (const auto& s : summary) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%-10s n=%-6zu mean %.6g  sd %.6g\n", s.metric.c_str(),
                    s.count, s.mean, s.sd);
      out << buf;
    }
  }
  return kExitOk;
}

int cmd_profile(const Options& o, std::ostream& out) {
  const Pack pack = with_file(o.attnpack, [&] { return load_attention_pack(o.attnpack); });
  const auto rows = with_file(o.attnpack, [&] {
    return layer_profile(pack, o.metric, resolve_threads(o.threads));
  });
  if (o.format == "json") {
    ojson j;
    j["metric"] = o.metric;
    auto arr = ojson::array();
    for (const auto& r : rows) {
      arr.push_back({{"layer", r.layer}, {"relative_depth", r.relative_depth},
                     {"count", r.count}, {"mean", r.mean}, {"sd", r.sd}});
    }
    j["layers"] = std::move(arr);
    out << j.dump(2) << '\n';
  } else {
    write_profile_csv(out, o.metric, rows);
  }
  return kExitOk;
}

int cmd_heatmap(const Options& o, std::ostream& out) {
  if (o.attnpack.empty() == o.fingerprint.empty()) {
    throw InvalidArgument("usage", "give exactly one of --attnpack or --fingerprint");
  }
  Matrix e;
  if (!o.attnpack.empty()) {
    const Pack pack = with_file(o.attnpack, [&] { return load_attention_pack(o.attnpack); });
    e = with_file(o.attnpack, [&] { return heatmap_energy(pack, o.probe_id, o.rank); });
  } else {
    const auto fp = load_fp(o.fingerprint);
    e = with_file(o.fingerprint, [&] { return heatmap_energy(fp, o.probe_id); });
  }
  if (o.format == "json") {
    ojson j;
    j["probe_id"] = o.probe_id;
    auto rows = ojson::array();
    for (Eigen::Index l = 0; l < e.rows(); ++l) {
      auto row = ojson::array();
      for (Eigen::Index h = 0; h < e.cols(); ++h) row.push_back(e(l, h));
      rows.push_back(std::move(row));
    }
    j["energy"] = std::move(rows);
    out << j.dump(2) << '\n';
  } else {
    out << "layer";
    for (Eigen::Index h = 0; h < e.cols(); ++h) out << ",h" << h;
    out << '\n';
    for (Eigen::Index l = 0; l < e.rows(); ++l) {
      out << l;
      for (Eigen::Index h = 0; h < e.cols(); ++h) out << ',' << format_double(e(l, h));
      out << '\n';
    }
  }
  return kExitOk;
}

int cmd_synth_family(const Options& o, std::ostream& out) {
  SynthFamily f;
  if (!o.parent.empty()) {
    const auto parent = with_file(o.parent, [&] { return family_from_json(read_text(o.parent)); });
    f = derive_family(parent, o.perturbation, o.seed);
  } else {
    f = generate_family(o.seed, o.layers, o.heads, o.rank, o.basis_len);
  }
  f.noise_scale = o.noise;
  emit(out, o.out, family_to_json(f));
  return kExitOk;
}

int cmd_synth_pack(const Options& o, std::ostream& out) {
  const auto family =
      with_file(o.family_path, [&] { return family_from_json(read_text(o.family_path)); });
  const ProbeSet probes =
      o.probes_path.empty()
          ? synthetic_probe_ids(o.count)
          : with_file(o.probes_path, [&] { return load_probeset_file(o.probes_path); });
  const auto lengths = jittered_token_lengths(probes.probes.size(), o.tokens, o.jitter, o.seed);
  SynthPackOptions opts;
  opts.noise_scale = o.noise;
  opts.noise_seed = o.seed;
  opts.corrupted_equals_origin = o.identical;
  opts.model_id = o.model_id;
  const Pack pack = generate_attnpack(family, probes, lengths, opts);
  save_pack(o.out, pack.manifest, pack.payload);
  out << "probes=" << probes.probes.size() << " L=" << family.layers << " H=" << family.heads
      << " tokens=" << o.tokens << "+/-" << o.jitter << " noise=" << format_double(o.noise)
      << " seed=" << o.seed << '\n';
  return kExitOk;
}

int cmd_export_csv(const Options& o, std::ostream& out) {
  const auto fp = load_fp(o.fingerprint);
  std::ostringstream csv;
  write_fingerprint_csv(csv, fp);
  emit(out, o.out, csv.str());
  return kExitOk;
}

int cmd_pack_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto bytes = read_file_bytes(o.pack_path);
  const Pack pack = with_file(o.pack_path, [&] { return read_pack(bytes); });
  const auto diags = validate_pack(pack);
  if (!diags.empty()) {
    err << o.pack_path << ": " << diags.size() << " diagnostic(s)\n";
    print_diagnostics(err, diags);
    return kExitValidation;
  }
  const auto& m = pack.manifest;
  out << o.pack_path << ": ok, " << to_string(m.kind) << " pack, " << m.probes.size()
      << " probes, L=" << m.layers << " H=" << m.heads;
  if (m.kind == PackKind::fingerprint) out << " K=" << m.rank;
  out << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Differential-attention fingerprints and model comparison", "attndiff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", o.threads,
                  "Worker threads (0: ATTNDIFF_THREADS, else logical cores)")
        ->check(CLI::NonNegativeNumber);
  };

  auto* probes = app.add_subcommand("probes", "Probe-set utilities");
  probes->require_subcommand(1);
  auto* p_validate = probes->add_subcommand("validate", "Check every probe pair");
  p_validate->add_option("probes", o.probes_path, "Probe JSON file")->required();
  auto* p_split = probes->add_subcommand("split", "Stratified active/held-out split");
  p_split->add_option("probes", o.probes_path, "Probe JSON file")->required();
  p_split->add_option("--fraction", o.fraction, "Held-out fraction per domain")
      ->capture_default_str();
  p_split->add_option("--seed", o.seed, "Shuffle seed")->capture_default_str();
  p_split->add_option("--active", o.active_out, "Active pool output")->required();
  p_split->add_option("--held-out", o.held_out_out, "Held-out pool output")->required();

  auto* fingerprint = app.add_subcommand("fingerprint", "Build a fingerprint pack");
  fingerprint->add_option("--attnpack", o.attnpack, "Attention pack")->required();
  fingerprint->add_option("--rank", o.rank, "Singular values per head (K)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  fingerprint->add_option("--out", o.out, "Fingerprint pack output")->required();
  add_threads(fingerprint);

  auto* compare = app.add_subcommand("compare", "CKA between two fingerprints");
  compare->add_option("victim", o.victim, "Victim fingerprint pack")->required();
  compare->add_option("suspect", o.suspect, "Suspect fingerprint pack")->required();
  compare->add_flag("--json", o.json, "JSON report");
  compare->add_option("--upper", o.upper, "CKA at or above: related")->capture_default_str();
  compare->add_option("--lower", o.lower, "CKA at or below: unrelated")->capture_default_str();

  auto* layerwise = app.add_subcommand("layerwise", "Per-layer CKA grid");
  layerwise->add_option("victim", o.victim, "Victim fingerprint pack")->required();
  layerwise->add_option("suspect", o.suspect, "Suspect fingerprint pack")->required();
  layerwise->add_option("--format", o.format, "text | json | csv")
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "json", "csv"}));

  auto* stats = app.add_subcommand("stats", "Routing statistics of an attention pack");
  stats->add_option("--attnpack", o.attnpack, "Attention pack")->required();
  stats->add_option("--format", o.format, "text | json | csv")
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "json", "csv"}));
  stats->add_option("--instances", o.instances_out, "Per-instance CSV output");
  add_threads(stats);

  auto* profile = app.add_subcommand("profile", "One metric per layer");
  profile->add_option("--attnpack", o.attnpack, "Attention pack")->required();
  profile->add_option("--metric", o.metric, "frob rho r_eff gini_col gini_row d_entropy locality")
      ->capture_default_str();
  profile->add_option("--format", o.format, "csv | json")
      ->check(CLI::IsMember({"text", "json", "csv"}));
  add_threads(profile);

  auto* heatmap = app.add_subcommand("heatmap", "Layer x head descriptor energy for one probe");
  heatmap->add_option("--attnpack", o.attnpack, "Attention pack");
  heatmap->add_option("--fingerprint", o.fingerprint, "Fingerprint pack");
  heatmap->add_option("--probe", o.probe_id, "Probe id")->required();
  heatmap->add_option("--rank", o.rank, "K when reading an attention pack")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  heatmap->add_option("--format", o.format, "csv | json")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  auto* synth = app.add_subcommand("synth", "Synthetic model families and packs");
  synth->require_subcommand(1);
  auto* s_family = synth->add_subcommand("family", "Generate or derive a family");
  s_family->add_option("--seed", o.seed, "Family seed (derivation seed with --from)")
      ->capture_default_str();
  s_family->add_option("--layers", o.layers, "L")->capture_default_str()->check(CLI::PositiveNumber);
  s_family->add_option("--heads", o.heads, "H")->capture_default_str()->check(CLI::PositiveNumber);
  s_family->add_option("--rank", o.rank, "Re-routing rank")->capture_default_str()
      ->check(CLI::PositiveNumber);
  s_family->add_option("--basis-len", o.basis_len, "Longest supported sequence")
      ->capture_default_str();
  s_family->add_option("--from", o.parent, "Parent family JSON to derive from");
  s_family->add_option("--perturbation", o.perturbation, "Derivation strength")
      ->capture_default_str();
  s_family->add_option("--noise", o.noise, "Recorded noise scale")->capture_default_str();
  s_family->add_option("--out", o.out, "Output path (default stdout)");
  auto* s_pack = synth->add_subcommand("pack", "Emit an attention pack from a family");
  s_pack->add_option("--family", o.family_path, "Family JSON")->required();
  s_pack->add_option("--probes", o.probes_path, "Probe JSON (default: placeholder ids)");
  s_pack->add_option("--count", o.count, "Placeholder probe count")->capture_default_str();
  s_pack->add_option("--tokens", o.tokens, "Base token length")->capture_default_str();
  s_pack->add_option("--jitter", o.jitter, "Token length jitter")->capture_default_str();
  s_pack->add_option("--seed", o.seed, "Length and noise seed")->capture_default_str();
  s_pack->add_option("--noise", o.noise, "Logit noise scale")->capture_default_str();
  s_pack->add_flag("--identical", o.identical, "Corrupted maps equal origin maps");
  s_pack->add_option("--model-id", o.model_id, "Manifest model id")->capture_default_str();
  s_pack->add_option("--out", o.out, "Attention pack output")->required();

  auto* export_csv = app.add_subcommand("export-csv", "Fingerprint matrix as CSV");
  export_csv->add_option("fingerprint", o.fingerprint, "Fingerprint pack")->required();
  export_csv->add_option("--out", o.out, "Output path (default stdout)");

  auto* pack = app.add_subcommand("pack", "Container utilities");
  pack->require_subcommand(1);
  auto* pk_validate = pack->add_subcommand("validate", "Structural and value diagnostics");
  pk_validate->add_option("pack", o.pack_path, "Pack file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  error_context.clear();
  try {
    if (*p_validate) return cmd_probes_validate(o, out);
    if (*p_split) return cmd_probes_split(o, out);
    if (*fingerprint) return cmd_fingerprint(o, out, err);
    if (*compare) return cmd_compare(o, out);
    if (*layerwise) return cmd_layerwise(o, out);
    if (*stats) return cmd_stats(o, out);
    if (*profile) return cmd_profile(o, out);
    if (*heatmap) return cmd_heatmap(o, out);
    if (*s_family) return cmd_synth_family(o, out);
    if (*s_pack) return cmd_synth_pack(o, out);
    if (*export_csv) return cmd_export_csv(o, out);
    if (*pk_validate) return cmd_pack_validate(o, out, err);
    err << app.help();
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    report_error(err, e);
    return kExitUsage;
  } catch (const DegenerateError& e) {
    report_error(err, e);
    return kExitDegenerate;
  } catch (const ValidationError& e) {
    report_error(err, e);
    print_diagnostics(err, e.diagnostics());
    return kExitValidation;
  } catch (const std::exception& e) {
    report_error(err, e);
    return kExitValidation;
  }
}

}  // namespace attndiff::cli
