// Command-line surface of the non-ergodic ground-motion toolkit. Wires the
// library modules into the pipeline
//   synth -> ingest -> collapse -> split -> fit-lmm -> tune ->
//   predict/interpolate -> hazard -> damage
// with one config file, per-run manifests, and atomic CSV outputs.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>

#include "ngmm/catalog.hpp"
#include "ngmm/config.hpp"
#include "ngmm/fragility.hpp"
#include "ngmm/hazard.hpp"
#include "ngmm/inference.hpp"
#include "ngmm/klsc.hpp"
#include "ngmm/synth.hpp"

namespace fs = std::filesystem;
using namespace ngmm;

namespace {

constexpr const char* kVersion = "0.1.0";

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  bool seed_set = false;
  int workers = 1;
  bool dry_run = false;
};

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open input file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

void check_exists(const std::vector<std::string>& paths) {
  for (const auto& p : paths)
    if (!p.empty() && !fs::exists(p))
      throw ParseError("input file does not exist: " + p);
}

class ManifestWriter {
 public:
  ManifestWriter(const GlobalOpts& g, const std::string& command)
      : g_(g), command_(command), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& path) {
    if (!path.empty()) inputs_.push_back(path);
  }
  void inputs(const std::vector<std::string>& paths) {
    for (const auto& p : paths) input(p);
  }
  void note(const std::string& key, const std::string& value) {
    notes_[key] = value;
  }

  void write(const Config& cfg) {
    if (g_.dry_run) return;
    nlohmann::json j;
    j["command"] = command_;
    j["version"] = kVersion;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(cfg.digest()));
    j["config_hash"] = hex;
    j["seed"] = g_.seed;
    j["workers"] = g_.workers;
    nlohmann::json digests = nlohmann::json::object();
    for (const auto& p : inputs_) {
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(file_digest(p)));
      digests[p] = hex;
    }
    j["input_digests"] = digests;
    for (const auto& [k, v] : notes_) j[k] = v;
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            start_);
    j["wall_time_s"] = dt.count();
    fs::create_directories(g_.out_dir);
    std::string path = (fs::path(g_.out_dir) / "manifest.json").string();
    std::ofstream out(path + ".tmp");
    out << j.dump(2) << "\n";
    out.close();
    fs::rename(path + ".tmp", path);
  }

 private:
  const GlobalOpts& g_;
  std::string command_;
  std::vector<std::string> inputs_;
  std::map<std::string, std::string> notes_;
  std::chrono::steady_clock::time_point start_;
};

std::string out_path(const GlobalOpts& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

ColumnMap column_map(const Config& cfg) {
  ColumnMap cm;
  cm.site_id = cfg.get("columns.site_id", cm.site_id);
  cm.x_km = cfg.get("columns.x_km", cm.x_km);
  cm.y_km = cfg.get("columns.y_km", cm.y_km);
  cm.vs30 = cfg.get("columns.vs30", cm.vs30);
  cm.scenario_id = cfg.get("columns.scenario_id", cm.scenario_id);
  cm.magnitude = cfg.get("columns.magnitude", cm.magnitude);
  cm.annual_rate = cfg.get("columns.annual_rate", cm.annual_rate);
  cm.closest_x = cfg.get("columns.closest_point_x_km", cm.closest_x);
  cm.closest_y = cfg.get("columns.closest_point_y_km", cm.closest_y);
  cm.variation_id = cfg.get("columns.variation_id", cm.variation_id);
  cm.y = cfg.get("columns.y", cm.y);
  cm.ln_psa = cfg.get("columns.ln_psa", cm.ln_psa);
  cm.backbone_mu = cfg.get("columns.backbone_mu", cm.backbone_mu);
  cm.backbone_sigma = cfg.get("columns.backbone_sigma", cm.backbone_sigma);
  return cm;
}

std::set<std::string> exclusion_list(const std::string& path) {
  std::set<std::string> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open exclusion list: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') out.insert(line);
  }
  return out;
}

struct CatalogArgs {
  std::string sites, scenarios, variations, residuals, exclude;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--sites", sites, "site table CSV")->required();
    cmd->add_option("--scenarios", scenarios, "scenario table CSV")
        ->required();
    cmd->add_option("--variations", variations, "variation table CSV")
        ->required();
    cmd->add_option("--residuals", residuals, "residual records CSV")
        ->required();
    cmd->add_option("--exclude", exclude,
                    "scenario exclusion list, one scenario_id per line");
  }

  ResidualCatalog load(const Config& cfg) const {
    CatalogPaths paths;
    paths.sites = sites;
    paths.scenarios = scenarios;
    paths.variations = variations;
    paths.residuals = {residuals};
    return ingest_catalog(paths, column_map(cfg), exclusion_list(exclude));
  }

  std::vector<std::string> all() const {
    return {sites, scenarios, variations, residuals, exclude};
  }
};

void write_catalog_csvs(const GlobalOpts& g, const ResidualCatalog& cat) {
  {
    CsvWriter w(out_path(g, "sites.csv"));
    w.comment("units: coordinates km, vs30 m/s");
    w.row({"site_id", "x_km", "y_km", "vs30"});
    for (const auto& s : cat.sites)
      w.row({s.site_id, fmt_num(s.x_km), fmt_num(s.y_km), fmt_num(s.vs30)});
    w.close();
  }
  {
    CsvWriter w(out_path(g, "scenarios.csv"));
    w.comment("units: magnitude Mw, annual_rate 1/year, coordinates km");
    w.row({"scenario_id", "magnitude", "annual_rate", "closest_point_x_km",
           "closest_point_y_km"});
    for (const auto& s : cat.scenarios)
      w.row({s.scenario_id, fmt_num(s.magnitude), fmt_num(s.annual_rate),
             fmt_num(s.closest_point_x_km), fmt_num(s.closest_point_y_km)});
    w.close();
  }
  {
    CsvWriter w(out_path(g, "variations.csv"));
    w.row({"variation_id", "scenario_id"});
    for (const auto& v : cat.variations)
      w.row({v.variation_id,
             cat.scenarios[static_cast<std::size_t>(v.scenario)].scenario_id});
    w.close();
  }
  {
    CsvWriter w(out_path(g, "residuals.csv"));
    w.comment("units: y and backbone_mu in ln units, backbone_sigma in ln units");
    w.row({"variation_id", "site_id", "y", "backbone_mu", "backbone_sigma"});
    for (const auto& r : cat.records)
      w.row({cat.variations[static_cast<std::size_t>(r.variation)].variation_id,
             cat.sites[static_cast<std::size_t>(r.site)].site_id,
             fmt_num(r.y), fmt_num(r.backbone_mu),
             fmt_num(r.backbone_sigma)});
    w.close();
  }
}

void write_means(const GlobalOpts& g, const ResidualCatalog& cat,
                 const ScenarioMeanTable& t, const std::string& name) {
  CsvWriter w(out_path(g, name));
  w.comment("units: y_bar in ln units");
  w.row({"scenario_id", "site_id", "y_bar", "n_variations"});
  for (const auto& c : t.cells)
    w.row({cat.scenarios[static_cast<std::size_t>(c.scenario)].scenario_id,
           cat.sites[static_cast<std::size_t>(c.site)].site_id,
           fmt_num(c.y_bar), std::to_string(c.n_variations)});
  w.close();
}

ScenarioMeanTable load_means(const std::string& path,
                             const ResidualCatalog& cat) {
  CsvReader r(path);
  int c_sc = r.column("scenario_id"), c_site = r.column("site_id"),
      c_y = r.column("y_bar"), c_n = r.column("n_variations");
  ScenarioMeanTable t;
  std::vector<std::string> f;
  while (r.next(f)) {
    ScenarioMeanRecord m;
    m.scenario = cat.scenario_of(f[static_cast<std::size_t>(c_sc)]);
    m.site = cat.site_of(f[static_cast<std::size_t>(c_site)]);
    m.y_bar = r.num(f, c_y);
    m.n_variations = static_cast<int>(r.num(f, c_n));
    t.cells.push_back(m);
  }
  return t;
}

SplitAssignment load_split(const std::string& path,
                           const ResidualCatalog& cat) {
  CsvReader r(path);
  int c_kind = r.column("kind"), c_id = r.column("id"),
      c_role = r.column("role");
  SplitAssignment sa;
  sa.site_role.assign(cat.sites.size(), Role::Train);
  sa.scenario_role.assign(cat.scenarios.size(), Role::Train);
  std::vector<std::string> f;
  while (r.next(f)) {
    Role role = f[static_cast<std::size_t>(c_role)] == "test" ? Role::Test
                                                              : Role::Train;
    const std::string& id = f[static_cast<std::size_t>(c_id)];
    if (f[static_cast<std::size_t>(c_kind)] == "site")
      sa.site_role[static_cast<std::size_t>(cat.site_of(id))] = role;
    else
      sa.scenario_role[static_cast<std::size_t>(cat.scenario_of(id))] = role;
  }
  return sa;
}

// ---------------------------------------------------------------- synth

void cmd_synth(const GlobalOpts& g, const Config& cfg) {
  SynthSpec spec;
  spec.n_sites = static_cast<int>(cfg.get_int("synth.n_sites", 50));
  spec.extent_km = cfg.get_num("synth.extent_km", 100.0);
  spec.n_scenarios = static_cast<int>(cfg.get_int("synth.n_scenarios", 100));
  spec.n_sources = static_cast<int>(cfg.get_int("synth.n_sources", 0));
  spec.mag_min = cfg.get_num("synth.mag_min", 6.0);
  spec.mag_max = cfg.get_num("synth.mag_max", 7.5);
  spec.rate_min = cfg.get_num("synth.rate_min", 1e-4);
  spec.rate_max = cfg.get_num("synth.rate_max", 1e-2);
  spec.var_min = static_cast<int>(cfg.get_int("synth.var_min", 4));
  spec.var_max = static_cast<int>(cfg.get_int("synth.var_max", 12));
  spec.latent_cap = static_cast<int>(cfg.get_int("synth.latent_cap", 5000));
  spec.params = cfg.hyper_params();
  spec.components = cfg.variance_components();
  spec.seed = g.seed;
  spec.validate();
  if (g.dry_run) return;

  auto [cat, truth] = generate(spec);
  write_catalog_csvs(g, cat);
  {
    CsvWriter w(out_path(g, "truth.csv"));
    w.comment("latent ground-truth fields, ln units");
    w.row({"kind", "id_a", "id_b", "value"});
    for (std::size_t s = 0; s < cat.sites.size(); ++s)
      w.row({"delta_s2s", cat.sites[s].site_id, "", fmt_num(truth.delta_s2s[s])});
    for (Eigen::Index a = 0; a < truth.delta_p2p.rows(); ++a)
      for (Eigen::Index s = 0; s < truth.delta_p2p.cols(); ++s)
        w.row({"delta_p2p", std::to_string(a),
               cat.sites[static_cast<std::size_t>(s)].site_id,
               fmt_num(truth.delta_p2p(a, s))});
    for (std::size_t l = 0; l < cat.scenarios.size(); ++l)
      w.row({"b_dot", cat.scenarios[l].scenario_id, "",
             fmt_num(truth.b_dot[l])});
    for (std::size_t e = 0; e < cat.variations.size(); ++e)
      w.row({"b_ddot", cat.variations[e].variation_id, "",
             fmt_num(truth.b_ddot[e])});
    w.close();
  }
  ManifestWriter m(g, "synth");
  m.note("n_records", std::to_string(cat.records.size()));
  m.write(cfg);
}

// ------------------------------------------------------- ingest/collapse

void cmd_ingest(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a) {
  check_exists(a.all());
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  write_catalog_csvs(g, cat);
  ManifestWriter m(g, "ingest");
  m.inputs(a.all());
  m.note("n_records", std::to_string(cat.records.size()));
  m.write(cfg);
}

void cmd_collapse(const GlobalOpts& g, const Config& cfg,
                  const CatalogArgs& a) {
  check_exists(a.all());
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  auto means = collapse_to_means(cat);
  write_means(g, cat, means, "means.csv");
  ManifestWriter m(g, "collapse");
  m.inputs(a.all());
  m.note("n_cells", std::to_string(means.cells.size()));
  m.write(cfg);
}

// ----------------------------------------------------------------- split

void cmd_split(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a,
               double site_frac, double scen_frac) {
  check_exists(a.all());
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  auto sa = split(cat.sites.size(), cat.scenarios.size(), site_frac, scen_frac,
                  g.seed);
  CsvWriter w(out_path(g, "split.csv"));
  w.comment("seed=" + std::to_string(g.seed) +
            " site_test_frac=" + fmt_num(site_frac) +
            " scenario_test_frac=" + fmt_num(scen_frac) +
            " convention=round(frac*n) test members");
  w.row({"kind", "id", "role"});
  for (std::size_t i = 0; i < cat.sites.size(); ++i)
    w.row({"site", cat.sites[i].site_id,
           sa.site_role[i] == Role::Test ? "test" : "train"});
  for (std::size_t i = 0; i < cat.scenarios.size(); ++i)
    w.row({"scenario", cat.scenarios[i].scenario_id,
           sa.scenario_role[i] == Role::Test ? "test" : "train"});
  w.close();
  ManifestWriter m(g, "split");
  m.inputs(a.all());
  m.write(cfg);
}

// --------------------------------------------------------------- fit-lmm

void cmd_fit_lmm(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a,
                 const std::string& means_path) {
  check_exists(a.all());
  check_exists({means_path});
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  auto means = load_means(means_path, cat);
  auto deviations = record_deviations(cat, means);
  auto events = summarize_events(deviations);
  auto [vc, rep] = fit_mle(events);

  std::string path = out_path(g, "variance_components.ini");
  std::ofstream out(path + ".tmp");
  out << "[variance_components]\n";
  out << "tau_ddot2 = " << fmt_num(vc.tau_ddot2) << "\n";
  out << "phi_ddot2 = " << fmt_num(vc.phi_ddot2) << "\n";
  out << "# optimizer: converged=" << (rep.converged ? "yes" : "no")
      << " iterations=" << rep.iterations << " grad_norm="
      << fmt_num(rep.grad_norm) << " loglik=" << fmt_num(rep.loglik) << "\n";
  out.close();
  fs::rename(path + ".tmp", path);
  ManifestWriter m(g, "fit-lmm");
  m.inputs(a.all());
  m.input(means_path);
  m.write(cfg);
}

// ------------------------------------------------------------------ tune

void cmd_tune(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a,
              const std::string& means_path, const TrainConfig& tc_in,
              const std::string& preset) {
  check_exists(a.all());
  check_exists({means_path});
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  auto means = load_means(means_path, cat);
  TrainConfig tc = tc_in;
  tc.seed = g.seed;
  HyperParams init = preset.empty() ? cfg.hyper_params() : preset_params(preset);
  auto [params, trace] = fit(cat, means, tc, init);

  {
    CsvWriter w(out_path(g, "trace.csv"));
    w.comment("objective: mean LOO-CV log-density per point (ln units)");
    w.comment("lr=" + fmt_num(tc.learning_rate) +
              " batch=" + std::to_string(tc.batch_size) +
              " seed=" + std::to_string(tc.seed));
    w.row({"epoch", "objective", "site_len", "site_var", "path_len",
           "path_var", "tau_dot2", "phi_dot2"});
    for (std::size_t e = 0; e < trace.objective.size(); ++e) {
      const auto& p = trace.params[e];
      w.row({std::to_string(e), fmt_num(trace.objective[e]),
             fmt_num(std::exp(p[0])), fmt_num(std::exp(p[1])),
             fmt_num(std::exp(p[2])), fmt_num(std::exp(p[3])),
             fmt_num(std::exp(p[4])), fmt_num(std::exp(p[5]))});
    }
    w.close();
  }
  {
    std::string path = out_path(g, "params.ini");
    std::ofstream out(path + ".tmp");
    out << "[kernel]\n";
    out << "site_var = " << fmt_num(params.kernel.site_var) << "\n";
    out << "site_len = " << fmt_num(params.kernel.site_len) << "\n";
    out << "path_var = " << fmt_num(params.kernel.path_var) << "\n";
    out << "path_len = " << fmt_num(params.kernel.path_len) << "\n";
    out << "[noise]\n";
    out << "tau_dot2 = " << fmt_num(params.tau_dot2) << "\n";
    out << "phi_dot2 = " << fmt_num(params.phi_dot2) << "\n";
    out.close();
    fs::rename(path + ".tmp", path);
  }
  ManifestWriter m(g, "tune");
  m.inputs(a.all());
  m.input(means_path);
  m.note("epochs_completed", std::to_string(trace.epochs_completed));
  m.write(cfg);
}

// --------------------------------------------------- predict/interpolate

std::vector<InferencePoint> load_points(const std::string& path,
                                        const ResidualCatalog& cat) {
  CsvReader r(path);
  int c_sc = r.column("scenario_id"), c_site = r.column("site_id");
  int c_var = r.column_opt("variation_id");
  std::vector<InferencePoint> pts;
  std::vector<std::string> f;
  while (r.next(f)) {
    InferencePoint ip;
    int sc = cat.scenario_of(f[static_cast<std::size_t>(c_sc)]);
    int site = cat.site_of(f[static_cast<std::size_t>(c_site)]);
    ip.point = make_point(cat, sc, site);
    if (c_var >= 0 && !f[static_cast<std::size_t>(c_var)].empty())
      ip.variation = cat.variation_of(f[static_cast<std::size_t>(c_var)]);
    pts.push_back(ip);
  }
  return pts;
}

void cmd_infer(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a,
               const std::string& means_path, const std::string& points_path,
               double rho, const std::string& factor_path, int sample_fields_n,
               const std::string& split_path, bool interpolation) {
  check_exists(a.all());
  check_exists({means_path, points_path});
  check_exists({split_path});
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  auto means = load_means(means_path, cat);
  auto pts = load_points(points_path, cat);
  HyperParams params = cfg.hyper_params();
  VarianceComponents vc = cfg.variance_components();

  auto obs_pts = table_points(cat, means);
  SparseFactor factor;
  bool loaded = false;
  if (!factor_path.empty() && fs::exists(factor_path)) {
    factor = load_factor(factor_path);
    if (factor.n() == static_cast<int>(obs_pts.size())) loaded = true;
  }
  if (!loaded) {
    auto dist = [&](int i, int j) {
      return path_distance(obs_pts[static_cast<std::size_t>(i)],
                           obs_pts[static_cast<std::size_t>(j)]);
    };
    auto ord = reverse_maximin(static_cast<int>(obs_pts.size()), dist);
    auto pat = build_pattern(ord, rho, dist);
    ThetaAccess theta = [&](int i, int j) {
      double v = kernel_value(obs_pts[static_cast<std::size_t>(i)],
                              obs_pts[static_cast<std::size_t>(j)],
                              params.kernel);
      if (obs_pts[static_cast<std::size_t>(i)].scenario ==
          obs_pts[static_cast<std::size_t>(j)].scenario)
        v += params.tau_dot2;
      if (i == j) v += params.phi_dot2 + jitter(params.kernel);
      return v;
    };
    factor = factorize(theta, ord, pat, g.workers);
    if (!factor_path.empty()) save_factor(factor, factor_path);
  }

  PosteriorResult res;
  if (interpolation) {
    auto events = summarize_events(record_deviations(cat, means));
    res = interpolate(cat, means, pts, params, vc, factor, events);
  } else {
    res = predict(cat, means, pts, params, vc, factor);
  }

  {
    CsvWriter w(out_path(g, "posterior.csv"));
    w.comment("units: mean/stddev in ln units, variances in ln units^2");
    w.comment(std::string("mode=") +
              (interpolation ? "interpolation" : "prediction") +
              " tau_dot2=" + fmt_num(vc.tau_dot2) +
              " phi_dot2=" + fmt_num(vc.phi_dot2) +
              " tau_ddot2=" + fmt_num(vc.tau_ddot2) +
              " phi_ddot2=" + fmt_num(vc.phi_ddot2));
    w.row({"scenario_id", "site_id", "variation_id", "mean", "stddev",
           "kernel_var", "bddot_var"});
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto ii = static_cast<Eigen::Index>(i);
      w.row({cat.scenarios[static_cast<std::size_t>(pts[i].point.scenario)]
                 .scenario_id,
             cat.sites[static_cast<std::size_t>(pts[i].point.site)].site_id,
             pts[i].variation >= 0
                 ? cat.variations[static_cast<std::size_t>(pts[i].variation)]
                       .variation_id
                 : "",
             fmt_num(res.mean(ii)), fmt_num(res.stddev(ii)),
             fmt_num(res.kernel_variance(ii)),
             fmt_num(res.bddot_variance(ii))});
    }
    w.close();
  }
  if (sample_fields_n > 0) {
    auto fields = sample_fields(res, pts, sample_fields_n, g.seed);
    CsvWriter w(out_path(g, "fields.csv"));
    w.comment("sampled residual fields, ln units; one row per realization");
    std::vector<std::string> head{"realization"};
    for (const auto& p : pts)
      head.push_back(
          cat.scenarios[static_cast<std::size_t>(p.point.scenario)]
              .scenario_id +
          ":" + cat.sites[static_cast<std::size_t>(p.point.site)].site_id);
    w.row(head);
    for (Eigen::Index r = 0; r < fields.rows(); ++r) {
      std::vector<std::string> row{std::to_string(r)};
      for (Eigen::Index i = 0; i < fields.cols(); ++i)
        row.push_back(fmt_num(fields(r, i)));
      w.row(row);
    }
    w.close();
  }
  if (!split_path.empty()) {
    auto sa = load_split(split_path, cat);
    auto truth_means = collapse_to_means(cat);
    auto metrics = evaluate_groups(cat, truth_means, sa, pts, res);
    CsvWriter w(out_path(g, "group_metrics.csv"));
    w.comment("units: RMSE columns in ln units; reduction dimensionless");
    w.row({"group", "n_records", "n_cells", "rmse_ybar", "rmse_y",
           "mean_stddev", "backbone_rmse", "reduction"});
    for (const auto& gm : metrics) {
      if (!gm.present) continue;
      w.row({group_name(gm.group), std::to_string(gm.n_records),
             std::to_string(gm.n_cells), fmt_num(gm.rmse_ybar),
             fmt_num(gm.rmse_y), fmt_num(gm.mean_stddev),
             fmt_num(gm.backbone_rmse), fmt_num(gm.reduction)});
    }
    w.close();
  }
  ManifestWriter m(g, interpolation ? "interpolate" : "predict");
  m.inputs(a.all());
  m.input(means_path);
  m.input(points_path);
  m.note("clipped_variances", std::to_string(res.clipped));
  m.write(cfg);
}

// ---------------------------------------------------------------- hazard

void cmd_hazard(const GlobalOpts& g, const Config& cfg, const CatalogArgs& a,
                const std::string& posterior_path, const std::string& site_id,
                int realizations, const std::string& summary) {
  check_exists(a.all());
  check_exists({posterior_path});
  if (g.dry_run) return;
  auto cat = a.load(cfg);
  int site = cat.site_of(site_id);

  // backbone mu/sigma and empirical PSA per scenario at this site
  std::map<int, std::pair<double, double>> backbone;
  std::map<int, std::vector<double>> psa;
  for (const auto& rec : cat.records) {
    if (rec.site != site) continue;
    int sc = cat.variations[static_cast<std::size_t>(rec.variation)].scenario;
    backbone.emplace(sc, std::make_pair(rec.backbone_mu, rec.backbone_sigma));
    psa[sc].push_back(std::exp(rec.backbone_mu + rec.y));
  }

  // posterior rows at this site
  struct Post {
    double mean, kernel_var, bddot_var;
  };
  std::map<int, Post> post;
  bool interp_mode = false;
  VarianceComponents vc = cfg.variance_components();
  {
    CsvReader r(posterior_path);
    int c_sc = r.column("scenario_id"), c_site = r.column("site_id"),
        c_mean = r.column("mean"), c_kv = r.column("kernel_var"),
        c_bv = r.column("bddot_var");
    std::vector<std::string> f;
    while (r.next(f)) {
      if (f[static_cast<std::size_t>(c_site)] != site_id) continue;
      int sc = cat.scenario_of(f[static_cast<std::size_t>(c_sc)]);
      post[sc] = {r.num(f, c_mean), r.num(f, c_kv), r.num(f, c_bv)};
    }
    interp_mode = cfg.get("hazard.mode", "prediction") == "interpolation";
  }

  IntensityGrid grid = IntensityGrid::log_spaced(
      cfg.get_num("hazard.grid_min_g", 1e-3),
      cfg.get_num("hazard.grid_max_g", 3.0),
      static_cast<int>(cfg.get_int("hazard.grid_points", 40)));

  std::vector<ScenarioHazardInput> gmm_in, ngmm_in;
  std::vector<std::pair<double, std::vector<double>>> emp_in;
  for (const auto& [sc, bb] : backbone) {
    double rate = cat.scenarios[static_cast<std::size_t>(sc)].annual_rate;
    gmm_in.push_back({rate, bb.first, bb.second, 0.0});
    emp_in.emplace_back(rate, psa[sc]);
    auto it = post.find(sc);
    if (it == post.end()) continue;
    ScenarioHazardInput si;
    si.annual_rate = rate;
    si.mu_ln = bb.first + it->second.mean;
    if (interp_mode) {
      si.epi_var = it->second.kernel_var + it->second.bddot_var;
      si.sigma_ln = std::sqrt(vc.phi_dot2 + vc.phi_ddot2);
    } else {
      si.epi_var = it->second.kernel_var;
      si.sigma_ln = std::sqrt(vc.tau_dot2 + vc.phi_dot2 + vc.tau_ddot2 +
                              vc.phi_ddot2);
    }
    ngmm_in.push_back(si);
  }
  require(ngmm_in.size() == gmm_in.size(),
          "hazard: posterior file lacks rows for some scenarios at site " +
              site_id);

  CurveSummary cs =
      summary == "mean" ? CurveSummary::Mean : CurveSummary::Median;
  auto c_gmm = gmm_curve(gmm_in, grid);
  auto c_ngmm = ngmm_curve(ngmm_in, grid, realizations, g.seed, cs);
  auto c_ana = ngmm_curve_analytic(ngmm_in, grid);
  auto c_emp = empirical_curve(emp_in, grid);

  auto write_curve = [&](const HazardCurve& c, const std::string& name) {
    CsvWriter w(out_path(g, name));
    w.comment("units: psa_g in g, rate in 1/year; estimator=" + c.estimator);
    w.row({"psa_g", "rate"});
    for (std::size_t i = 0; i < c.grid.x.size(); ++i)
      w.row({fmt_num(c.grid.x[i]), fmt_num(c.rate[i])});
    w.close();
  };
  write_curve(c_gmm, "hazard_gmm.csv");
  write_curve(c_ngmm, "hazard_ngmm.csv");
  write_curve(c_ana, "hazard_ngmm_analytic.csv");
  write_curve(c_emp, "hazard_empirical.csv");

  {
    CsvWriter w(out_path(g, "hazard_metrics.csv"));
    w.comment("distances to the empirical curve; units 1/year");
    w.row({"estimator", "ks", "mae"});
    w.row({"gmm", fmt_num(curve_distance(c_gmm, c_emp, CurveMetric::KS)),
           fmt_num(curve_distance(c_gmm, c_emp, CurveMetric::MAE))});
    w.row({"ngmm", fmt_num(curve_distance(c_ngmm, c_emp, CurveMetric::KS)),
           fmt_num(curve_distance(c_ngmm, c_emp, CurveMetric::MAE))});
    w.close();
  }
  ManifestWriter m(g, "hazard");
  m.inputs(a.all());
  m.input(posterior_path);
  m.write(cfg);
}

// ---------------------------------------------------------------- damage

void cmd_damage(const GlobalOpts& g, const Config& cfg,
                const std::string& facilities_path,
                const std::string& fragility_path,
                const std::string& fields_path) {
  check_exists({facilities_path, fragility_path, fields_path});
  if (g.dry_run) return;

  std::vector<Facility> facilities;
  {
    CsvReader r(facilities_path);
    int c_id = r.column("facility_id"), c_x = r.column("x_km"),
        c_y = r.column("y_km"), c_r = r.column("ratio_2s_pga");
    std::vector<std::string> f;
    while (r.next(f)) {
      Facility fac;
      fac.facility_id = f[static_cast<std::size_t>(c_id)];
      fac.x_km = r.num(f, c_x);
      fac.y_km = r.num(f, c_y);
      fac.ratio = r.num(f, c_r);
      facilities.push_back(std::move(fac));
    }
  }
  FragilitySet set;
  {
    CsvReader r(fragility_path);
    int c_s = r.column("state"), c_a = r.column("alpha_g"),
        c_b = r.column("beta");
    std::vector<std::string> f;
    while (r.next(f)) {
      FragilityState s;
      s.name = f[static_cast<std::size_t>(c_s)];
      s.alpha = r.num(f, c_a);
      s.beta = r.num(f, c_b);
      set.states.push_back(std::move(s));
    }
  }
  Eigen::MatrixXd field;
  {
    CsvReader r(fields_path);
    require(r.header().size() == facilities.size() + 1,
            "damage: field columns must match the facility count");
    std::vector<std::vector<double>> rows;
    std::vector<std::string> f;
    while (r.next(f)) {
      std::vector<double> row;
      for (std::size_t i = 1; i < f.size(); ++i)
        row.push_back(r.num(f, static_cast<int>(i)));
      rows.push_back(std::move(row));
    }
    field.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(facilities.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < facilities.size(); ++j)
        field(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            rows[i][j];
  }

  auto [realizations, stats] = sample_damage(field, facilities, set, g.seed);

  {
    CsvWriter w(out_path(g, "damage_realizations.csv"));
    w.comment("state index: 0 = none, then the fragility states in order");
    std::vector<std::string> head{"realization"};
    for (const auto& f : facilities) head.push_back(f.facility_id);
    w.row(head);
    for (const auto& dr : realizations) {
      std::vector<std::string> row{std::to_string(dr.field_realization)};
      for (int s : dr.state) row.push_back(std::to_string(s));
      w.row(row);
    }
    w.close();
  }
  {
    CsvWriter w(out_path(g, "damage_frequency.csv"));
    w.comment("empirical damage-state frequency per facility");
    std::vector<std::string> head{"facility_id", "none"};
    for (const auto& s : set.states) head.push_back(s.name);
    w.row(head);
    for (std::size_t i = 0; i < facilities.size(); ++i) {
      std::vector<std::string> row{facilities[i].facility_id};
      for (Eigen::Index k = 0; k < stats.frequency.cols(); ++k)
        row.push_back(fmt_num(stats.frequency(static_cast<Eigen::Index>(i), k)));
      w.row(row);
    }
    w.close();
  }
  ManifestWriter m(g, "damage");
  m.inputs({facilities_path, fragility_path, fields_path});
  m.write(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-ergodic ground-motion modeling toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "config file (INI)");
  app.add_option("--out", g.out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed");
  app.add_option("--workers", g.workers, "worker threads");
  app.add_flag("--dry-run", g.dry_run, "validate inputs, compute nothing");

  CatalogArgs cat_args;
  std::string means_path, points_path, posterior_path, site_id, factor_path;
  std::string split_path;
  std::string facilities_path, fragility_path, fields_path, preset, summary =
      "median";
  double site_frac = 0.2, scen_frac = 0.5, rho = 2.0;
  int realizations = 1000, sample_n = 0;
  TrainConfig tc;

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic catalog");

  auto* c_ingest = app.add_subcommand("ingest", "validate and normalize input CSVs");
  cat_args.add_flags(c_ingest);

  auto* c_collapse =
      app.add_subcommand("collapse", "collapse residuals to scenario means");
  cat_args.add_flags(c_collapse);

  auto* c_split = app.add_subcommand("split", "train/test partition");
  cat_args.add_flags(c_split);
  c_split->add_option("--site-test-frac", site_frac, "site test fraction");
  c_split->add_option("--scenario-test-frac", scen_frac,
                      "scenario test fraction");

  auto* c_lmm =
      app.add_subcommand("fit-lmm", "fit primary variance components");
  cat_args.add_flags(c_lmm);
  c_lmm->add_option("--means", means_path, "scenario-mean table CSV")
      ->required();

  auto* c_tune = app.add_subcommand("tune", "tune kernel hyperparameters");
  cat_args.add_flags(c_tune);
  c_tune->add_option("--means", means_path, "scenario-mean table CSV")
      ->required();
  c_tune->add_option("--preset", preset, "initial parameter preset");
  c_tune->add_option("--batch-size", tc.batch_size, "mini-batch size");
  c_tune->add_option("--epochs", tc.epochs, "training epochs");
  c_tune->add_option("--batches-per-epoch", tc.batches_per_epoch,
                     "limit batches per epoch (0: all)");
  c_tune->add_option("--lr", tc.learning_rate, "learning rate");

  auto* c_pred = app.add_subcommand("predict", "posterior for unseen scenarios");
  auto* c_intp =
      app.add_subcommand("interpolate", "posterior for observed scenarios");
  for (auto* c : {c_pred, c_intp}) {
    cat_args.add_flags(c);
    c->add_option("--means", means_path, "observed scenario-mean table CSV")
        ->required();
    c->add_option("--points", points_path, "prediction points CSV")
        ->required();
    c->add_option("--rho", rho, "KLSC sparsity scale");
    c->add_option("--factor", factor_path, "factor cache file");
    c->add_option("--sample-fields", sample_n,
                  "also emit this many sampled residual fields");
    c->add_option("--split", split_path,
                  "train/test split CSV; emit per-group error metrics");
  }

  auto* c_haz = app.add_subcommand("hazard", "exceedance-rate curves");
  cat_args.add_flags(c_haz);
  c_haz->add_option("--posterior", posterior_path, "posterior CSV")
      ->required();
  c_haz->add_option("--site", site_id, "site_id")->required();
  c_haz->add_option("--realizations", realizations, "epistemic realizations");
  c_haz->add_option("--summary", summary, "median|mean");

  auto* c_dmg = app.add_subcommand("damage", "fragility damage sampling");
  c_dmg->add_option("--facilities", facilities_path, "facility CSV")
      ->required();
  c_dmg->add_option("--fragility", fragility_path, "fragility CSV")
      ->required();
  c_dmg->add_option("--fields", fields_path, "PSA field realizations CSV")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg;
    if (!g.config_path.empty()) cfg = Config::load(g.config_path);
    if (seed_opt->count() == 0 && cfg.has("run.seed"))
      g.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 1));
    cfg.set("run.seed", std::to_string(g.seed));

    if (c_synth->parsed()) cmd_synth(g, cfg);
    if (c_ingest->parsed()) cmd_ingest(g, cfg, cat_args);
    if (c_collapse->parsed()) cmd_collapse(g, cfg, cat_args);
    if (c_split->parsed()) cmd_split(g, cfg, cat_args, site_frac, scen_frac);
    if (c_lmm->parsed()) cmd_fit_lmm(g, cfg, cat_args, means_path);
    if (c_tune->parsed()) cmd_tune(g, cfg, cat_args, means_path, tc, preset);
    if (c_pred->parsed())
      cmd_infer(g, cfg, cat_args, means_path, points_path, rho, factor_path,
                sample_n, split_path, false);
    if (c_intp->parsed())
      cmd_infer(g, cfg, cat_args, means_path, points_path, rho, factor_path,
                sample_n, split_path, true);
    if (c_haz->parsed())
      cmd_hazard(g, cfg, cat_args, posterior_path, site_id, realizations,
                 summary);
    if (c_dmg->parsed())
      cmd_damage(g, cfg, facilities_path, fragility_path, fields_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
