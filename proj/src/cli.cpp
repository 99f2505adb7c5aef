#include "mca/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mca/error.hpp"

namespace mca::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing helpers

void reject_unknown(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw InputError("unknown key '" + key + "' in " + where);
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::uint64_t parse_seed(const Json& j) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  if (j.is_string()) return std::stoull(j.get<std::string>());
  throw InputError("seed must be a nonnegative integer");
}

RegularizerKind parse_regularizer(const std::string& s) {
  if (s == "domain") return RegularizerKind::domain;
  if (s == "identity") return RegularizerKind::identity;
  if (s == "none") return RegularizerKind::none;
  throw InputError("unknown regularizer '" + s + "' (expected domain, identity or none)");
}

SimulationSettings parse_simulation(const Json& j) {
  reject_unknown(j, {"dims", "counts", "grid_side", "noise_sd", "weight_kind", "powerlaw_exponent", "sampling"},
                 "simulation");
  SimulationSettings s;
  if (j.contains("dims")) s.sim.dims = j["dims"].get<std::vector<Index>>();
  if (j.contains("counts")) s.sim.counts = j["counts"].get<std::vector<Index>>();
  if (j.contains("grid_side")) s.sim.grid_side = j["grid_side"].get<Index>();
  if (j.contains("noise_sd")) s.sim.noise_sd = j["noise_sd"].get<double>();
  if (j.contains("weight_kind")) s.sim.weight_kind = parse_weight_kind(j["weight_kind"].get<std::string>());
  if (j.contains("powerlaw_exponent")) s.sim.powerlaw_exponent = j["powerlaw_exponent"].get<double>();
  if (j.contains("sampling")) {
    const auto& sm = j["sampling"];
    reject_unknown(sm, {"scheme", "prob"}, "simulation.sampling");
    if (sm.contains("scheme")) s.scheme = parse_scheme(sm["scheme"].get<std::string>());
    if (sm.contains("prob")) s.prob = sm["prob"].get<double>();
  }
  return s;
}

void parse_into(RunConfig& cfg, const Json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  reject_unknown(j,
                 {"domains", "weights_file", "gamma_M", "gamma_W", "K", "rescale_mode", "center", "regularizer",
                  "error_scale", "cv", "truth", "seed", "output_dir", "threads", "oracle", "transform",
                  "simulation"},
                 "config");
  const fs::path& base = cfg.base_dir;
  if (j.contains("domains")) {
    for (const auto& d : j["domains"]) {
      reject_unknown(d, {"name", "file", "p"}, "domains entry");
      DomainSpec spec;
      spec.name = d.value("name", "domain" + std::to_string(cfg.domains.size()));
      spec.file = resolve(base, d.at("file").get<std::string>());
      spec.p = d.value("p", Index{0});
      cfg.domains.push_back(std::move(spec));
    }
  }
  if (j.contains("weights_file")) cfg.weights_file = resolve(base, j["weights_file"].get<std::string>());
  if (j.contains("gamma_M")) {
    cfg.gamma_M = j["gamma_M"].is_array() ? j["gamma_M"].get<std::vector<double>>()
                                          : std::vector<double>{j["gamma_M"].get<double>()};
  }
  if (j.contains("gamma_W")) cfg.gamma_W = j["gamma_W"].get<double>();
  if (j.contains("K")) cfg.K = j["K"].get<Index>();
  if (j.contains("rescale_mode")) cfg.rescale_mode = parse_variance_mode(j["rescale_mode"].get<std::string>());
  if (j.contains("center")) cfg.center = j["center"].get<bool>();
  if (j.contains("regularizer")) cfg.regularizer = parse_regularizer(j["regularizer"].get<std::string>());
  if (j.contains("error_scale")) cfg.error_scale = parse_error_scale(j["error_scale"].get<std::string>());
  if (j.contains("cv")) {
    const auto& cv = j["cv"];
    reject_unknown(cv, {"scheme", "prob", "replicates"}, "cv");
    if (cv.contains("scheme")) cfg.cv.scheme = parse_scheme(cv["scheme"].get<std::string>());
    if (cv.contains("prob")) {
      cfg.cv.prob = cv["prob"].get<double>();
      cfg.cv_prob_set = true;
    }
    if (cv.contains("replicates")) cfg.cv.replicates = cv["replicates"].get<int>();
  }
  if (!cfg.cv_prob_set && cfg.cv.scheme == Scheme::node) cfg.cv.prob = kDefaultNodeResampleProb;
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    reject_unknown(t, {"wbar_file", "epsilon", "test_weights_file"}, "truth");
    if (t.contains("wbar_file")) cfg.wbar_file = resolve(base, t["wbar_file"].get<std::string>());
    if (t.contains("epsilon")) cfg.epsilon = t["epsilon"].get<double>();
    if (t.contains("test_weights_file")) cfg.test_weights_file = resolve(base, t["test_weights_file"].get<std::string>());
    if (cfg.wbar_file && cfg.test_weights_file) {
      throw InputError("truth takes either wbar_file/epsilon or test_weights_file, not both");
    }
  }
  if (j.contains("seed")) cfg.seed = parse_seed(j["seed"]);
  if (j.contains("output_dir")) cfg.output_dir = resolve(base, j["output_dir"].get<std::string>());
  if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
  if (j.contains("oracle")) {
    const auto& o = j["oracle"];
    reject_unknown(o, {"J", "mc_draws", "gamma_mode", "perturbation", "ladder"}, "oracle");
    if (o.contains("J")) cfg.oracle.J = o["J"].get<Index>();
    if (o.contains("mc_draws")) cfg.oracle.mc_draws = o["mc_draws"].get<int>();
    if (o.contains("gamma_mode")) {
      const auto m = o["gamma_mode"].get<std::string>();
      if (m != "working" && m != "zero") throw InputError("oracle.gamma_mode must be working or zero");
      cfg.oracle.gamma_mode = m == "working" ? OracleGamma::working : OracleGamma::zero;
    }
    if (o.contains("perturbation")) cfg.oracle.perturbation = o["perturbation"].get<bool>();
    if (o.contains("ladder")) cfg.oracle.ladder = o["ladder"].get<std::vector<double>>();
  }
  if (j.contains("transform")) {
    const auto& t = j["transform"];
    reject_unknown(t, {"model_file", "query_file", "reference_embedding", "domain", "k_neighbors"}, "transform");
    if (t.contains("model_file")) cfg.transform.model_file = resolve(base, t["model_file"].get<std::string>());
    if (t.contains("query_file")) cfg.transform.query_file = resolve(base, t["query_file"].get<std::string>());
    if (t.contains("reference_embedding")) {
      cfg.transform.reference_embedding = resolve(base, t["reference_embedding"].get<std::string>());
    }
    if (t.contains("domain")) {
      cfg.transform.domain = t["domain"].is_string() ? t["domain"].get<std::string>()
                                                     : std::to_string(t["domain"].get<Index>());
    }
    if (t.contains("k_neighbors")) cfg.transform.k_neighbors = t["k_neighbors"].get<Index>();
  }
  if (j.contains("simulation")) cfg.simulation = parse_simulation(j["simulation"]);
}

// ---------------------------------------------------------------------------
// Output helpers

std::string num(double x) {
  if (!std::isfinite(x)) return "";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_lambdas(const fs::path& path, const Eigen::VectorXd& lambdas) {
  auto out = open_out(path);
  out << "k,lambda\n";
  for (Index k = 0; k < lambdas.size(); ++k) out << k + 1 << ',' << num(lambdas[k]) << '\n';
}

void write_embedding(const fs::path& path, const Eigen::MatrixXd& Y, const DomainLayout& layout) {
  auto out = open_out(path);
  out << "node,domain";
  for (Index k = 0; k < Y.cols(); ++k) out << ",y" << k + 1;
  out << '\n';
  for (Index i = 0; i < Y.rows(); ++i) {
    out << i << ',' << layout.domain_of_row(i);
    for (Index k = 0; k < Y.cols(); ++k) out << ',' << num(Y(i, k));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Shared command plumbing

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

RunConfig prepare(const Overrides& o, bool config_required) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
  } else if (config_required) {
    throw InputError("--config is required for this command");
  } else {
    cfg.base_dir = fs::current_path();
  }
  if (o.seed) cfg.seed = o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.threads) cfg.threads = *o.threads;
  if (cfg.threads < 1) throw InputError("--threads must be at least 1");
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::uint64_t require_seed(const RunConfig& cfg, const char* command) {
  if (!cfg.seed) throw InputError(std::string(command) + " is randomized and needs an explicit seed (--seed or config)");
  return *cfg.seed;
}

SymWeights load_weights(const fs::path& path, Index n) {
  if (path.empty()) throw InputError("config has no weights_file");
  return read_weights(path, n);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const MultiDomainData data = load_data(cfg);
  const SymWeights w = load_weights(cfg.weights_file, data.rows());
  if (cfg.gamma_M.size() != 1) err << "note: fit uses the first gamma_M value (" << cfg.gamma_M.front() << ")\n";
  const Regularizer reg = make_regularizer(cfg, data, w).with_gammas(cfg.gamma_M.front(), cfg.gamma_W);
  FitOptions opts{cfg.rescale_mode, cfg.center, cfg.K, true};
  const FitResult f = fit(data, w, reg, opts);
  if (f.model.zero_gamma_substituted) {
    err << "warning: gamma_M = 0 was replaced by " << kZeroGammaSubstitute << " to keep G positive definite\n";
  }
  save_model(cfg.output_dir / "model.json", f.model);
  write_lambdas(cfg.output_dir / "lambdas.csv", f.model.lambdas);
  write_embedding(cfg.output_dir / "embedding.csv", f.Y, f.model.layout);
  const auto degenerate = std::count(f.model.degenerate.begin(), f.model.degenerate.end(), true);
  out << "P = " << data.cols() << ", N = " << data.rows() << ", links = " << w.nnz() << '\n';
  out << "gamma_M = " << f.model.reg.gamma_M << ", gamma_W = " << f.model.reg.gamma_W << '\n';
  out << "K+ = " << f.model.K_plus << ", K = " << f.model.K;
  if (degenerate) out << " (" << degenerate << " degenerate)";
  out << '\n';
  return 0;
}

int cmd_errors(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const MultiDomainData data = load_data(cfg);
  const SymWeights w = load_weights(cfg.weights_file, data.rows());
  CvConfig cv = cfg.cv;
  cv.seed = require_seed(cfg, "errors");
  cv.threads = cfg.threads;
  if (cfg.gamma_M.empty()) throw InputError("gamma_M grid is empty");
  const Regularizer reg = make_regularizer(cfg, data, w);
  std::vector<std::pair<double, double>> grid;
  for (double g : cfg.gamma_M) grid.emplace_back(g, cfg.gamma_W);
  TruthSpec truth;
  if (cfg.wbar_file) {
    truth.wbar = read_weights(*cfg.wbar_file, data.rows());
    truth.epsilon = cfg.epsilon;
  } else if (cfg.test_weights_file) {
    truth.test = read_weights(*cfg.test_weights_file, data.rows());
  }
  FitOptions opts{cfg.rescale_mode, cfg.center, cfg.K, true};
  const ErrorReport report = error_curve(data, w, reg, grid, opts, cv, truth, cfg.error_scale);
  write_error_csv(cfg.output_dir / "errors.csv", report);
  if (!report.failures.empty()) {
    write_failures_csv(cfg.output_dir / "failures.csv", report);
    for (const auto& f : report.failures) {
      err << "grid point gamma_M = " << f.gamma_M << " failed: " << f.message << '\n';
    }
  }
  if (std::any_of(cfg.gamma_M.begin(), cfg.gamma_M.end(), [](double g) { return g == 0.0; }) &&
      cfg.regularizer != RegularizerKind::none) {
    err << "warning: gamma_M = 0 was replaced by " << kZeroGammaSubstitute << '\n';
  }
  out << "wrote " << report.rows.size() << " rows (" << grid.size() << " grid points, "
      << cv.replicates << " replicates, scale " << to_string(cfg.error_scale) << ")\n";
  return report.failures.size() == grid.size() ? 2 : 0;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  SimulationSettings s = cfg.simulation.value_or(SimulationSettings{});
  s.sim.seed = require_seed(cfg, "simulate");
  const SimData sim = generate(s.sim);
  Rng rng(s.sim.seed, 4);
  const SymWeights w = sample(sim.wbar, s.scheme, s.prob, rng);
  const fs::path dir = cfg.output_dir;

  Json domains = Json::array();
  for (Index d = 0; d < sim.data.layout.domains(); ++d) {
    const std::string file = "domain_" + std::to_string(d + 1) + ".csv";
    write_matrix_csv(dir / file, sim.data.blocks[static_cast<std::size_t>(d)]);
    domains.push_back({{"name", "domain_" + std::to_string(d + 1)}, {"file", file}, {"p", sim.data.layout.dim(d)}});
  }
  write_weights(dir / "wbar.txt", sim.wbar);
  write_weights(dir / "w.txt", w);
  {
    auto g = open_out(dir / "grid.csv");
    g << "node,domain,grid_point\n";
    for (Index i = 0; i < sim.data.rows(); ++i) {
      g << i << ',' << sim.data.layout.domain_of_row(i) << ',' << sim.grid_of(i) << '\n';
    }
  }

  const Json sim_json = {{"dims", s.sim.dims},
                         {"counts", s.sim.counts},
                         {"grid_side", s.sim.grid_side},
                         {"noise_sd", s.sim.noise_sd},
                         {"weight_kind", to_string(s.sim.weight_kind)},
                         {"powerlaw_exponent", s.sim.powerlaw_exponent},
                         {"sampling", {{"scheme", to_string(s.scheme)}, {"prob", s.prob}}}};
  Json manifest = {{"simulation", sim_json},
                   {"seed", s.sim.seed},
                   {"per_point_counts", sim.per_point},
                   {"wbar_links", sim.wbar.nnz()},
                   {"sampled_links", w.nnz()},
                   {"files", {{"wbar", "wbar.txt"}, {"w", "w.txt"}, {"grid", "grid.csv"}}}};
  open_out(dir / "manifest.json") << manifest.dump(2) << '\n';

  const double eps = effective_sampling_prob(s.scheme, s.prob);
  Json config = {{"domains", domains},
                 {"weights_file", "w.txt"},
                 {"gamma_M", {0.001, 0.01, 0.1, 1.0}},
                 {"gamma_W", 0.0},
                 {"rescale_mode", "weighted"},
                 {"regularizer", "domain"},
                 {"cv", {{"scheme", to_string(s.scheme)},
                         {"prob", s.scheme == Scheme::link ? 0.1 : kDefaultNodeResampleProb},
                         {"replicates", 30}}},
                 {"truth", {{"wbar_file", "wbar.txt"}, {"epsilon", eps}}},
                 {"seed", s.sim.seed},
                 {"output_dir", "."}};
  open_out(dir / "config.json") << config.dump(2) << '\n';
  out << "wrote " << sim.data.layout.domains() << " domains, " << sim.wbar.nnz() << " true links, "
      << w.nnz() << " sampled links to " << dir.string() << '\n';
  return 0;
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const MultiDomainData data = load_data(cfg);
  if (!cfg.wbar_file) throw InputError("oracle needs truth.wbar_file and truth.epsilon");
  const double eps = cfg.epsilon;
  if (!(eps > 0.0 && eps <= 1.0)) throw InputError("oracle needs truth.epsilon in (0, 1]");
  const SymWeights wbar = read_weights(*cfg.wbar_file, data.rows());
  const SymWeights ref = wbar.scaled(eps);
  const CenteredData c = cfg.center ? center(data, degree(ref), cfg.rescale_mode)
                                    : CenteredData{data, std::vector<Eigen::RowVectorXd>(data.blocks.size())};
  Regularizer reg = make_regularizer(cfg, c.data, ref).with_gammas(cfg.gamma_M.front(), cfg.gamma_W);

  BiasOracleReport report = bias_oracle(c.data, wbar, eps, reg, cfg.oracle.J, cfg.oracle.gamma_mode);
  if (cfg.oracle.mc_draws > 0) {
    const auto mc = monte_carlo_bias(c.data, wbar, eps, reg, report.bias.size(), cfg.oracle.mc_draws,
                                     require_seed(cfg, "oracle with mc_draws"), cfg.threads);
    report.mc_bias = mc.mean;
    report.mc_se = mc.se;
    report.mc_draws = mc.draws;
  }
  write_bias_csv(cfg.output_dir / "bias.csv", report);
  out << "bias oracle: J = " << report.bias.size() << ", eps = " << eps << '\n';

  if (cfg.oracle.perturbation) {
    const SymWeights w = load_weights(cfg.weights_file, data.rows());
    const CenteredData cw = cfg.center ? center(data, degree(w), cfg.rescale_mode) : CenteredData{data, {}};
    const Regularizer dir = make_regularizer(cfg, cw.data, w);
    const Index P = data.cols();
    Eigen::MatrixXd dG0 = dir.L_M, dH0 = dir.L_W;
    if (dG0.isZero(0.0) && dH0.isZero(0.0)) dG0 = Eigen::MatrixXd::Identity(P, P);
    const Index J = cfg.oracle.J > 0 ? cfg.oracle.J : std::min<Index>(5, P);
    const PerturbationReport pr = perturbation_check(cw.data, w, dG0, dH0, cfg.oracle.ladder, J);
    const FitExpansionReport fe = fit_expansion_check(cw.data, w, dG0, dH0, cfg.oracle.ladder, 1);
    write_perturbation_csv(cfg.output_dir / "perturbation.csv", pr, &fe);
    write_slopes_csv(cfg.output_dir / "slopes.csv", pr, &fe);
    out << "perturbation slopes: dlambda " << pr.slope_dlambda << ", c_ij " << pr.slope_cij << ", phi_fit "
        << fe.slope << '\n';
  }
  return 0;
}

Index resolve_domain(const RunConfig& cfg, const std::string& domain, const DomainLayout& layout) {
  if (domain.empty()) throw InputError("transform needs a domain (--domain)");
  for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
    if (cfg.domains[d].name == domain) return static_cast<Index>(d);
  }
  Index d = -1;
  try {
    std::size_t used = 0;
    d = std::stoll(domain, &used);
    if (used != domain.size()) d = -1;
  } catch (const std::exception&) {
  }
  if (d < 0 || d >= layout.domains()) throw InputError("unknown domain '" + domain + "'");
  return d;
}

int cmd_transform(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto& t = cfg.transform;
  if (t.model_file.empty()) throw InputError("transform needs a model file (--model)");
  if (t.query_file.empty()) throw InputError("transform needs a query file (--query)");
  if (t.k_neighbors < 0) throw InputError("k_neighbors must be nonnegative");
  const McaModel model = load_model(t.model_file);
  const Index d = resolve_domain(cfg, t.domain, model.layout);
  const Eigen::MatrixXd query = read_matrix_csv(t.query_file, model.layout.dim(d));
  const Eigen::MatrixXd Z = model.transform(query, d);
  {
    auto c = open_out(cfg.output_dir / "coords.csv");
    c << "query";
    for (Index k = 0; k < Z.cols(); ++k) c << ",y" << k + 1;
    c << '\n';
    for (Index q = 0; q < Z.rows(); ++q) {
      c << q;
      for (Index k = 0; k < Z.cols(); ++k) c << ',' << num(Z(q, k));
      c << '\n';
    }
  }
  out << "embedded " << Z.rows() << " vectors from domain " << d << " into " << Z.cols() << " dimensions\n";
  if (t.k_neighbors == 0) return 0;

  const fs::path ref_path =
      t.reference_embedding.empty() ? t.model_file.parent_path() / "embedding.csv" : t.reference_embedding;
  const Eigen::MatrixXd ref = read_matrix_csv(ref_path, 2 + model.K);
  std::vector<Index> candidates;
  for (Index r = 0; r < ref.rows(); ++r) {
    if (static_cast<Index>(ref(r, 1)) != d) candidates.push_back(r);
  }
  const Index k = std::min<Index>(t.k_neighbors, static_cast<Index>(candidates.size()));
  auto n = open_out(cfg.output_dir / "neighbors.csv");
  n << "query,rank,node,domain,distance\n";
  std::vector<std::pair<double, Index>> dist(candidates.size());
  for (Index q = 0; q < Z.rows(); ++q) {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const Index r = candidates[c];
      dist[c] = {(ref.row(r).tail(model.K) - Z.row(q)).norm(), static_cast<Index>(ref(r, 0))};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (Index rank = 0; rank < k; ++rank) {
      const auto& [dd, node] = dist[static_cast<std::size_t>(rank)];
      n << q << ',' << rank + 1 << ',' << node << ',' << model.layout.domain_of_row(node) << ',' << num(dd) << '\n';
    }
  }
  return 0;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path.string());
  RunConfig cfg;
  cfg.base_dir = fs::absolute(path).parent_path();
  try {
    parse_into(cfg, Json::parse(in, nullptr, true, true));
  } catch (const Json::exception& e) {
    throw InputError("malformed config " + path.string() + ": " + e.what());
  }
  return cfg;
}

MultiDomainData load_data(const RunConfig& cfg) {
  if (cfg.domains.empty()) throw InputError("config lists no domains");
  std::vector<Eigen::MatrixXd> blocks;
  for (const auto& d : cfg.domains) blocks.push_back(read_matrix_csv(d.file, d.p));
  MultiDomainData data(std::move(blocks));
  if (cfg.K > data.cols()) {
    throw InputError("K = " + std::to_string(cfg.K) + " exceeds P = " + std::to_string(data.cols()));
  }
  return data;
}

Regularizer make_regularizer(const RunConfig& cfg, const MultiDomainData& data, const SymWeights& w) {
  const Index P = data.cols();
  switch (cfg.regularizer) {
    case RegularizerKind::none: return Regularizer::none(P);
    case RegularizerKind::identity: {
      Regularizer r = Regularizer::none(P);
      r.L_M = Eigen::MatrixXd::Identity(P, P);
      return r;
    }
    case RegularizerKind::domain: {
      const Eigen::VectorXd m = degree(w);
      if (!cfg.center) return domain_regularizer(data, m);
      return domain_regularizer(center(data, m, cfg.rescale_mode).data, m);
    }
  }
  return Regularizer::none(P);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Matching correlation analysis: fit, error curves, simulation and theory checks"};
  app.require_subcommand(1);
  Overrides o;
  std::uint64_t seed = 0;
  int threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory (overrides the config)");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit at a single (gamma_M, gamma_W) and write the model");
  auto* errors_cmd = app.add_subcommand("errors", "Fitting, cv and true errors over the gamma_M grid");
  auto* sim_cmd = app.add_subcommand("simulate", "Generate the synthetic grid benchmark");
  auto* oracle_cmd = app.add_subcommand("oracle", "Analytic bias and perturbation checks");
  auto* transform_cmd = app.add_subcommand("transform", "Embed new vectors with a fitted model");
  for (auto* s : {fit_cmd, errors_cmd, sim_cmd, oracle_cmd, transform_cmd}) add_common(s);
  Index J = -1;
  oracle_cmd->add_option("--J", J, "Number of components for the bias oracle");
  std::string model, query, domain;
  Index k_neighbors = -1;
  transform_cmd->add_option("--model", model, "Model file written by fit");
  transform_cmd->add_option("--query", query, "CSV of query vectors, one per row");
  transform_cmd->add_option("--domain", domain, "Domain of the query vectors (name or 0-based index)");
  transform_cmd->add_option("--k", k_neighbors, "Nearest cross-domain neighbors to report (0 = none)");
  std::string reference;
  transform_cmd->add_option("--reference", reference, "Reference embedding CSV (default: embedding.csv next to the model)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    if (active->count("--seed")) o.seed = seed;
    if (active->count("--threads")) o.threads = threads;
    if (active == fit_cmd) return cmd_fit(prepare(o, true), out, err);
    if (active == errors_cmd) return cmd_errors(prepare(o, true), out, err);
    if (active == sim_cmd) return cmd_simulate(prepare(o, false), out, err);
    if (active == oracle_cmd) {
      RunConfig cfg = prepare(o, true);
      if (J >= 0) cfg.oracle.J = J;
      return cmd_oracle(cfg, out, err);
    }
    RunConfig cfg = prepare(o, false);
    if (!model.empty()) cfg.transform.model_file = model;
    if (!query.empty()) cfg.transform.query_file = query;
    if (!domain.empty()) cfg.transform.domain = domain;
    if (!reference.empty()) cfg.transform.reference_embedding = reference;
    if (k_neighbors >= 0) cfg.transform.k_neighbors = k_neighbors;
    return cmd_transform(cfg, out, err);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mca::cli
