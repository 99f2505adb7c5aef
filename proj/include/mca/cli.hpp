#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mca/errors_cv.hpp"
#include "mca/simgen.hpp"
#include "mca/theory_oracles.hpp"

namespace mca::cli {

struct DomainSpec {
  std::string name;
  std::filesystem::path file;
  Index p = 0;
};

/// How L_M and L_W are built: "domain" (alpha_d I per domain, L_W = 0),
/// "identity" (L_M = I, L_W = 0) or "none".
enum class RegularizerKind { domain, identity, none };

struct OracleSettings {
  Index J = 0;
  int mc_draws = 0;
  OracleGamma gamma_mode = OracleGamma::working;
  bool perturbation = false;
  std::vector<double> ladder{0.04, 0.02, 0.01, 0.005, 0.0025, 0.00125};
};

struct TransformSettings {
  std::filesystem::path model_file;
  std::filesystem::path query_file;
  std::filesystem::path reference_embedding;  // defaults to embedding.csv next to the model
  std::string domain;                         // name or 0-based index
  Index k_neighbors = 0;
};

struct SimulationSettings {
  SimConfig sim;
  Scheme scheme = Scheme::link;
  double prob = 0.02;  // eps for link sampling, xi for node sampling
};

/**
 * Run configuration, read from a JSON object. Relative paths are resolved
 * against the directory of the config file. Unknown keys are rejected.
 */
struct RunConfig {
  std::filesystem::path base_dir;
  std::vector<DomainSpec> domains;
  std::filesystem::path weights_file;
  std::vector<double> gamma_M{0.1};
  double gamma_W = 0.0;
  Index K = 0;
  VarianceMode rescale_mode = VarianceMode::weighted;
  bool center = true;
  RegularizerKind regularizer = RegularizerKind::domain;
  ErrorScale error_scale = ErrorScale::fit_weight;
  CvConfig cv;
  bool cv_prob_set = false;
  std::optional<std::filesystem::path> wbar_file;
  double epsilon = 0.0;
  std::optional<std::filesystem::path> test_weights_file;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = ".";
  int threads = 1;
  OracleSettings oracle;
  TransformSettings transform;
  std::optional<SimulationSettings> simulation;
};

RunConfig load_config(const std::filesystem::path& path);

/// Loads the configured domain files in order.
MultiDomainData load_data(const RunConfig& cfg);

/// Builds the configured regularizer (gammas zero) from the data and W.
Regularizer make_regularizer(const RunConfig& cfg, const MultiDomainData& data, const SymWeights& w);

/// Entry point shared by the executable and the tests. Returns the exit
/// code: 0 success, 1 input error, 2 numerical failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mca::cli
