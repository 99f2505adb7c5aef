#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mca/mca_core.hpp"

namespace mca {

/**
 * How a reported matching error is scaled.
 *
 * `fit_weight` divides by the degree total of the weights the embedding was
 * fitted on, which is the same as evaluating phi under y^T M y = 1. For cv
 * replicates that total belongs to the rescaled training part. `eval_weight`
 * divides by the degree total of the evaluation weights. `raw` applies no
 * division.
 */
enum class ErrorScale { raw, fit_weight, eval_weight };

ErrorScale parse_error_scale(const std::string& name);
const char* to_string(ErrorScale scale);

struct CvConfig {
  Scheme scheme = Scheme::link;
  double prob = 0.1;  // kappa for link resampling, nu for node resampling
  int replicates = 30;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Default node resampling probability.
inline constexpr double kDefaultNodeResampleProb = 0.05;

/// Applies `scale` to raw errors `phi` of a fit with degree total `fit_total`
/// evaluated against `eval`.
Eigen::VectorXd scale_errors(const Eigen::VectorXd& phi, ErrorScale scale, double fit_total,
                             const SymWeights& eval);

/// phi_k(W, W) for a fit on W. Degenerate components are NaN.
Eigen::VectorXd fit_error(const FitResult& fit, const SymWeights& w, ErrorScale scale = ErrorScale::fit_weight);

/// phi_k(W, eps Wbar). Throws InputError for eps <= 0.
Eigen::VectorXd true_error(const FitResult& fit, const SymWeights& wbar, double eps,
                           ErrorScale scale = ErrorScale::fit_weight);

/// phi_k(W, W_test), always divided by the degree total of W_test.
Eigen::VectorXd test_error(const FitResult& fit, const SymWeights& w_test);

/**
 * Error of one resampling split: refits on (1 - kappa)^{-1} W_train with the
 * given centering and evaluates against kappa^{-1} W_test. Returns nullopt
 * when either part is empty.
 */
std::optional<Eigen::VectorXd> split_error(const MultiDomainData& centered,
                                           const std::vector<Eigen::RowVectorXd>& offsets,
                                           const WeightSplit& split, const Regularizer& reg,
                                           const FitOptions& options, ErrorScale scale,
                                           const Eigen::MatrixXd* XtX = nullptr);

struct CvResult {
  Eigen::VectorXd mean;  // per component, over used replicates
  Eigen::VectorXd se;    // standard error of the mean (NaN with one replicate)
  int used = 0;
  int skipped = 0;
};

/**
 * Cross-validation error by resampling W. Centering comes from the fit on
 * the full W and is kept fixed for every replicate. Replicate r draws its
 * split from stream r of the configured seed, so the result does not depend
 * on thread count. Replicates with an empty part are skipped and counted;
 * throws NumericalError if every replicate is skipped. `options.K` must be
 * positive.
 */
CvResult cv_error(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
                  const FitOptions& options, const CvConfig& cv, ErrorScale scale = ErrorScale::fit_weight);

/// Optional reference for the true error: either (Wbar, eps) or test weights.
struct TruthSpec {
  std::optional<SymWeights> wbar;
  double epsilon = 0.0;
  std::optional<SymWeights> test;
};

struct ErrorRow {
  double gamma_M = 0.0;  // effective value
  double gamma_W = 0.0;
  Index k = 0;  // 1-based
  double lambda = 0.0;
  double phi_fit = 0.0;
  double phi_cv = 0.0;
  double phi_cv_se = 0.0;
  std::optional<double> phi_true;
  int skipped_replicates = 0;
};

struct GridFailure {
  double gamma_M = 0.0;
  double gamma_W = 0.0;
  std::string message;
};

struct ErrorReport {
  std::vector<ErrorRow> rows;
  std::vector<GridFailure> failures;
  int replicates = 0;
  ErrorScale scale = ErrorScale::fit_weight;
};

/// Runs fit, fit error, cv error and (when `truth` has data) true error at
/// every (gamma_M, gamma_W) grid point. A failing grid point is recorded in
/// `failures` and the run continues. NaN entries mark degenerate components.
ErrorReport error_curve(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
                        const std::vector<std::pair<double, double>>& grid, const FitOptions& options,
                        const CvConfig& cv, const TruthSpec& truth = {},
                        ErrorScale scale = ErrorScale::fit_weight);

inline constexpr const char* kErrorCsvHeader =
    "gamma_M,gamma_W,k,lambda,phi_fit,phi_cv,phi_cv_se,phi_true,skipped_replicates";

void write_error_csv(const std::filesystem::path& path, const ErrorReport& report);
void write_failures_csv(const std::filesystem::path& path, const ErrorReport& report);

}  // namespace mca
