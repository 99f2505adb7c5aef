#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "mca/mca_core.hpp"

namespace mca {

/// Relative eigen-gap below which the perturbation formulas are refused.
inline constexpr double kGapTolerance = 1e-9;

/// Throws NumericalError naming the first pair (i, j), 1-based, with i <= J,
/// j != i and |lambda_i - lambda_j| < tol * max|lambda|.
void require_eigen_gaps(const Eigen::VectorXd& lambdas, Index J, double tol = kGapTolerance);

/// Whether the reference fit on eps Wbar keeps the working regularization or
/// drops it (gamma = 0).
enum class OracleGamma { working, zero };

struct BiasOracleReport {
  double epsilon = 0.0;
  Eigen::VectorXd lambda_bar;  // eigenvalues of the eps Wbar fit, first J
  Eigen::VectorXd bias;        // analytic bias_k, k = 1..J
  Eigen::VectorXd mc_bias;     // empty unless a Monte Carlo run was attached
  Eigen::VectorXd mc_se;
  int mc_draws = 0;
};

/**
 * Analytic bias of the fitting error. Solves the problem on eps * Wbar (no
 * rescaling, Ybar = X Abar) and, for each stored entry (l, m) of Wbar, forms
 * the coefficients of g-hat and h-hat:
 *   G^{ij}_{lm} = y_li y_lj + y_mi y_mj,  H^{ij}_{lm} = y_li y_mj + y_mi y_lj  (l != m)
 *   G^{ij}_{ll} = H^{ij}_{ll} = y_li y_lj.
 * bias_k = eps (1 - eps) sum_{l>=m} wbar_lm^2 [ -(G^{kk} - H^{kk}) G^{kk}
 *          + sum_{j != k} 2 (lambda_j - lambda_k)^{-1} (G^{jk} - H^{jk}) (G^{jk} lambda_k - H^{jk}) ].
 * `data` is used as given (center it beforehand). J = 0 selects min(5, K+).
 */
BiasOracleReport bias_oracle(const MultiDomainData& data, const SymWeights& wbar, double eps,
                             const Regularizer& reg, Index J = 0, OracleGamma mode = OracleGamma::working);

/// Ybar and lambda-bar of the eps * Wbar reference fit used by bias_oracle.
struct ReferenceFit {
  Eigen::MatrixXd Ybar;  // N x P
  Eigen::VectorXd lambdas;
};
ReferenceFit reference_fit(const MultiDomainData& data, const SymWeights& wbar, double eps,
                           const Regularizer& reg, OracleGamma mode = OracleGamma::working);

/// Monte Carlo mean and standard error of phi_fit - phi_true (y^T M y = 1
/// convention) over link-sampled draws of W from Wbar, for k = 1..J. The data
/// and the regularizer are held fixed (no per-draw centering). Draw r uses
/// derive_seed(seed, r). Draws whose fit fails are skipped.
struct MonteCarloBias {
  Eigen::VectorXd mean;
  Eigen::VectorXd se;
  int draws = 0;
  int failed = 0;
};
MonteCarloBias monte_carlo_bias(const MultiDomainData& data, const SymWeights& wbar, double eps,
                                const Regularizer& reg, Index J, int draws, std::uint64_t seed,
                                int threads = 1);

struct PerturbationRung {
  double gamma = 0.0;
  Eigen::VectorXd dlambda_pred;  // J
  Eigen::VectorXd dlambda_exact;
  Eigen::MatrixXd C_pred;  // P x J
  Eigen::MatrixXd C_exact;
  double residual_dlambda = 0.0;  // max_i<=J |exact - predicted|
  double residual_cii = 0.0;
  double residual_cij = 0.0;
};

struct PerturbationReport {
  Eigen::VectorXd lambda_hat;
  std::vector<PerturbationRung> rungs;
  double slope_dlambda = 0.0;
  double slope_cii = 0.0;
  double slope_cij = 0.0;
};

/**
 * First-order eigen-perturbation check. The base problem is (X^T M X, X^T W X)
 * with no regularization; rung gamma adds gamma * dG0 and gamma * dH0. With
 * g = Ahat^T dG Ahat and h = Ahat^T dH Ahat the predictions are
 *   dlambda_i = -(g_ii lambda_i - h_ii),  c_ii = -g_ii / 2,
 *   c_ij = (lambda_i - lambda_j)^{-1} (g_ij lambda_j - h_ij),
 * compared against C = Ahat^{-1} A - I from an exact re-solve (columns of A
 * sign-aligned with Ahat). Slopes are least-squares fits of log residual on
 * log gamma over positive rungs with a nonzero residual.
 */
PerturbationReport perturbation_check(const MultiDomainData& data, const SymWeights& w,
                                      const Eigen::MatrixXd& dG0, const Eigen::MatrixXd& dH0,
                                      const std::vector<double>& ladder, Index J);

struct FitExpansionRung {
  double gamma = 0.0;
  double exact = 0.0;
  double predicted = 0.0;
  double residual = 0.0;
};

struct FitExpansionReport {
  Index k = 0;  // 1-based
  std::vector<FitExpansionRung> rungs;
  double slope = 0.0;
};

/**
 * Fitting-error expansion check for component k (1-based): the exact
 * phi_k^fit under y^T M y = 1 at each rung against
 *   1 - lambda_k - sum_{i != k} (lambda_i - lambda_k)^{-1} (g_ik lambda_k - h_ik)^2
 * evaluated from the unregularized base.
 */
FitExpansionReport fit_expansion_check(const MultiDomainData& data, const SymWeights& w,
                                       const Eigen::MatrixXd& dG0, const Eigen::MatrixXd& dH0,
                                       const std::vector<double>& ladder, Index k);

/// Least-squares slope of log(y) on log(x) over pairs with x, y > 0.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

void write_bias_csv(const std::filesystem::path& path, const BiasOracleReport& report);
/// One row per rung; the fit expansion columns are filled when `expansion`
/// was run on the same ladder.
void write_perturbation_csv(const std::filesystem::path& path, const PerturbationReport& report,
                            const FitExpansionReport* expansion = nullptr);
/// quantity,slope rows for the fitted residual slopes.
void write_slopes_csv(const std::filesystem::path& path, const PerturbationReport& report,
                      const FitExpansionReport* expansion = nullptr);

}  // namespace mca
