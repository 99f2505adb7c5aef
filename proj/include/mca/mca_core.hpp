#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mca/domains.hpp"
#include "mca/weights.hpp"

namespace mca {

/// G = X^T M X + gamma_M L_M and H = X^T W X + gamma_W L_W.
struct GramPair {
  Eigen::MatrixXd G;
  Eigen::MatrixXd H;
};

/// X^T M X for a degree vector m. Block-diagonal by domain; only rows with
/// m_i != 0 are touched.
Eigen::MatrixXd weighted_gram(const MultiDomainData& data, const Eigen::VectorXd& m);

/// X^T X (block-diagonal by domain).
Eigen::MatrixXd plain_gram(const MultiDomainData& data);

/// X^T W X, accumulated over the stored entries of W.
Eigen::MatrixXd cross_gram(const MultiDomainData& data, const SymWeights& w);

GramPair build_gram(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg);

/// All P generalized eigenpairs, eigenvalues in descending order.
struct EigenSolution {
  Eigen::MatrixXd A;        // P x P, columns a^k with A^T G A = I
  Eigen::VectorXd lambdas;  // descending
};

/// Relative threshold below which an eigenvalue of G counts as singular.
inline constexpr double kSingularTolerance = 1e-12;

/**
 * Solves H a = lambda G a through the symmetric inverse square root of G:
 * the eigenvectors u_k of G^{-1/2} H G^{-1/2} give A = G^{-1/2} U. Each u_k
 * has its first nonzero coordinate positive. Throws NumericalError, naming
 * the smallest eigenvalue of G, when G is not positive definite.
 */
EigenSolution solve(const GramPair& gp);

/// Same as solve(gp), but computes G^{-1/2} block by block when G has no
/// coupling between the domains of `layout`.
EigenSolution solve(const GramPair& gp, const DomainLayout& layout);

/// Symmetric inverse square root G^{-1/2}, dense.
Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& G);

struct Rescaling {
  Eigen::VectorXd b;             // K factors; 0 for degenerate components
  std::vector<bool> degenerate;  // normalizer vanished
};

/**
 * b_k = sqrt(total / a^kT Q a^k) for the first K columns of A. With Q = X^T M X
 * and total = sum m_i this is the weighted convention; with Q = X^T X and
 * total = N the unweighted one. A component whose quadratic form is zero up
 * to rounding is marked degenerate and gets b_k = 0.
 */
Rescaling rescale(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q, double total, Index K);

/// Y = X A_K B, N x K, computed block by block.
Eigen::MatrixXd embed(const MultiDomainData& data, const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

/**
 * phi_k = 1/2 sum_ij w_ij (y_ik - y_jk)^2 = y^kT (M - W) y^k for every column
 * of Y. With `normalize` the result is divided by the degree total of `w`;
 * throws InputError if that total is zero.
 */
Eigen::VectorXd matching_error(const Eigen::MatrixXd& Y, const SymWeights& w, bool normalize = false);

/// K x K matrix of y^kT W y^l.
Eigen::MatrixXd matching_correlation(const Eigen::MatrixXd& Y, const SymWeights& w);

/// 1/2 sum_ij w_ij (x_i + x_j)(x_i + x_j)^T over augmented vectors.
Eigen::MatrixXd omega(const MultiDomainData& data, const SymWeights& w);

/// Value used in place of gamma_M = 0 when substitution is enabled.
inline constexpr double kZeroGammaSubstitute = 1e-6;

struct FitOptions {
  VarianceMode variance = VarianceMode::weighted;
  bool center = true;
  Index K = 0;  // 0 selects K+ (at least one component)
  bool substitute_zero_gamma = true;
};

inline constexpr int kModelFormatVersion = 1;

struct McaModel {
  DomainLayout layout;
  Eigen::MatrixXd A;        // P x P
  Eigen::VectorXd lambdas;  // P, descending
  Index K = 0;
  Index K_plus = 0;
  Eigen::VectorXd b;  // K
  std::vector<bool> degenerate;
  Regularizer reg;  // effective regularization
  double requested_gamma_M = 0.0;
  bool zero_gamma_substituted = false;
  bool centered = true;
  std::vector<Eigen::RowVectorXd> offsets;
  VarianceMode variance = VarianceMode::weighted;
  double weight_total = 0.0;  // sum of m_i of the fit weights
  Index nodes = 0;            // N of the training data

  /// Embeds rows of a domain-d matrix (one vector per row): subtract the
  /// stored offset, multiply by the domain's rows of A_K, then by B.
  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows, Index d) const;
};

/// Regularizer actually used by fit(): gamma_M = 0 becomes 1e-6 when
/// substitution is enabled and L_M is nonzero.
Regularizer effective_regularizer(const Regularizer& reg, bool substitute, bool* substituted = nullptr);

struct FitResult {
  McaModel model;
  Eigen::MatrixXd Y;  // N x K training embedding
};

/// Fits on data that is already centered (offsets are recorded as given).
/// `XtX` may carry a precomputed X^T X for the unweighted convention.
FitResult fit_centered(const MultiDomainData& centered, const std::vector<Eigen::RowVectorXd>& offsets,
                       const SymWeights& w, const Regularizer& reg, const FitOptions& options,
                       const Eigen::MatrixXd* XtX = nullptr);

/// Centers (if requested), solves, rescales and embeds.
FitResult fit(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
              const FitOptions& options = {});

/// Largest absolute entries of A^T G A - I and A^T H A - Lambda over all P columns.
struct ConstraintResiduals {
  double g = 0.0;
  double h = 0.0;
};
ConstraintResiduals constraint_residuals(const GramPair& gp, const EigenSolution& sol);

void save_model(const std::filesystem::path& path, const McaModel& model);
McaModel load_model(const std::filesystem::path& path);

}  // namespace mca
