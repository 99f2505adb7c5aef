#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mca/weights.hpp"

namespace mca {

/// Per-domain dimensions p_d and counts n_d. Global rows are ordered domain
/// by domain, and so are the columns of the augmented coding.
class DomainLayout {
 public:
  DomainLayout() = default;
  DomainLayout(std::vector<Index> dims, std::vector<Index> counts);

  Index domains() const noexcept { return static_cast<Index>(dims_.size()); }
  Index dim(Index d) const { return dims_.at(static_cast<std::size_t>(d)); }
  Index count(Index d) const { return counts_.at(static_cast<std::size_t>(d)); }
  const std::vector<Index>& dims() const noexcept { return dims_; }
  const std::vector<Index>& counts() const noexcept { return counts_; }

  /// P = sum of p_d.
  Index total_dim() const noexcept { return col_offsets_.back(); }
  /// N = sum of n_d.
  Index total_count() const noexcept { return row_offsets_.back(); }

  Index col_offset(Index d) const { return col_offsets_.at(static_cast<std::size_t>(d)); }
  Index row_offset(Index d) const { return row_offsets_.at(static_cast<std::size_t>(d)); }

  /// Domain owning global row i.
  Index domain_of_row(Index i) const;

  friend bool operator==(const DomainLayout&, const DomainLayout&) = default;

 private:
  std::vector<Index> dims_;
  std::vector<Index> counts_;
  std::vector<Index> col_offsets_{0};
  std::vector<Index> row_offsets_{0};
};

/// Block-diagonal data matrix X = Diag(X^(1), ..., X^(D)), stored by block.
struct MultiDomainData {
  DomainLayout layout;
  std::vector<Eigen::MatrixXd> blocks;  // n_d x p_d

  MultiDomainData() = default;
  /// Builds the layout from the block shapes; blocks must be nonempty and finite.
  explicit MultiDomainData(std::vector<Eigen::MatrixXd> blocks);

  Index rows() const noexcept { return layout.total_count(); }
  Index cols() const noexcept { return layout.total_dim(); }
};

/// Weighted: centering and rescaling use m_i. Unweighted: plain counts.
enum class VarianceMode { weighted, unweighted };

VarianceMode parse_variance_mode(const std::string& name);
const char* to_string(VarianceMode mode);

/// Regularization Delta G = gamma_M L_M, Delta H = gamma_W L_W.
struct Regularizer {
  double gamma_M = 0.0;
  double gamma_W = 0.0;
  Eigen::MatrixXd L_M;  // P x P symmetric, block-diagonal by domain
  Eigen::MatrixXd L_W;  // P x P symmetric

  Eigen::MatrixXd delta_G() const { return gamma_M * L_M; }
  Eigen::MatrixXd delta_H() const { return gamma_W * L_W; }

  /// Same matrices, different strengths.
  Regularizer with_gammas(double gm, double gw) const {
    Regularizer r = *this;
    r.gamma_M = gm;
    r.gamma_W = gw;
    return r;
  }

  /// L_M = L_W = 0 on P dimensions.
  static Regularizer none(Index P);
  /// L_M = L_W = I_P.
  static Regularizer identity(Index P, double gamma_M, double gamma_W = 0.0);
};

/// Codes a domain-d vector as a length-P vector that is zero outside the
/// domain's column slot.
Eigen::VectorXd augment(const Eigen::VectorXd& x, Index d, const DomainLayout& layout);

struct CenteredData {
  MultiDomainData data;
  std::vector<Eigen::RowVectorXd> offsets;  // subtracted from each domain's rows
};

/**
 * Centers each domain block. Weighted mode subtracts the m-weighted mean of
 * the block's rows, so that sum_i m_i x_i = 0 for the augmented vectors; a
 * block whose rows all have m_i = 0 is left unchanged. Unweighted mode
 * subtracts the plain column means. Throws InputError in weighted mode when
 * all m_i are zero.
 */
CenteredData center(const MultiDomainData& data, const Eigen::VectorXd& m, VarianceMode mode);

/// Subtracts given per-domain offsets.
MultiDomainData apply_offsets(const MultiDomainData& data,
                              const std::vector<Eigen::RowVectorXd>& offsets);

/// alpha_d = tr(X^(d)T M^(d) X^(d)) / p_d for each domain.
std::vector<double> domain_scales(const MultiDomainData& data, const Eigen::VectorXd& m);

/// L_M = Diag(alpha_1 I, ..., alpha_D I), L_W = 0, gammas zero.
Regularizer domain_regularizer(const MultiDomainData& data, const Eigen::VectorXd& m);

/// Dense N x P block-diagonal matrix. Intended for small problems and tests.
Eigen::MatrixXd assemble(const MultiDomainData& data);

/// Reads a numeric CSV (comma or whitespace separated, optional non-numeric
/// header row, `#` comments) into a matrix. If `expected_cols` is positive
/// every row must have that many values.
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path, Index expected_cols = 0);

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& x);

}  // namespace mca
