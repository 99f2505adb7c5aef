#include "mca/domains.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mca/error.hpp"

namespace mca {

DomainLayout::DomainLayout(std::vector<Index> dims, std::vector<Index> counts)
    : dims_(std::move(dims)), counts_(std::move(counts)) {
  if (dims_.empty()) throw InputError("layout needs at least one domain");
  if (dims_.size() != counts_.size()) throw InputError("layout dims/counts length mismatch");
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    if (dims_[d] < 1 || counts_[d] < 1) {
      throw InputError("domain " + std::to_string(d) + " needs p_d >= 1 and n_d >= 1");
    }
    col_offsets_.push_back(col_offsets_.back() + dims_[d]);
    row_offsets_.push_back(row_offsets_.back() + counts_[d]);
  }
}

Index DomainLayout::domain_of_row(Index i) const {
  if (i < 0 || i >= total_count()) throw InputError("row index out of range");
  const auto it = std::upper_bound(row_offsets_.begin(), row_offsets_.end(), i);
  return static_cast<Index>(it - row_offsets_.begin()) - 1;
}

MultiDomainData::MultiDomainData(std::vector<Eigen::MatrixXd> b) : blocks(std::move(b)) {
  std::vector<Index> dims, counts;
  for (std::size_t d = 0; d < blocks.size(); ++d) {
    if (!blocks[d].allFinite()) {
      throw InputError("domain " + std::to_string(d) + " contains non-finite values");
    }
    dims.push_back(blocks[d].cols());
    counts.push_back(blocks[d].rows());
  }
  layout = DomainLayout(std::move(dims), std::move(counts));
}

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "weighted") return VarianceMode::weighted;
  if (name == "unweighted") return VarianceMode::unweighted;
  throw InputError("unknown variance mode '" + name + "' (expected weighted or unweighted)");
}

const char* to_string(VarianceMode mode) {
  return mode == VarianceMode::weighted ? "weighted" : "unweighted";
}

Regularizer Regularizer::none(Index P) {
  return {0.0, 0.0, Eigen::MatrixXd::Zero(P, P), Eigen::MatrixXd::Zero(P, P)};
}

Regularizer Regularizer::identity(Index P, double gamma_M, double gamma_W) {
  return {gamma_M, gamma_W, Eigen::MatrixXd::Identity(P, P), Eigen::MatrixXd::Identity(P, P)};
}

Eigen::VectorXd augment(const Eigen::VectorXd& x, Index d, const DomainLayout& layout) {
  if (d < 0 || d >= layout.domains()) throw InputError("domain index out of range");
  if (x.size() != layout.dim(d)) {
    throw InputError("vector of length " + std::to_string(x.size()) + " does not match p_" +
                     std::to_string(d) + " = " + std::to_string(layout.dim(d)));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(layout.total_dim());
  out.segment(layout.col_offset(d), layout.dim(d)) = x;
  return out;
}

CenteredData center(const MultiDomainData& data, const Eigen::VectorXd& m, VarianceMode mode) {
  if (m.size() != data.rows()) throw InputError("degree vector length does not match N");
  if (mode == VarianceMode::weighted && !(m.sum() > 0.0)) {
    throw InputError("weighted centering needs a nonzero weight total");
  }
  CenteredData out{data, {}};
  const auto& layout = data.layout;
  for (Index d = 0; d < layout.domains(); ++d) {
    auto& block = out.data.blocks[static_cast<std::size_t>(d)];
    Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(block.cols());
    if (mode == VarianceMode::weighted) {
      const auto md = m.segment(layout.row_offset(d), layout.count(d));
      const double total = md.sum();
      if (total > 0.0) offset = (md.transpose() * block) / total;
    } else {
      offset = block.colwise().mean();
    }
    block.rowwise() -= offset;
    out.offsets.push_back(std::move(offset));
  }
  return out;
}

MultiDomainData apply_offsets(const MultiDomainData& data,
                              const std::vector<Eigen::RowVectorXd>& offsets) {
  if (offsets.size() != data.blocks.size()) throw InputError("offset count does not match domains");
  MultiDomainData out = data;
  for (std::size_t d = 0; d < offsets.size(); ++d) {
    if (offsets[d].size() != out.blocks[d].cols()) throw InputError("offset length mismatch");
    out.blocks[d].rowwise() -= offsets[d];
  }
  return out;
}

std::vector<double> domain_scales(const MultiDomainData& data, const Eigen::VectorXd& m) {
  if (m.size() != data.rows()) throw InputError("degree vector length does not match N");
  const auto& layout = data.layout;
  std::vector<double> alpha;
  for (Index d = 0; d < layout.domains(); ++d) {
    const auto& block = data.blocks[static_cast<std::size_t>(d)];
    const auto md = m.segment(layout.row_offset(d), layout.count(d));
    // tr(X^T M X) = sum_i m_i |x_i|^2
    const double trace = md.dot(block.rowwise().squaredNorm());
    alpha.push_back(trace / static_cast<double>(layout.dim(d)));
  }
  return alpha;
}

Regularizer domain_regularizer(const MultiDomainData& data, const Eigen::VectorXd& m) {
  const auto& layout = data.layout;
  const Index P = layout.total_dim();
  Regularizer reg = Regularizer::none(P);
  const auto alpha = domain_scales(data, m);
  for (Index d = 0; d < layout.domains(); ++d) {
    const Index off = layout.col_offset(d);
    for (Index c = 0; c < layout.dim(d); ++c) reg.L_M(off + c, off + c) = alpha[d];
  }
  return reg;
}

Eigen::MatrixXd assemble(const MultiDomainData& data) {
  const auto& layout = data.layout;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(layout.total_count(), layout.total_dim());
  for (Index d = 0; d < layout.domains(); ++d) {
    x.block(layout.row_offset(d), layout.col_offset(d), layout.count(d), layout.dim(d)) =
        data.blocks[static_cast<std::size_t>(d)];
  }
  return x;
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path, Index expected_cols) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file: " + path.string());
  std::vector<double> values;
  Index cols = -1;
  Index rows = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    bool numeric = true;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (row.empty() && numeric) continue;
    if (!numeric) {
      if (rows == 0 && values.empty()) continue;  // header row
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    const auto width = static_cast<Index>(row.size());
    if (cols < 0) cols = width;
    if (width != cols) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(cols) + " values, found " + std::to_string(width));
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw InputError("data file has no rows: " + path.string());
  if (expected_cols > 0 && cols != expected_cols) {
    throw InputError(path.string() + ": expected " + std::to_string(expected_cols) +
                     " columns, found " + std::to_string(cols));
  }
  return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, cols);
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& x) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write data file: " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) out << (c ? "," : "") << x(r, c);
    out << '\n';
  }
}

}  // namespace mca
