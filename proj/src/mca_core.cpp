#include "mca/mca_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mca/error.hpp"

namespace mca {

namespace {

using Json = nlohmann::json;

void check_shapes(const MultiDomainData& data, const SymWeights& w) {
  if (w.size() != data.rows()) {
    throw InputError("weight matrix has N = " + std::to_string(w.size()) + " but data has " +
                     std::to_string(data.rows()) + " rows");
  }
}

void check_regularizer(const Regularizer& reg, Index P) {
  if (reg.L_M.rows() != P || reg.L_M.cols() != P || reg.L_W.rows() != P || reg.L_W.cols() != P) {
    throw InputError("regularizer matrices must be " + std::to_string(P) + " x " + std::to_string(P));
  }
  if (!std::isfinite(reg.gamma_M) || !std::isfinite(reg.gamma_W)) {
    throw InputError("regularization strengths must be finite");
  }
}

// Row i of the augmented data restricted to its domain slot.
struct RowRef {
  Index domain;
  Index local;
};

RowRef locate(const DomainLayout& layout, Index i) {
  const Index d = layout.domain_of_row(i);
  return {d, i - layout.row_offset(d)};
}

// Flips each column so that its first coordinate that is clearly nonzero is positive.
void fix_signs(Eigen::MatrixXd& U) {
  for (Index k = 0; k < U.cols(); ++k) {
    const double scale = U.col(k).cwiseAbs().maxCoeff();
    for (Index r = 0; r < U.rows(); ++r) {
      if (std::abs(U(r, k)) > 1e-10 * scale) {
        if (U(r, k) < 0.0) U.col(k) = -U.col(k);
        break;
      }
    }
  }
}

[[noreturn]] void throw_singular(double smallest, double largest) {
  std::ostringstream os;
  os << "G is not positive definite: smallest eigenvalue " << smallest << " (largest " << largest
     << "); use gamma_M > 0";
  throw NumericalError(os.str());
}

// Eigen-decomposes a symmetric block, returning its eigenvalues and vectors.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> decompose(const Eigen::MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  return es;
}

Eigen::MatrixXd inverse_sqrt_from(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es) {
  const Eigen::VectorXd inv = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

EigenSolution finish(const Eigen::MatrixXd& Ginv, const Eigen::MatrixXd& H) {
  Eigen::MatrixXd S = Ginv * H * Ginv;
  S = 0.5 * (S + S.transpose()).eval();
  const auto es = decompose(S);
  EigenSolution out;
  out.lambdas = es.eigenvalues().reverse();
  Eigen::MatrixXd U = es.eigenvectors().rowwise().reverse();
  fix_signs(U);
  out.A = Ginv * U;
  return out;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows) throw InputError("model matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = data.at(static_cast<std::size_t>(r));
    if (static_cast<Index>(row.size()) != cols) throw InputError("model matrix column count mismatch");
    for (Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

Eigen::MatrixXd weighted_gram(const MultiDomainData& data, const Eigen::VectorXd& m) {
  if (m.size() != data.rows()) throw InputError("degree vector length does not match N");
  const auto& layout = data.layout;
  const Index P = layout.total_dim();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
  for (Index d = 0; d < layout.domains(); ++d) {
    const auto& block = data.blocks[static_cast<std::size_t>(d)];
    const Index off = layout.row_offset(d);
    std::vector<Index> active;
    for (Index r = 0; r < block.rows(); ++r) {
      if (m[off + r] != 0.0) active.push_back(r);
    }
    if (active.empty()) continue;
    Eigen::MatrixXd Z(static_cast<Index>(active.size()), block.cols());
    Eigen::VectorXd s(Z.rows());
    for (Index a = 0; a < Z.rows(); ++a) {
      Z.row(a) = block.row(active[a]);
      s[a] = m[off + active[a]];
    }
    const Index c0 = layout.col_offset(d);
    G.block(c0, c0, block.cols(), block.cols()).noalias() = Z.transpose() * s.asDiagonal() * Z;
  }
  return G;
}

Eigen::MatrixXd plain_gram(const MultiDomainData& data) {
  const auto& layout = data.layout;
  const Index P = layout.total_dim();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
  for (Index d = 0; d < layout.domains(); ++d) {
    const auto& block = data.blocks[static_cast<std::size_t>(d)];
    const Index c0 = layout.col_offset(d);
    G.block(c0, c0, block.cols(), block.cols()).noalias() = block.transpose() * block;
  }
  return G;
}

Eigen::MatrixXd cross_gram(const MultiDomainData& data, const SymWeights& w) {
  check_shapes(data, w);
  const auto& layout = data.layout;
  const Index P = layout.total_dim();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
  for (const auto& e : w.entries()) {
    const auto ri = locate(layout, e.i);
    const auto rj = locate(layout, e.j);
    const auto xi = data.blocks[static_cast<std::size_t>(ri.domain)].row(ri.local);
    const auto xj = data.blocks[static_cast<std::size_t>(rj.domain)].row(rj.local);
    const Index ci = layout.col_offset(ri.domain);
    const Index cj = layout.col_offset(rj.domain);
    if (e.i == e.j) {
      H.block(ci, ci, xi.size(), xi.size()).noalias() += e.w * xi.transpose() * xi;
    } else {
      H.block(ci, cj, xi.size(), xj.size()).noalias() += e.w * xi.transpose() * xj;
      H.block(cj, ci, xj.size(), xi.size()).noalias() += e.w * xj.transpose() * xi;
    }
  }
  // Within-domain links accumulate the two halves in different orders.
  return 0.5 * (H + H.transpose());
}

GramPair build_gram(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg) {
  check_shapes(data, w);
  const Index P = data.cols();
  check_regularizer(reg, P);
  GramPair gp{weighted_gram(data, degree(w)), cross_gram(data, w)};
  if (reg.gamma_M != 0.0) gp.G += reg.gamma_M * reg.L_M;
  if (reg.gamma_W != 0.0) gp.H += reg.gamma_W * reg.L_W;
  return gp;
}

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& G) {
  const auto es = decompose(G);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(lo > kSingularTolerance * hi)) throw_singular(lo, hi);
  return inverse_sqrt_from(es);
}

EigenSolution solve(const GramPair& gp) {
  if (gp.G.rows() != gp.G.cols() || gp.H.rows() != gp.G.rows() || gp.H.cols() != gp.G.cols()) {
    throw InputError("G and H must be square matrices of the same size");
  }
  if (gp.G.size() == 0) throw InputError("empty eigenproblem");
  return finish(inverse_sqrt(gp.G), gp.H);
}

EigenSolution solve(const GramPair& gp, const DomainLayout& layout) {
  const Index P = layout.total_dim();
  if (gp.G.rows() != P || gp.G.cols() != P || gp.H.rows() != P || gp.H.cols() != P) {
    throw InputError("G and H must be " + std::to_string(P) + " x " + std::to_string(P));
  }
  // Fall back to the dense path if G couples different domains.
  for (Index d = 0; d < layout.domains(); ++d) {
    for (Index e = 0; e < layout.domains(); ++e) {
      if (d == e) continue;
      const auto blk = gp.G.block(layout.col_offset(d), layout.col_offset(e), layout.dim(d), layout.dim(e));
      if ((blk.array() != 0.0).any()) return solve(gp);
    }
  }
  Eigen::MatrixXd Ginv = Eigen::MatrixXd::Zero(P, P);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  std::vector<Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>> parts;
  for (Index d = 0; d < layout.domains(); ++d) {
    const Index c0 = layout.col_offset(d);
    parts.push_back(decompose(gp.G.block(c0, c0, layout.dim(d), layout.dim(d))));
    lo = std::min(lo, parts.back().eigenvalues().minCoeff());
    hi = std::max(hi, parts.back().eigenvalues().cwiseAbs().maxCoeff());
  }
  if (!(lo > kSingularTolerance * hi)) throw_singular(lo, hi);
  for (Index d = 0; d < layout.domains(); ++d) {
    const Index c0 = layout.col_offset(d);
    Ginv.block(c0, c0, layout.dim(d), layout.dim(d)) = inverse_sqrt_from(parts[static_cast<std::size_t>(d)]);
  }
  return finish(Ginv, gp.H);
}

Rescaling rescale(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q, double total, Index K) {
  if (K < 0 || K > A.cols()) throw InputError("K out of range");
  if (Q.rows() != A.rows() || Q.cols() != A.rows()) throw InputError("normalizer shape mismatch");
  if (!(total > 0.0)) throw InputError("rescaling total must be positive");
  Rescaling out{Eigen::VectorXd::Zero(K), std::vector<bool>(static_cast<std::size_t>(K), false)};
  const Eigen::MatrixXd Qabs = Q.cwiseAbs();
  for (Index k = 0; k < K; ++k) {
    const auto a = A.col(k);
    const double q = a.dot(Q * a);
    const double bound = a.cwiseAbs().dot(Qabs * a.cwiseAbs());
    if (!(q > 1e-12 * bound)) {
      out.degenerate[static_cast<std::size_t>(k)] = true;
      continue;
    }
    out.b[k] = std::sqrt(total / q);
  }
  return out;
}

Eigen::MatrixXd embed(const MultiDomainData& data, const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const auto& layout = data.layout;
  const Index K = b.size();
  if (A.rows() != layout.total_dim() || A.cols() < K) throw InputError("transformation shape mismatch");
  Eigen::MatrixXd Y(layout.total_count(), K);
  for (Index d = 0; d < layout.domains(); ++d) {
    Y.middleRows(layout.row_offset(d), layout.count(d)).noalias() =
        data.blocks[static_cast<std::size_t>(d)] *
        A.block(layout.col_offset(d), 0, layout.dim(d), K) * b.asDiagonal();
  }
  return Y;
}

Eigen::VectorXd matching_error(const Eigen::MatrixXd& Y, const SymWeights& w, bool normalize) {
  if (Y.rows() != w.size()) throw InputError("embedding rows do not match weight matrix size");
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(Y.cols());
  double total = 0.0;
  for (const auto& e : w.entries()) {
    if (e.i == e.j) {
      total += e.w;
      continue;
    }
    total += 2.0 * e.w;
    phi += e.w * (Y.row(e.i) - Y.row(e.j)).cwiseAbs2().transpose();
  }
  if (normalize) {
    if (!(total > 0.0)) throw InputError("cannot normalize a matching error by a zero weight total");
    phi /= total;
  }
  return phi;
}

Eigen::MatrixXd matching_correlation(const Eigen::MatrixXd& Y, const SymWeights& w) {
  if (Y.rows() != w.size()) throw InputError("embedding rows do not match weight matrix size");
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(Y.cols(), Y.cols());
  for (const auto& e : w.entries()) {
    const auto yi = Y.row(e.i);
    const auto yj = Y.row(e.j);
    if (e.i == e.j) {
      C.noalias() += e.w * yi.transpose() * yi;
    } else {
      C.noalias() += e.w * (yi.transpose() * yj + yj.transpose() * yi);
    }
  }
  return C;
}

Eigen::MatrixXd omega(const MultiDomainData& data, const SymWeights& w) {
  check_shapes(data, w);
  const auto& layout = data.layout;
  const Index P = layout.total_dim();
  Eigen::MatrixXd O = Eigen::MatrixXd::Zero(P, P);
  auto augmented = [&](Index i) {
    const auto r = locate(layout, i);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(P);
    x.segment(layout.col_offset(r.domain), layout.dim(r.domain)) =
        data.blocks[static_cast<std::size_t>(r.domain)].row(r.local).transpose();
    return x;
  };
  for (const auto& e : w.entries()) {
    const Eigen::VectorXd s = augmented(e.i) + augmented(e.j);
    // Off-diagonal entries appear twice in the double sum, diagonal ones once.
    const double c = e.i == e.j ? 0.5 * e.w : e.w;
    O.noalias() += c * s * s.transpose();
  }
  return O;
}

Regularizer effective_regularizer(const Regularizer& reg, bool substitute, bool* substituted) {
  Regularizer out = reg;
  const bool swap = substitute && reg.gamma_M == 0.0 && (reg.L_M.array() != 0.0).any();
  if (swap) out.gamma_M = kZeroGammaSubstitute;
  if (substituted) *substituted = swap;
  return out;
}

Eigen::MatrixXd McaModel::transform(const Eigen::MatrixXd& rows, Index d) const {
  if (d < 0 || d >= layout.domains()) throw InputError("domain index out of range");
  if (rows.cols() != layout.dim(d)) {
    throw InputError("query vectors have " + std::to_string(rows.cols()) + " columns, domain " +
                     std::to_string(d) + " expects " + std::to_string(layout.dim(d)));
  }
  Eigen::MatrixXd x = rows;
  if (centered) x.rowwise() -= offsets.at(static_cast<std::size_t>(d));
  return x * A.block(layout.col_offset(d), 0, layout.dim(d), K) * b.asDiagonal();
}

FitResult fit_centered(const MultiDomainData& centered, const std::vector<Eigen::RowVectorXd>& offsets,
                       const SymWeights& w, const Regularizer& reg, const FitOptions& options,
                       const Eigen::MatrixXd* XtX) {
  check_shapes(centered, w);
  const Index P = centered.cols();
  if (options.K < 0 || options.K > P) {
    throw InputError("K = " + std::to_string(options.K) + " is outside [0, " + std::to_string(P) + "]");
  }
  bool substituted = false;
  const Regularizer eff = effective_regularizer(reg, options.substitute_zero_gamma, &substituted);
  check_regularizer(eff, P);

  const Eigen::VectorXd m = degree(w);
  GramPair gp{weighted_gram(centered, m), cross_gram(centered, w)};
  const Eigen::MatrixXd Ghat = gp.G;
  if (eff.gamma_M != 0.0) gp.G += eff.gamma_M * eff.L_M;
  if (eff.gamma_W != 0.0) gp.H += eff.gamma_W * eff.L_W;
  EigenSolution sol = solve(gp, centered.layout);

  FitResult out;
  McaModel& model = out.model;
  model.layout = centered.layout;
  model.K_plus = 0;
  const double zero_tol = 1e-8 * std::max(1.0, sol.lambdas.cwiseAbs().maxCoeff());
  for (Index k = 0; k < P; ++k) model.K_plus += sol.lambdas[k] > zero_tol ? 1 : 0;
  model.K = options.K > 0 ? options.K : std::max<Index>(model.K_plus, 1);
  model.reg = eff;
  model.requested_gamma_M = reg.gamma_M;
  model.zero_gamma_substituted = substituted;
  model.centered = options.center;
  model.offsets = offsets;
  model.variance = options.variance;
  model.weight_total = m.sum();
  model.nodes = centered.rows();

  Rescaling scaling;
  if (options.variance == VarianceMode::weighted) {
    if (!(model.weight_total > 0.0)) throw InputError("weighted rescaling needs a nonzero weight total");
    scaling = rescale(sol.A, Ghat, model.weight_total, model.K);
  } else {
    const Eigen::MatrixXd local = XtX ? Eigen::MatrixXd() : plain_gram(centered);
    scaling = rescale(sol.A, XtX ? *XtX : local, static_cast<double>(model.nodes), model.K);
  }
  model.b = std::move(scaling.b);
  model.degenerate = std::move(scaling.degenerate);
  model.A = std::move(sol.A);
  model.lambdas = std::move(sol.lambdas);
  out.Y = embed(centered, model.A, model.b);
  return out;
}

FitResult fit(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
              const FitOptions& options) {
  check_shapes(data, w);
  if (!options.center) {
    std::vector<Eigen::RowVectorXd> zeros;
    for (const auto& blk : data.blocks) zeros.push_back(Eigen::RowVectorXd::Zero(blk.cols()));
    return fit_centered(data, zeros, w, reg, options);
  }
  const auto c = center(data, degree(w), options.variance);
  return fit_centered(c.data, c.offsets, w, reg, options);
}

ConstraintResiduals constraint_residuals(const GramPair& gp, const EigenSolution& sol) {
  const Index P = sol.A.cols();
  const Eigen::MatrixXd AGA = sol.A.transpose() * gp.G * sol.A;
  const Eigen::MatrixXd AHA = sol.A.transpose() * gp.H * sol.A;
  ConstraintResiduals r;
  r.g = (AGA - Eigen::MatrixXd::Identity(P, P)).cwiseAbs().maxCoeff();
  r.h = (AHA - Eigen::MatrixXd(sol.lambdas.asDiagonal())).cwiseAbs().maxCoeff();
  return r;
}

void save_model(const std::filesystem::path& path, const McaModel& model) {
  Json j;
  j["format"] = "mca-model";
  j["version"] = kModelFormatVersion;
  j["layout"] = {{"dims", model.layout.dims()}, {"counts", model.layout.counts()}};
  j["K"] = model.K;
  j["K_plus"] = model.K_plus;
  j["A"] = matrix_to_json(model.A);
  j["lambdas"] = vector_to_json(model.lambdas);
  j["b"] = vector_to_json(model.b);
  j["degenerate"] = model.degenerate;
  j["regularizer"] = {{"gamma_M", model.reg.gamma_M},
                      {"gamma_W", model.reg.gamma_W},
                      {"requested_gamma_M", model.requested_gamma_M},
                      {"zero_gamma_substituted", model.zero_gamma_substituted},
                      {"L_M", matrix_to_json(model.reg.L_M)},
                      {"L_W", matrix_to_json(model.reg.L_W)}};
  Json offsets = Json::array();
  for (const auto& o : model.offsets) offsets.push_back(vector_to_json(o.transpose()));
  j["centering"] = {{"enabled", model.centered}, {"offsets", std::move(offsets)}};
  j["rescale_mode"] = to_string(model.variance);
  j["weight_total"] = model.weight_total;
  j["nodes"] = model.nodes;

  std::ofstream out(path);
  if (!out) throw InputError("cannot write model file: " + path.string());
  out << j.dump(1) << '\n';
}

McaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file: " + path.string());
  try {
    const Json j = Json::parse(in);
    if (j.at("format").get<std::string>() != "mca-model") throw InputError("not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw InputError("unsupported model format version " + std::to_string(version));
    }
    McaModel m;
    m.layout = DomainLayout(j.at("layout").at("dims").get<std::vector<Index>>(),
                            j.at("layout").at("counts").get<std::vector<Index>>());
    m.K = j.at("K").get<Index>();
    m.K_plus = j.at("K_plus").get<Index>();
    m.A = matrix_from_json(j.at("A"));
    m.lambdas = vector_from_json(j.at("lambdas"));
    m.b = vector_from_json(j.at("b"));
    m.degenerate = j.at("degenerate").get<std::vector<bool>>();
    const auto& reg = j.at("regularizer");
    m.reg.gamma_M = reg.at("gamma_M").get<double>();
    m.reg.gamma_W = reg.at("gamma_W").get<double>();
    m.reg.L_M = matrix_from_json(reg.at("L_M"));
    m.reg.L_W = matrix_from_json(reg.at("L_W"));
    m.requested_gamma_M = reg.at("requested_gamma_M").get<double>();
    m.zero_gamma_substituted = reg.at("zero_gamma_substituted").get<bool>();
    m.centered = j.at("centering").at("enabled").get<bool>();
    for (const auto& o : j.at("centering").at("offsets")) m.offsets.push_back(vector_from_json(o).transpose());
    m.variance = parse_variance_mode(j.at("rescale_mode").get<std::string>());
    m.weight_total = j.at("weight_total").get<double>();
    m.nodes = j.at("nodes").get<Index>();

    const Index P = m.layout.total_dim();
    if (m.A.rows() != P || m.A.cols() != P || m.lambdas.size() != P || m.K < 1 || m.K > P ||
        m.b.size() != m.K || static_cast<Index>(m.degenerate.size()) != m.K ||
        static_cast<Index>(m.offsets.size()) != m.layout.domains()) {
      throw InputError("model file is internally inconsistent");
    }
    for (Index d = 0; d < m.layout.domains(); ++d) {
      if (m.offsets[static_cast<std::size_t>(d)].size() != m.layout.dim(d)) {
        throw InputError("model file offset length mismatch");
      }
    }
    return m;
  } catch (const Json::exception& e) {
    throw InputError("malformed model file " + path.string() + ": " + e.what());
  }
}

}  // namespace mca
