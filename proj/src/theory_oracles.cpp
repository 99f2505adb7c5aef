#include "mca/theory_oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "mca/error.hpp"
#include "mca/errors_cv.hpp"
#include "mca/parallel.hpp"

namespace mca {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Index positive_count(const Eigen::VectorXd& lambdas) {
  const double tol = 1e-8 * std::max(1.0, lambdas.cwiseAbs().maxCoeff());
  return (lambdas.array() > tol).count();
}

void check_direction(const Eigen::MatrixXd& m, Index P, const char* name) {
  if (m.rows() != P || m.cols() != P) {
    throw InputError(std::string(name) + " must be " + std::to_string(P) + " x " + std::to_string(P));
  }
}

std::string num(double x) {
  if (!std::isfinite(x)) return "";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

// Base solution of the unregularized problem, shared by both expansion checks.
struct Base {
  GramPair gp;
  EigenSolution sol;
  Eigen::MatrixXd Ainv;
};

Base solve_base(const MultiDomainData& data, const SymWeights& w, Index J) {
  const Index P = data.cols();
  Base b;
  b.gp = build_gram(data, w, Regularizer::none(P));
  b.sol = solve(b.gp);
  require_eigen_gaps(b.sol.lambdas, J);
  // A^T G A = I gives A^{-1} = A^T G.
  b.Ainv = b.sol.A.transpose() * b.gp.G;
  return b;
}

}  // namespace

void require_eigen_gaps(const Eigen::VectorXd& lambdas, Index J, double tol) {
  const Index P = lambdas.size();
  if (J < 1 || J > P) throw InputError("J must lie in [1, " + std::to_string(P) + "]");
  const double scale = lambdas.cwiseAbs().maxCoeff();
  for (Index i = 0; i < J; ++i) {
    for (Index j = 0; j < P; ++j) {
      if (j == i) continue;
      if (std::abs(lambdas[i] - lambdas[j]) < tol * scale) {
        std::ostringstream os;
        os << "eigenvalues " << i + 1 << " and " << j + 1 << " are not separated (" << lambdas[i]
           << " vs " << lambdas[j] << "); the expansion needs distinct eigenvalues";
        throw NumericalError(os.str());
      }
    }
  }
}

ReferenceFit reference_fit(const MultiDomainData& data, const SymWeights& wbar, double eps,
                           const Regularizer& reg, OracleGamma mode) {
  if (!(eps > 0.0 && eps <= 1.0)) throw InputError("sampling probability must lie in (0, 1]");
  const Regularizer r = mode == OracleGamma::zero ? reg.with_gammas(0.0, 0.0) : reg;
  const GramPair gp = build_gram(data, wbar.scaled(eps), r);
  EigenSolution sol = solve(gp, data.layout);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(data.cols());
  return {embed(data, sol.A, ones), std::move(sol.lambdas)};
}

BiasOracleReport bias_oracle(const MultiDomainData& data, const SymWeights& wbar, double eps,
                             const Regularizer& reg, Index J, OracleGamma mode) {
  const ReferenceFit ref = reference_fit(data, wbar, eps, reg, mode);
  const Eigen::VectorXd& lam = ref.lambdas;
  const Index P = lam.size();
  if (J == 0) J = std::min<Index>(5, positive_count(lam));
  if (J < 1) throw NumericalError("the reference fit has no positive eigenvalue");
  require_eigen_gaps(lam, J);

  // inv_gap(j, k) = (lambda_j - lambda_k)^{-1}, zero on the diagonal.
  Eigen::MatrixXd inv_gap = Eigen::MatrixXd::Zero(P, J);
  for (Index k = 0; k < J; ++k) {
    for (Index j = 0; j < P; ++j) {
      if (j != k) inv_gap(j, k) = 1.0 / (lam[j] - lam[k]);
    }
  }

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(J);
  for (const auto& e : wbar.entries()) {
    const Eigen::VectorXd yl = ref.Ybar.row(e.i).transpose();
    const Eigen::VectorXd ym = ref.Ybar.row(e.j).transpose();
    const double w2 = e.w * e.w;
    for (Index k = 0; k < J; ++k) {
      Eigen::VectorXd Gc, Hc;
      if (e.i == e.j) {
        Gc = yl * yl[k];
        Hc = Gc;
      } else {
        Gc = yl * yl[k] + ym * ym[k];
        Hc = yl * ym[k] + ym * yl[k];
      }
      const Eigen::VectorXd diff = Gc - Hc;
      double bracket = -diff[k] * Gc[k];
      bracket += 2.0 * (inv_gap.col(k).array() * diff.array() * (Gc.array() * lam[k] - Hc.array())).sum();
      acc[k] += w2 * bracket;
    }
  }

  BiasOracleReport out;
  out.epsilon = eps;
  out.lambda_bar = lam.head(J);
  out.bias = eps * (1.0 - eps) * acc;
  return out;
}

MonteCarloBias monte_carlo_bias(const MultiDomainData& data, const SymWeights& wbar, double eps,
                                const Regularizer& reg, Index J, int draws, std::uint64_t seed,
                                int threads) {
  if (draws < 2) throw InputError("Monte Carlo bias needs at least two draws");
  if (J < 1 || J > data.cols()) throw InputError("J out of range");
  FitOptions opts;
  opts.center = false;
  opts.K = J;
  opts.substitute_zero_gamma = false;
  std::vector<std::optional<Eigen::VectorXd>> results(static_cast<std::size_t>(draws));
  parallel_for(results.size(), threads, [&](std::size_t r) {
    const SymWeights w = link_sample(wbar, eps, derive_seed(seed, r));
    if (w.empty()) return;
    try {
      const FitResult f = fit(data, w, reg, opts);
      Eigen::VectorXd d = fit_error(f, w) - true_error(f, wbar, eps);
      if (d.allFinite()) results[r] = std::move(d);
    } catch (const NumericalError&) {
    }
  });
  MonteCarloBias out;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(J), sumsq = Eigen::VectorXd::Zero(J);
  for (const auto& r : results) {
    if (!r) {
      ++out.failed;
      continue;
    }
    ++out.draws;
    sum += *r;
    sumsq += r->cwiseAbs2();
  }
  if (out.draws < 2) throw NumericalError("fewer than two Monte Carlo draws succeeded");
  const double n = out.draws;
  out.mean = sum / n;
  const Eigen::VectorXd var = ((sumsq - n * out.mean.cwiseAbs2()) / (n - 1)).cwiseMax(0.0);
  out.se = (var / n).cwiseSqrt();
  return out;
}

PerturbationReport perturbation_check(const MultiDomainData& data, const SymWeights& w,
                                      const Eigen::MatrixXd& dG0, const Eigen::MatrixXd& dH0,
                                      const std::vector<double>& ladder, Index J) {
  const Index P = data.cols();
  check_direction(dG0, P, "dG0");
  check_direction(dH0, P, "dH0");
  if (ladder.empty()) throw InputError("gamma ladder is empty");
  const Base base = solve_base(data, w, J);
  const Eigen::VectorXd& lam = base.sol.lambdas;
  const Eigen::MatrixXd& Ahat = base.sol.A;
  const Eigen::MatrixXd g0 = Ahat.transpose() * dG0 * Ahat;
  const Eigen::MatrixXd h0 = Ahat.transpose() * dH0 * Ahat;

  PerturbationReport report;
  report.lambda_hat = lam;
  std::vector<double> gam, rl, rcii, rcij;
  for (const double gamma : ladder) {
    if (!(gamma >= 0.0)) throw InputError("gamma ladder values must be nonnegative");
    PerturbationRung rung;
    rung.gamma = gamma;
    const Eigen::MatrixXd g = gamma * g0;
    const Eigen::MatrixXd h = gamma * h0;

    // The gamma = 0 rung is the base point itself: A = Ahat and C = 0.
    const EigenSolution sol = gamma == 0.0 ? base.sol : solve({base.gp.G + gamma * dG0, base.gp.H + gamma * dH0});
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(P, P);
    if (gamma != 0.0) {
      Eigen::MatrixXd T = base.Ainv * sol.A;  // = I + C
      for (Index c = 0; c < P; ++c) {
        if (T(c, c) < 0.0) T.col(c) = -T.col(c);
      }
      C = T - Eigen::MatrixXd::Identity(P, P);
    }

    rung.dlambda_pred.resize(J);
    rung.dlambda_exact = (sol.lambdas - lam).head(J);
    rung.C_pred.resize(P, J);
    rung.C_exact = C.leftCols(J);
    for (Index j = 0; j < J; ++j) {
      rung.dlambda_pred[j] = -(g(j, j) * lam[j] - h(j, j));
      for (Index i = 0; i < P; ++i) {
        rung.C_pred(i, j) = i == j ? -0.5 * g(j, j) : (g(i, j) * lam[j] - h(i, j)) / (lam[i] - lam[j]);
      }
    }
    rung.residual_dlambda = (rung.dlambda_exact - rung.dlambda_pred).cwiseAbs().maxCoeff();
    const Eigen::MatrixXd dc = (rung.C_exact - rung.C_pred).cwiseAbs();
    for (Index j = 0; j < J; ++j) {
      rung.residual_cii = std::max(rung.residual_cii, dc(j, j));
      for (Index i = 0; i < P; ++i) {
        if (i != j) rung.residual_cij = std::max(rung.residual_cij, dc(i, j));
      }
    }
    gam.push_back(gamma);
    rl.push_back(rung.residual_dlambda);
    rcii.push_back(rung.residual_cii);
    rcij.push_back(rung.residual_cij);
    report.rungs.push_back(std::move(rung));
  }
  report.slope_dlambda = loglog_slope(gam, rl);
  report.slope_cii = loglog_slope(gam, rcii);
  report.slope_cij = loglog_slope(gam, rcij);
  return report;
}

FitExpansionReport fit_expansion_check(const MultiDomainData& data, const SymWeights& w,
                                       const Eigen::MatrixXd& dG0, const Eigen::MatrixXd& dH0,
                                       const std::vector<double>& ladder, Index k) {
  const Index P = data.cols();
  check_direction(dG0, P, "dG0");
  check_direction(dH0, P, "dH0");
  if (k < 1 || k > P) throw InputError("component index out of range");
  if (ladder.empty()) throw InputError("gamma ladder is empty");
  const Base base = solve_base(data, w, k);
  const Eigen::VectorXd& lam = base.sol.lambdas;
  const Eigen::MatrixXd& Ahat = base.sol.A;
  const Eigen::MatrixXd g0 = Ahat.transpose() * dG0 * Ahat;
  const Eigen::MatrixXd h0 = Ahat.transpose() * dH0 * Ahat;
  const Index kk = k - 1;
  const Eigen::MatrixXd S = base.gp.G - base.gp.H;  // X^T (M - W) X

  FitExpansionReport report;
  report.k = k;
  std::vector<double> gam, res;
  for (const double gamma : ladder) {
    if (!(gamma >= 0.0)) throw InputError("gamma ladder values must be nonnegative");
    const EigenSolution sol = solve({base.gp.G + gamma * dG0, base.gp.H + gamma * dH0});
    const Eigen::VectorXd a = sol.A.col(kk);
    FitExpansionRung rung;
    rung.gamma = gamma;
    rung.exact = a.dot(S * a) / a.dot(base.gp.G * a);
    double correction = 0.0;
    for (Index i = 0; i < P; ++i) {
      if (i == kk) continue;
      const double t = gamma * (g0(i, kk) * lam[kk] - h0(i, kk));
      correction += t * t / (lam[i] - lam[kk]);
    }
    rung.predicted = 1.0 - lam[kk] - correction;
    rung.residual = std::abs(rung.exact - rung.predicted);
    gam.push_back(gamma);
    res.push_back(rung.residual);
    report.rungs.push_back(rung);
  }
  report.slope = loglog_slope(gam, res);
  return report;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("slope inputs differ in length");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    n += 1.0;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2.0 || !(den > 0.0)) return kNaN;
  return (n * sxy - sx * sy) / den;
}

void write_bias_csv(const std::filesystem::path& path, const BiasOracleReport& report) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write bias report: " + path.string());
  out << "k,epsilon,lambda_bar,bias,mc_bias,mc_se,mc_draws\n";
  const bool mc = report.mc_bias.size() == report.bias.size();
  for (Index k = 0; k < report.bias.size(); ++k) {
    out << k + 1 << ',' << num(report.epsilon) << ',' << num(report.lambda_bar[k]) << ','
        << num(report.bias[k]) << ',' << (mc ? num(report.mc_bias[k]) : "") << ','
        << (mc ? num(report.mc_se[k]) : "") << ',' << (mc ? std::to_string(report.mc_draws) : "") << '\n';
  }
}

void write_perturbation_csv(const std::filesystem::path& path, const PerturbationReport& report,
                            const FitExpansionReport* expansion) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write perturbation report: " + path.string());
  out << "gamma,residual_dlambda,residual_cii,residual_cij,fit_k,fit_exact,fit_predicted,fit_residual\n";
  for (std::size_t r = 0; r < report.rungs.size(); ++r) {
    const auto& rung = report.rungs[r];
    out << num(rung.gamma) << ',' << num(rung.residual_dlambda) << ',' << num(rung.residual_cii) << ','
        << num(rung.residual_cij);
    if (expansion && r < expansion->rungs.size()) {
      const auto& f = expansion->rungs[r];
      out << ',' << expansion->k << ',' << num(f.exact) << ',' << num(f.predicted) << ',' << num(f.residual);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
}

void write_slopes_csv(const std::filesystem::path& path, const PerturbationReport& report,
                      const FitExpansionReport* expansion) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write slope report: " + path.string());
  out << "quantity,slope\n";
  out << "dlambda," << num(report.slope_dlambda) << '\n';
  out << "c_ii," << num(report.slope_cii) << '\n';
  out << "c_ij," << num(report.slope_cij) << '\n';
  if (expansion) out << "phi_fit," << num(expansion->slope) << '\n';
}

}  // namespace mca
