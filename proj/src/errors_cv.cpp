#include "mca/errors_cv.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mca/error.hpp"
#include "mca/parallel.hpp"

namespace mca {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void mask_degenerate(Eigen::VectorXd& phi, const McaModel& model) {
  for (Index k = 0; k < phi.size(); ++k) {
    if (model.degenerate[static_cast<std::size_t>(k)]) phi[k] = kNaN;
  }
}

std::string format_number(double x) {
  if (!std::isfinite(x)) return "";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

void check_cv(const CvConfig& cv) {
  if (cv.replicates < 1) throw InputError("cv replicates must be at least 1");
  if (!(cv.prob > 0.0 && cv.prob < 1.0)) {
    std::ostringstream os;
    os << "cv resampling probability must lie in (0, 1), got " << cv.prob;
    throw InputError(os.str());
  }
}

}  // namespace

ErrorScale parse_error_scale(const std::string& name) {
  if (name == "raw") return ErrorScale::raw;
  if (name == "fit_weight") return ErrorScale::fit_weight;
  if (name == "eval_weight") return ErrorScale::eval_weight;
  throw InputError("unknown error scale '" + name + "' (expected raw, fit_weight or eval_weight)");
}

const char* to_string(ErrorScale scale) {
  switch (scale) {
    case ErrorScale::raw: return "raw";
    case ErrorScale::fit_weight: return "fit_weight";
    case ErrorScale::eval_weight: return "eval_weight";
  }
  return "?";
}

Eigen::VectorXd scale_errors(const Eigen::VectorXd& phi, ErrorScale scale, double fit_total,
                             const SymWeights& eval) {
  switch (scale) {
    case ErrorScale::raw: return phi;
    case ErrorScale::fit_weight:
      if (!(fit_total > 0.0)) throw InputError("fit weight total is zero");
      return phi / fit_total;
    case ErrorScale::eval_weight: {
      const double total = degree(eval).sum();
      if (!(total > 0.0)) throw InputError("cannot normalize a matching error by a zero weight total");
      return phi / total;
    }
  }
  return phi;
}

Eigen::VectorXd fit_error(const FitResult& fit, const SymWeights& w, ErrorScale scale) {
  Eigen::VectorXd phi = scale_errors(matching_error(fit.Y, w), scale, fit.model.weight_total, w);
  mask_degenerate(phi, fit.model);
  return phi;
}

Eigen::VectorXd true_error(const FitResult& fit, const SymWeights& wbar, double eps, ErrorScale scale) {
  if (!(eps > 0.0)) throw InputError("true error needs eps > 0");
  const SymWeights target = wbar.scaled(eps);
  Eigen::VectorXd phi = scale_errors(matching_error(fit.Y, target), scale, fit.model.weight_total, target);
  mask_degenerate(phi, fit.model);
  return phi;
}

Eigen::VectorXd test_error(const FitResult& fit, const SymWeights& w_test) {
  Eigen::VectorXd phi = matching_error(fit.Y, w_test, true);
  mask_degenerate(phi, fit.model);
  return phi;
}

std::optional<Eigen::VectorXd> split_error(const MultiDomainData& centered,
                                           const std::vector<Eigen::RowVectorXd>& offsets,
                                           const WeightSplit& split, const Regularizer& reg,
                                           const FitOptions& options, ErrorScale scale,
                                           const Eigen::MatrixXd* XtX) {
  if (split.test.empty() || split.train.empty()) return std::nullopt;
  const SymWeights train = split.train.scaled(1.0 / (1.0 - split.kappa));
  const SymWeights test = split.test.scaled(1.0 / split.kappa);
  const FitResult fit = fit_centered(centered, offsets, train, reg, options, XtX);
  Eigen::VectorXd phi = scale_errors(matching_error(fit.Y, test), scale, fit.model.weight_total, test);
  mask_degenerate(phi, fit.model);
  return phi;
}

CvResult cv_error(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
                  const FitOptions& options, const CvConfig& cv, ErrorScale scale) {
  check_cv(cv);
  if (w.size() != data.rows()) throw InputError("weight matrix size does not match data rows");
  if (w.empty()) throw InputError("cv error needs a nonempty weight matrix");

  FitOptions opts = options;
  if (opts.K == 0) opts.K = fit(data, w, reg, options).model.K;

  CenteredData c;
  if (options.center) {
    c = center(data, degree(w), options.variance);
  } else {
    c.data = data;
    for (const auto& blk : data.blocks) c.offsets.push_back(Eigen::RowVectorXd::Zero(blk.cols()));
  }
  const Eigen::MatrixXd XtX =
      options.variance == VarianceMode::unweighted ? plain_gram(c.data) : Eigen::MatrixXd();
  const Eigen::MatrixXd* xtx = options.variance == VarianceMode::unweighted ? &XtX : nullptr;

  const auto R = static_cast<std::size_t>(cv.replicates);
  std::vector<std::optional<Eigen::VectorXd>> results(R);
  parallel_for(R, cv.threads, [&](std::size_t r) {
    Rng rng(cv.seed, r);
    const WeightSplit split = resample(w, cv.scheme, cv.prob, rng);
    results[r] = split_error(c.data, c.offsets, split, reg, opts, scale, xtx);
  });

  const Index K = opts.K;
  CvResult out;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(K);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(K);
  for (const auto& res : results) {
    if (!res) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    for (Index k = 0; k < K; ++k) {
      const double v = (*res)[k];
      if (!std::isfinite(v)) continue;
      sum[k] += v;
      sumsq[k] += v * v;
      ++count[k];
    }
  }
  if (out.used == 0) {
    throw NumericalError("all " + std::to_string(cv.replicates) +
                         " cv replicates had an empty training or test part");
  }
  out.mean.resize(K);
  out.se.resize(K);
  for (Index k = 0; k < K; ++k) {
    const double n = count[k];
    if (n == 0) {
      out.mean[k] = out.se[k] = kNaN;
      continue;
    }
    out.mean[k] = sum[k] / n;
    if (n < 2) {
      out.se[k] = kNaN;
    } else {
      const double var = std::max(0.0, (sumsq[k] - n * out.mean[k] * out.mean[k]) / (n - 1));
      out.se[k] = std::sqrt(var / n);
    }
  }
  return out;
}

ErrorReport error_curve(const MultiDomainData& data, const SymWeights& w, const Regularizer& reg,
                        const std::vector<std::pair<double, double>>& grid, const FitOptions& options,
                        const CvConfig& cv, const TruthSpec& truth, ErrorScale scale) {
  if (grid.empty()) throw InputError("regularization grid is empty");
  check_cv(cv);
  if (truth.wbar && !(truth.epsilon > 0.0)) throw InputError("true error needs eps > 0");
  ErrorReport report;
  report.replicates = cv.replicates;
  report.scale = scale;
  for (const auto& [gm, gw] : grid) {
    const Regularizer point = reg.with_gammas(gm, gw);
    try {
      const FitResult f = fit(data, w, point, options);
      const Eigen::VectorXd phi_fit = fit_error(f, w, scale);
      FitOptions opts = options;
      opts.K = f.model.K;
      const CvResult cvr = cv_error(data, w, point, opts, cv, scale);
      std::optional<Eigen::VectorXd> phi_true;
      if (truth.wbar) {
        phi_true = true_error(f, *truth.wbar, truth.epsilon, scale);
      } else if (truth.test) {
        phi_true = test_error(f, *truth.test);
      }
      for (Index k = 0; k < f.model.K; ++k) {
        ErrorRow row;
        row.gamma_M = f.model.reg.gamma_M;
        row.gamma_W = f.model.reg.gamma_W;
        row.k = k + 1;
        row.lambda = f.model.lambdas[k];
        row.phi_fit = phi_fit[k];
        row.phi_cv = cvr.mean[k];
        row.phi_cv_se = cvr.se[k];
        if (phi_true) row.phi_true = (*phi_true)[k];
        row.skipped_replicates = cvr.skipped;
        report.rows.push_back(row);
      }
    } catch (const std::exception& e) {
      report.failures.push_back({gm, gw, e.what()});
    }
  }
  return report;
}

void write_error_csv(const std::filesystem::path& path, const ErrorReport& report) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write error report: " + path.string());
  out << kErrorCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << format_number(r.gamma_M) << ',' << format_number(r.gamma_W) << ',' << r.k << ','
        << format_number(r.lambda) << ',' << format_number(r.phi_fit) << ',' << format_number(r.phi_cv)
        << ',' << format_number(r.phi_cv_se) << ',' << (r.phi_true ? format_number(*r.phi_true) : "")
        << ',' << r.skipped_replicates << '\n';
  }
}

void write_failures_csv(const std::filesystem::path& path, const ErrorReport& report) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write failure report: " + path.string());
  out << "gamma_M,gamma_W,message\n";
  for (const auto& f : report.failures) {
    std::string msg = f.message;
    for (auto& ch : msg) {
      if (ch == '"') ch = '\'';
      if (ch == '\n') ch = ' ';
    }
    out << format_number(f.gamma_M) << ',' << format_number(f.gamma_W) << ",\"" << msg << "\"\n";
  }
}

}  // namespace mca
