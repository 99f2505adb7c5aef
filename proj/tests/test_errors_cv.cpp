#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "mca/error.hpp"
#include "mca/errors_cv.hpp"
#include "test_support.hpp"

using namespace mca;
using mca::testing::dense;
using mca::testing::random_data;
using mca::testing::random_weights;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double brute_phi(const Eigen::VectorXd& y, const Eigen::MatrixXd& W) {
  double s = 0.0;
  for (Index i = 0; i < W.rows(); ++i) {
    for (Index j = 0; j < W.cols(); ++j) s += 0.5 * W(i, j) * (y[i] - y[j]) * (y[i] - y[j]);
  }
  return s;
}

/// Equal, or both NaN (degenerate component).
bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

TEST_CASE("fitting error without regularization is one minus lambda") {
  Rng rng(3);
  const auto data = random_data(rng, {2, 3}, {20, 20});
  const SymWeights w = random_weights(rng, data.layout, 0.2);
  const FitResult f = fit(data, w, Regularizer::none(5), {VarianceMode::weighted, true, 5, true});
  const Eigen::VectorXd phi = fit_error(f, w);
  for (Index k = 0; k < 5; ++k) CHECK(std::abs(phi[k] - (1.0 - f.model.lambdas[k])) < 1e-10);
  // Default scale is the fit's own degree total; eval_weight coincides here.
  CHECK((fit_error(f, w, ErrorScale::eval_weight) - phi).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((fit_error(f, w, ErrorScale::raw) / degree(w).sum() - phi).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("a perfectly matched component has zero fitting error") {
  Rng rng(4);
  auto data = random_data(rng, {2, 2}, {12, 12});
  data.blocks[1] = data.blocks[0];
  data = MultiDomainData(data.blocks);
  std::vector<WeightEntry> e;
  for (Index i = 0; i < 12; ++i) e.push_back({12 + i, i, 1.0});
  const SymWeights w(24, e);
  const FitResult f = fit(data, w, Regularizer::none(4), {VarianceMode::weighted, true, 4, true});
  CHECK(f.model.lambdas[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(fit_error(f, w)[0]) < 1e-12);
}

TEST_CASE("regularized fitting error equals the brute-force sum") {
  Rng rng(5);
  const auto data = random_data(rng, {2, 3}, {10, 11});
  const SymWeights w = random_weights(rng, data.layout, 0.3);
  const Regularizer reg = domain_regularizer(data, degree(w)).with_gammas(0.5, 0.0);
  const FitResult f = fit(data, w, reg, {VarianceMode::weighted, true, 5, true});
  const Eigen::VectorXd raw = fit_error(f, w, ErrorScale::raw);
  const Eigen::MatrixXd W = dense(w);
  for (Index k = 0; k < 5; ++k) CHECK(std::abs(raw[k] - brute_phi(f.Y.col(k), W)) < 1e-12);
}

TEST_CASE("true error reduces to the fitting error and is linear in eps") {
  Rng rng(6);
  const auto data = random_data(rng, {2, 2}, {15, 15});
  const SymWeights w = random_weights(rng, data.layout, 0.3);
  const Regularizer reg = Regularizer::identity(4, 0.1);
  const FitResult f = fit(data, w, reg, {VarianceMode::weighted, true, 3, true});
  CHECK((true_error(f, w, 1.0) - fit_error(f, w)).cwiseAbs().maxCoeff() < 1e-14);
  const SymWeights wbar = random_weights(rng, data.layout, 0.5);
  const Eigen::VectorXd a = true_error(f, wbar, 0.2, ErrorScale::raw);
  const Eigen::VectorXd b = true_error(f, wbar, 0.4, ErrorScale::raw);
  CHECK((b - 2.0 * a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(true_error(f, wbar, 0.0), InputError);
  // Test-set mode normalizes by the test weights.
  const Eigen::VectorXd t = test_error(f, wbar);
  CHECK((t - matching_error(f.Y, wbar) / degree(wbar).sum()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("cv error equals the exact expectation over all resampling patterns") {
  // Six links; every pattern with both parts nonempty is a valid split.
  Rng rng(7);
  const auto data = random_data(rng, {1, 2}, {4, 4});
  const SymWeights w(8, {{4, 0, 1.0}, {5, 1, 0.7}, {6, 2, 1.3}, {7, 3, 0.9}, {5, 0, 0.6}, {7, 2, 1.1}});
  const Regularizer reg = Regularizer::identity(3, 0.2);
  const FitOptions opts{VarianceMode::weighted, true, 2, true};
  const double kappa = 0.3;
  const CenteredData c = center(data, degree(w), VarianceMode::weighted);

  const auto& entries = w.entries();
  const std::size_t L = entries.size();
  // Components that come out degenerate in a split are left out of that
  // component's average, as in cv_error.
  Eigen::VectorXd exact = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(2);
  for (std::uint32_t z = 0; z < (1u << L); ++z) {
    std::vector<WeightEntry> test, train;
    for (std::size_t l = 0; l < L; ++l) ((z >> l) & 1u ? test : train).push_back(entries[l]);
    const double p = std::pow(kappa, static_cast<double>(test.size())) *
                     std::pow(1.0 - kappa, static_cast<double>(train.size()));
    const WeightSplit split{SymWeights(8, test), SymWeights(8, train), kappa};
    const auto phi = split_error(c.data, c.offsets, split, reg, opts, ErrorScale::fit_weight);
    if (!phi) continue;
    for (Index k = 0; k < 2; ++k) {
      if (std::isnan((*phi)[k])) continue;
      exact[k] += p * (*phi)[k];
      mass[k] += p;
    }
  }
  exact = exact.cwiseQuotient(mass);

  CvConfig cv{Scheme::link, kappa, 100000, 2024, 1};
  const CvResult mc = cv_error(data, w, reg, opts, cv);
  CHECK(mc.used + mc.skipped == 100000);
  const double p_skip = std::pow(kappa, 6.0) + std::pow(1.0 - kappa, 6.0);
  CHECK(std::abs(mc.skipped - 1e5 * p_skip) < 3.0 * std::sqrt(1e5 * p_skip * (1 - p_skip)));
  for (Index k = 0; k < 2; ++k) {
    INFO("k = " << k + 1 << ", exact " << exact[k] << ", mc " << mc.mean[k] << " +/- " << mc.se[k]);
    CHECK(std::abs(mc.mean[k] - exact[k]) < 3.0 * mc.se[k]);
  }
}

TEST_CASE("cv replicates are skipped when a part is empty") {
  Rng rng(8);
  const auto data = random_data(rng, {2, 2}, {5, 5});
  const SymWeights single(10, {{6, 1, 1.0}});
  const Regularizer reg = Regularizer::identity(4, 0.5);
  CHECK_THROWS_AS(cv_error(data, single, reg, {VarianceMode::weighted, true, 2, true}, {Scheme::link, 0.1, 10, 1, 1}),
                  NumericalError);
  CHECK_THROWS_AS(cv_error(data, SymWeights(10, {}), reg, {}, {}), InputError);
  CHECK_THROWS_AS(cv_error(data, single, reg, {}, {Scheme::link, 1.0, 10, 1, 1}), InputError);
  CHECK_THROWS_AS(cv_error(data, single, reg, {}, {Scheme::link, 0.1, 0, 1, 1}), InputError);
}

TEST_CASE("cv error is independent of the thread count") {
  Rng rng(9);
  const auto data = random_data(rng, {2, 3}, {25, 25});
  const SymWeights w = random_weights(rng, data.layout, 0.1);
  const Regularizer reg = domain_regularizer(data, degree(w)).with_gammas(0.1, 0.0);
  for (Scheme s : {Scheme::link, Scheme::node}) {
    const CvResult a = cv_error(data, w, reg, {}, {s, 0.1, 12, 77, 1});
    const CvResult b = cv_error(data, w, reg, {}, {s, 0.1, 12, 77, 4});
    CHECK(a.mean == b.mean);
    CHECK(a.se == b.se);
    CHECK(a.skipped == b.skipped);
    const CvResult c = cv_error(data, w, reg, {}, {s, 0.1, 12, 78, 1});
    CHECK_FALSE(a.mean == c.mean);
  }
}

TEST_CASE("error curve rows, failures and CSV output") {
  const auto dir = mca::testing::scratch_dir("errors_cv");
  Rng rng(10);
  const auto data = random_data(rng, {2, 4}, {30, 3});
  const SymWeights w = random_weights(rng, data.layout, 0.3);
  const SymWeights wbar = random_weights(rng, data.layout, 0.6);
  // Three rows in a 4-dimensional domain: G is singular without regularization.
  const Regularizer reg = domain_regularizer(data, degree(w));
  const std::vector<std::pair<double, double>> grid{{0.0, 0.0}, {0.1, 0.0}, {1.0, 0.0}};
  FitOptions opts{VarianceMode::weighted, true, 3, false};
  const CvConfig cv{Scheme::link, 0.1, 5, 3, 1};

  const ErrorReport plain = error_curve(data, w, reg, grid, opts, cv);
  REQUIRE(plain.failures.size() == 1);
  CHECK(plain.failures[0].gamma_M == 0.0);
  CHECK(plain.failures[0].message.find("gamma_M") != std::string::npos);
  CHECK(plain.rows.size() == 2 * 3);
  for (const auto& r : plain.rows) CHECK_FALSE(r.phi_true.has_value());
  write_error_csv(dir / "plain.csv", plain);
  write_failures_csv(dir / "failures.csv", plain);
  std::istringstream lines(slurp(dir / "plain.csv"));
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  CHECK(header == kErrorCsvHeader);
  CHECK(first.find(",,") != std::string::npos);  // empty phi_true
  CHECK(first.rfind("0.10000000000000001,0,1,", 0) == 0);

  opts.substitute_zero_gamma = true;
  const ErrorReport full = error_curve(data, w, reg, grid, opts, cv, {wbar, 0.3, std::nullopt});
  CHECK(full.failures.empty());
  REQUIRE(full.rows.size() == 9);
  CHECK(full.rows[0].gamma_M == kZeroGammaSubstitute);
  CHECK(full.rows[2].k == 3);
  // A single grid point matches the individual estimators.
  const Regularizer point = reg.with_gammas(1.0, 0.0);
  const FitResult f = fit(data, w, point, opts);
  const Eigen::VectorXd phi_fit = fit_error(f, w);
  const Eigen::VectorXd phi_true = true_error(f, wbar, 0.3);
  const CvResult c = cv_error(data, w, point, opts, cv);
  for (Index k = 0; k < 3; ++k) {
    const ErrorRow& r = full.rows[static_cast<std::size_t>(6 + k)];
    CHECK(r.lambda == f.model.lambdas[k]);
    CHECK(same(r.phi_fit, phi_fit[k]));
    CHECK(same(r.phi_cv, c.mean[k]));
    CHECK(same(*r.phi_true, phi_true[k]));
  }
  write_error_csv(dir / "a.csv", full);
  write_error_csv(dir / "b.csv", error_curve(data, w, reg, grid, opts, cv, {wbar, 0.3, std::nullopt}));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK_THROWS_AS(error_curve(data, w, reg, {}, opts, cv), InputError);
}

TEST_CASE("error scale names") {
  CHECK(parse_error_scale("raw") == ErrorScale::raw);
  CHECK(parse_error_scale("eval_weight") == ErrorScale::eval_weight);
  CHECK(std::string(to_string(ErrorScale::fit_weight)) == "fit_weight");
  CHECK_THROWS_AS(parse_error_scale("sum"), InputError);
}
