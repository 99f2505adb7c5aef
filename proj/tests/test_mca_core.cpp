#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "mca/error.hpp"
#include "mca/mca_core.hpp"
#include "test_support.hpp"

using namespace mca;
using mca::testing::dense;
using mca::testing::random_data;
using mca::testing::random_weights;

namespace {

double brute_phi(const Eigen::VectorXd& y, const Eigen::MatrixXd& W) {
  double s = 0.0;
  for (Index i = 0; i < W.rows(); ++i) {
    for (Index j = 0; j < W.cols(); ++j) s += 0.5 * W(i, j) * (y[i] - y[j]) * (y[i] - y[j]);
  }
  return s;
}

Eigen::MatrixXd random_spd(Rng& rng, Index P) {
  Eigen::MatrixXd B(P, P);
  for (Index i = 0; i < P; ++i) {
    for (Index j = 0; j < P; ++j) B(i, j) = rng.normal();
  }
  return B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(P, P);
}

/// Pairs node i of domain 0 with node i of every other domain (weight 1).
SymWeights paired(const DomainLayout& layout) {
  std::vector<WeightEntry> e;
  const Index n = layout.count(0);
  for (Index d = 0; d < layout.domains(); ++d) {
    for (Index f = d + 1; f < layout.domains(); ++f) {
      for (Index i = 0; i < n; ++i) e.push_back({layout.row_offset(f) + i, layout.row_offset(d) + i, 1.0});
    }
  }
  return SymWeights(layout.total_count(), std::move(e));
}

}  // namespace

TEST_CASE("Gram matrices on hand examples") {
  const MultiDomainData data({Eigen::MatrixXd::Ones(2, 1)});
  const SymWeights empty(2, {});
  const GramPair g0 = build_gram(data, empty, Regularizer::none(1));
  CHECK(g0.G.isZero());
  CHECK(g0.H.isZero());
  const SymWeights one(2, {{1, 0, 1.0}});
  const GramPair g = build_gram(data, one, Regularizer::none(1));
  CHECK(g.G(0, 0) == 2.0);
  CHECK(g.H(0, 0) == 2.0);
  CHECK(omega(data, one)(0, 0) == 4.0);
  CHECK(omega(data, empty).isZero());
}

TEST_CASE("Gram matrices agree with dense products") {
  Rng rng(21);
  const auto data = random_data(rng, {2, 3, 2}, {6, 5, 7});
  const SymWeights w = random_weights(rng, data.layout, 0.3, true);
  const Eigen::MatrixXd X = assemble(data);
  const Eigen::MatrixXd W = dense(w);
  const Eigen::VectorXd m = W.rowwise().sum();
  CHECK((weighted_gram(data, degree(w)) - X.transpose() * m.asDiagonal() * X).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd H = cross_gram(data, w);
  CHECK((H - X.transpose() * W * X).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(H == H.transpose());
  CHECK((plain_gram(data) - X.transpose() * X).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd Om = omega(data, w);
  CHECK((Om - weighted_gram(data, degree(w)) - H).cwiseAbs().maxCoeff() < 1e-12);

  Regularizer reg = Regularizer::identity(7, 0.25, 0.5);
  const GramPair gp = build_gram(data, w, reg);
  CHECK((gp.G - X.transpose() * m.asDiagonal() * X - 0.25 * Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((gp.H - H - 0.5 * Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(build_gram(data, SymWeights(3, {}), reg), InputError);
}

TEST_CASE("solve: scalar and identity-metric cases") {
  GramPair gp{Eigen::MatrixXd::Constant(1, 1, 4.0), Eigen::MatrixXd::Constant(1, 1, 2.0)};
  const EigenSolution s = solve(gp);
  CHECK(s.lambdas[0] == doctest::Approx(0.5));
  CHECK(s.A(0, 0) == doctest::Approx(0.5));

  Rng rng(9);
  const Eigen::MatrixXd H = mca::testing::random_symmetric(rng, 5);
  const EigenSolution t = solve({Eigen::MatrixXd::Identity(5, 5), H});
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  for (Index k = 0; k < 5; ++k) {
    CHECK(t.lambdas[k] == doctest::Approx(es.eigenvalues()[4 - k]).epsilon(1e-12));
    CHECK(std::abs(t.A.col(k).dot(es.eigenvectors().col(4 - k))) == doctest::Approx(1.0).epsilon(1e-10));
  }
  for (Index k = 1; k < 5; ++k) CHECK(t.lambdas[k - 1] >= t.lambdas[k]);
}

TEST_CASE("solve matches a Cholesky-based generalized eigensolver") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const Eigen::MatrixXd G = random_spd(rng, 4);
    const Eigen::MatrixXd H = mca::testing::random_symmetric(rng, 4);
    const EigenSolution s = solve({G, H});
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ref(H, G);
    for (Index k = 0; k < 4; ++k) {
      CHECK(std::abs(s.lambdas[k] - ref.eigenvalues()[3 - k]) < 1e-10);
      // Both are G-normalized, so equal spans mean a = +/- a_ref.
      const Eigen::VectorXd a = s.A.col(k), b = ref.eigenvectors().col(3 - k);
      CHECK(std::min((a - b).cwiseAbs().maxCoeff(), (a + b).cwiseAbs().maxCoeff()) < 1e-10);
    }
    // Sign convention: first coordinate of u = G^{1/2} a that is not negligible is positive.
    const Eigen::MatrixXd U = inverse_sqrt(G).inverse() * s.A;
    for (Index k = 0; k < 4; ++k) {
      Index first = 0;
      while (std::abs(U(first, k)) <= 1e-10 * U.col(k).cwiseAbs().maxCoeff()) ++first;
      CHECK(U(first, k) > 0.0);
    }
    const auto r = constraint_residuals({G, H}, s);
    CHECK(r.g < 1e-10);
    CHECK(r.h < 1e-10);
  }
}

TEST_CASE("singular G is refused with a diagnostic") {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, 3);
  G(0, 0) = 1.0;
  G(1, 1) = 2.0;
  try {
    solve({G, Eigen::MatrixXd::Identity(3, 3)});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("smallest eigenvalue") != std::string::npos);
    CHECK(msg.find("gamma_M") != std::string::npos);
  }
}

TEST_CASE("block-wise inverse square root equals the dense one") {
  Rng rng(33);
  const auto data = random_data(rng, {2, 3}, {8, 9});
  const SymWeights w = random_weights(rng, data.layout, 0.3);
  const GramPair gp = build_gram(data, w, Regularizer::identity(5, 0.1));
  const EigenSolution a = solve(gp), b = solve(gp, data.layout);
  CHECK((a.lambdas - b.lambdas).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.A - b.A).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd R = inverse_sqrt(gp.G);
  CHECK((R * gp.G * R - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rescaling conventions") {
  // X = I_N, A = I, unweighted: b_k = sqrt(N).
  const Rescaling r = rescale(Eigen::MatrixXd::Identity(4, 4), Eigen::MatrixXd::Identity(4, 4), 4.0, 4);
  for (Index k = 0; k < 4; ++k) CHECK(r.b[k] == doctest::Approx(2.0));

  // m = (1, 2): each mode meets its own constraint.
  const MultiDomainData data({(Eigen::MatrixXd(2, 1) << 1.0, -0.5).finished()});
  const Eigen::VectorXd m = (Eigen::VectorXd(2) << 1.0, 2.0).finished();
  const Eigen::MatrixXd A = Eigen::MatrixXd::Constant(1, 1, 0.7);
  const Rescaling rw = rescale(A, weighted_gram(data, m), m.sum(), 1);
  const Eigen::MatrixXd yw = embed(data, A, rw.b);
  CHECK((m.array() * yw.col(0).array().square()).sum() == doctest::Approx(3.0).epsilon(1e-12));
  const Rescaling ru = rescale(A, plain_gram(data), 2.0, 1);
  const Eigen::MatrixXd yu = embed(data, A, ru.b);
  CHECK(yu.col(0).squaredNorm() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rw.b[0] != doctest::Approx(ru.b[0]));

  // A direction the normalizer cannot see is degenerate.
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2, 2);
  Q(0, 0) = 1.0;
  const Rescaling deg = rescale(Eigen::MatrixXd::Identity(2, 2), Q, 1.0, 2);
  CHECK_FALSE(deg.degenerate[0]);
  CHECK(deg.degenerate[1]);
  CHECK(deg.b[1] == 0.0);
}

TEST_CASE("matching error: hand values and brute-force identity") {
  const SymWeights one(2, {{1, 0, 1.0}});
  Eigen::MatrixXd y(2, 1);
  y << 1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0);
  CHECK(matching_error(y, one)[0] == doctest::Approx(2.0));
  CHECK(matching_correlation(y, one)(0, 0) == doctest::Approx(-1.0));
  CHECK(matching_error(Eigen::MatrixXd::Constant(2, 1, 3.0), one)[0] == 0.0);
  CHECK(matching_correlation(y, SymWeights(2, {})).isZero());
  CHECK_THROWS_AS(matching_error(y, SymWeights(2, {}), true), InputError);

  Rng rng(12);
  const DomainLayout layout({1, 1}, {6, 7});
  const SymWeights w = random_weights(rng, layout, 0.4, true);
  const Eigen::MatrixXd W = dense(w);
  Eigen::MatrixXd Y(13, 3);
  for (Index i = 0; i < 13; ++i) {
    for (Index k = 0; k < 3; ++k) Y(i, k) = rng.normal();
  }
  const Eigen::VectorXd phi = matching_error(Y, w);
  const Eigen::VectorXd phin = matching_error(Y, w, true);
  const Eigen::MatrixXd L = Eigen::MatrixXd(W.rowwise().sum().asDiagonal()) - W;
  for (Index k = 0; k < 3; ++k) {
    CHECK(std::abs(phi[k] - brute_phi(Y.col(k), W)) < 1e-12);
    CHECK(std::abs(phi[k] - Y.col(k).dot(L * Y.col(k))) < 1e-12);
    CHECK(phin[k] == doctest::Approx(phi[k] / W.sum()).epsilon(1e-13));
  }
  CHECK((matching_correlation(Y, w) - Y.transpose() * W * Y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unregularized fit: matching correlations are the eigenvalues") {
  Rng rng(41);
  const auto data = random_data(rng, {2, 3, 2}, {15, 12, 14});
  const SymWeights w = random_weights(rng, data.layout, 0.25);
  const FitResult f = fit(data, w, Regularizer::none(7), {VarianceMode::weighted, true, 7, true});
  CHECK_FALSE(f.model.zero_gamma_substituted);
  const double total = degree(w).sum();
  const Eigen::MatrixXd Yn = f.Y / std::sqrt(total);
  const Eigen::MatrixXd C = matching_correlation(Yn, w);
  for (Index k = 0; k < 7; ++k) {
    CHECK(std::abs(C(k, k) - f.model.lambdas[k]) < 1e-10);
    CHECK(f.model.lambdas[k] <= 1.0 + 1e-12);
    CHECK(f.model.lambdas[k] >= -1.0 - 1e-12);
    for (Index l = 0; l < 7; ++l) {
      if (l != k) CHECK(std::abs(C(k, l)) < 1e-10);
    }
  }
  // Weighted convention: sum m y^2 = sum m.
  const Eigen::VectorXd m = degree(w);
  for (Index k = 0; k < 7; ++k) {
    CHECK((m.array() * f.Y.col(k).array().square()).sum() == doctest::Approx(total).epsilon(1e-10));
  }
}

TEST_CASE("truncation equals the first columns of the full solution") {
  Rng rng(52);
  const auto data = random_data(rng, {3, 4}, {20, 18});
  const SymWeights w = random_weights(rng, data.layout, 0.2);
  const Regularizer reg = domain_regularizer(data, degree(w)).with_gammas(0.1, 0.0);
  const FitResult full = fit(data, w, reg, {VarianceMode::weighted, true, 7, true});
  const FitResult part = fit(data, w, reg, {VarianceMode::weighted, true, 3, true});
  CHECK(part.Y == full.Y.leftCols(3));
  CHECK(part.model.b == full.model.b.head(3));
}

TEST_CASE("K defaults to K+ and gamma_M = 0 is substituted") {
  Rng rng(60);
  const auto data = random_data(rng, {3, 3}, {20, 20});
  const SymWeights w = random_weights(rng, data.layout, 0.2);
  const Regularizer reg = domain_regularizer(data, degree(w));
  const FitResult f = fit(data, w, reg);
  CHECK(f.model.zero_gamma_substituted);
  CHECK(f.model.reg.gamma_M == kZeroGammaSubstitute);
  CHECK(f.model.requested_gamma_M == 0.0);
  Index positive = 0;
  for (Index k = 0; k < 6; ++k) positive += f.model.lambdas[k] > 1e-8;
  CHECK(f.model.K_plus == positive);
  CHECK(f.model.K == positive);
  const FitResult g = fit(data, w, reg, {VarianceMode::weighted, true, 0, false});
  CHECK_FALSE(g.model.zero_gamma_substituted);
  CHECK_THROWS_AS(fit(data, w, reg, {VarianceMode::weighted, true, 7, true}), InputError);
}

TEST_CASE("two paired domains reduce to CCA") {
  Rng rng(70);
  const Index n = 40;
  auto data = random_data(rng, {2, 3}, {n, n});
  data.blocks[1].col(0) += 0.8 * data.blocks[0].col(0);
  data.blocks[1].col(2) -= 0.5 * data.blocks[0].col(1);
  data = MultiDomainData(data.blocks);
  const SymWeights w = paired(data.layout);
  const FitResult f = fit(data, w, Regularizer::none(5), {VarianceMode::weighted, true, 5, true});
  // Oracle: singular values of Q1^T Q2 for thin QR factors of the centered blocks.
  auto q = [](Eigen::MatrixXd X) {
    X.rowwise() -= X.colwise().mean();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols()));
  };
  const Eigen::VectorXd rho =
      Eigen::JacobiSVD<Eigen::MatrixXd>(q(data.blocks[0]).transpose() * q(data.blocks[1])).singularValues();
  CHECK(f.model.K_plus == 2);
  for (Index k = 0; k < 2; ++k) CHECK(std::abs(f.model.lambdas[k] - rho[k]) < 1e-10);
  // Symmetric spectrum: lambda and -lambda pair up; the extra dimension is 0.
  CHECK(std::abs(f.model.lambdas[4] + rho[0]) < 1e-10);
  CHECK(std::abs(f.model.lambdas[3] + rho[1]) < 1e-10);
  CHECK(std::abs(f.model.lambdas[2]) < 1e-10);
}

TEST_CASE("scalar domains reduce to PCA of the correlation matrix") {
  Rng rng(80);
  const Index n = 30, D = 3;
  Eigen::MatrixXd Z(n, D);
  for (Index i = 0; i < n; ++i) {
    const double f = rng.normal();
    for (Index d = 0; d < D; ++d) Z(i, d) = (1.0 + static_cast<double>(d)) * (f + 0.7 * rng.normal());
  }
  std::vector<Eigen::MatrixXd> blocks;
  for (Index d = 0; d < D; ++d) blocks.push_back(Z.col(d));
  const MultiDomainData data(blocks);
  const SymWeights w = paired(data.layout);
  const FitResult f = fit(data, w, Regularizer::none(D), {VarianceMode::weighted, true, D, true});
  // Oracle: principal components of the standardized columns via SVD.
  Eigen::MatrixXd S = Z.rowwise() - Z.colwise().mean();
  for (Index d = 0; d < D; ++d) S.col(d) /= S.col(d).norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(S, Eigen::ComputeThinV);
  for (Index k = 0; k < D; ++k) {
    const double mu = svd.singularValues()[k] * svd.singularValues()[k];
    CHECK(std::abs(f.model.lambdas[k] - (mu - 1.0) / static_cast<double>(D - 1)) < 1e-10);
    // Embedding is proportional to the principal component scores.
    const Eigen::VectorXd pc = S * svd.matrixV().col(k);
    const Eigen::VectorXd y = f.Y.col(k).head(n) + f.Y.col(k).segment(n, n) + f.Y.col(k).tail(n);
    CHECK(std::abs(std::abs(y.normalized().dot(pc.normalized())) - 1.0) < 1e-10);
  }
}

TEST_CASE("random components have matching error near one") {
  Rng rng(90);
  const DomainLayout layout({1, 1}, {40, 40});
  const SymWeights w = random_weights(rng, layout, 0.1);
  const Eigen::VectorXd m = degree(w);
  const int draws = 4000;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < draws; ++r) {
    Eigen::MatrixXd y(80, 1);
    for (Index i = 0; i < 80; ++i) y(i, 0) = rng.normal();
    const double phi = matching_error(y, w)[0] / (m.array() * y.col(0).array().square()).sum();
    sum += phi;
    sum2 += phi * phi;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum2 / draws - mean * mean) / (draws - 1));
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("transform reproduces training rows and is affine") {
  Rng rng(101);
  const auto data = random_data(rng, {2, 3}, {15, 15});
  const SymWeights w = random_weights(rng, data.layout, 0.2);
  const Regularizer reg = domain_regularizer(data, degree(w)).with_gammas(0.1, 0.0);
  const FitResult f = fit(data, w, reg, {VarianceMode::weighted, true, 3, true});
  for (Index d = 0; d < 2; ++d) {
    const Eigen::MatrixXd Z = f.model.transform(data.blocks[static_cast<std::size_t>(d)], d);
    CHECK((Z - f.Y.middleRows(data.layout.row_offset(d), 15)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 3);
  const Eigen::MatrixXd z0 = f.model.transform(zero, 1);
  const Eigen::MatrixXd Ad = f.model.A.block(2, 0, 3, 3);
  CHECK((z0 - (-f.model.offsets[1] * Ad * f.model.b.asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::MatrixXd x(1, 3);
  x << 0.3, -1.0, 2.0;
  const Eigen::MatrixXd lhs = f.model.transform(2.5 * x, 1) - z0;
  const Eigen::MatrixXd rhs = 2.5 * (f.model.transform(x, 1) - z0);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(f.model.transform(Eigen::MatrixXd::Zero(1, 2), 1), InputError);
}

TEST_CASE("models round-trip through JSON") {
  const auto dir = mca::testing::scratch_dir("mca_core");
  Rng rng(111);
  const auto data = random_data(rng, {2, 2}, {10, 12});
  const SymWeights w = random_weights(rng, data.layout, 0.3);
  const FitResult f = fit(data, w, domain_regularizer(data, degree(w)), {VarianceMode::unweighted, true, 2, true});
  save_model(dir / "m.json", f.model);
  const McaModel m = load_model(dir / "m.json");
  CHECK(m.layout == f.model.layout);
  CHECK(m.A == f.model.A);
  CHECK(m.lambdas == f.model.lambdas);
  CHECK(m.b == f.model.b);
  CHECK(m.K == 2);
  CHECK(m.K_plus == f.model.K_plus);
  CHECK(m.variance == VarianceMode::unweighted);
  CHECK(m.zero_gamma_substituted);
  CHECK(m.reg.L_M == f.model.reg.L_M);
  CHECK(m.offsets[1] == f.model.offsets[1]);
  CHECK(m.transform(data.blocks[0], 0) == f.model.transform(data.blocks[0], 0));

  {
    std::ofstream out(dir / "bad.json");
    out << R"({"format": "mca-model", "version": 99})";
  }
  CHECK_THROWS_AS(load_model(dir / "bad.json"), InputError);
  {
    std::ofstream out(dir / "junk.json");
    out << "not json";
  }
  CHECK_THROWS_AS(load_model(dir / "junk.json"), InputError);
}
