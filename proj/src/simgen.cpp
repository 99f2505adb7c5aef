#include "mca/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mca/error.hpp"

namespace mca {

namespace {

enum Stream : std::uint64_t { kLoadings = 1, kNoise = 2, kCounts = 3 };

// Inverse-CDF draw from P(c) proportional to c^{-s}, c = 1..n.
Index draw_powerlaw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1)) + 1;
}

}  // namespace

WeightKind parse_weight_kind(const std::string& name) {
  if (name == "regular") return WeightKind::regular;
  if (name == "powerlaw") return WeightKind::powerlaw;
  throw InputError("unknown weight kind '" + name + "' (expected regular or powerlaw)");
}

const char* to_string(WeightKind kind) { return kind == WeightKind::regular ? "regular" : "powerlaw"; }

Index SimData::grid_of(Index i) const {
  const auto& layout = data.layout;
  const Index d = layout.domain_of_row(i);
  return grid[static_cast<std::size_t>(d)][static_cast<std::size_t>(i - layout.row_offset(d))];
}

std::vector<Index> grid_counts(Index n, Index points, WeightKind kind, double exponent, Rng& rng) {
  if (points < 1) throw InputError("grid must have at least one point");
  if (kind == WeightKind::regular) {
    if (n % points != 0) {
      throw InputError("regular weights need n_d divisible by the number of grid points (" +
                       std::to_string(n) + " vs " + std::to_string(points) + ")");
    }
    return std::vector<Index>(static_cast<std::size_t>(points), n / points);
  }
  if (!(exponent > 0.0)) throw InputError("power-law exponent must be positive");
  std::vector<double> cdf(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (Index c = 1; c <= n; ++c) {
    acc += std::pow(static_cast<double>(c), -exponent);
    cdf[static_cast<std::size_t>(c - 1)] = acc;
  }
  std::vector<double> raw(static_cast<std::size_t>(points));
  double total = 0.0;
  for (auto& r : raw) {
    r = static_cast<double>(draw_powerlaw(cdf, rng));
    total += r;
  }
  // Largest-remainder rescaling to an exact total of n; ties go to the lower index.
  std::vector<Index> out(raw.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  Index assigned = 0;
  for (std::size_t g = 0; g < raw.size(); ++g) {
    const double quota = raw[g] * static_cast<double>(n) / total;
    out[g] = static_cast<Index>(std::floor(quota));
    assigned += out[g];
    remainders.emplace_back(quota - std::floor(quota), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (Index extra = n - assigned, r = 0; extra > 0; --extra, ++r) {
    ++out[remainders[static_cast<std::size_t>(r)].second];
  }
  return out;
}

SimData generate(const SimConfig& cfg) {
  if (cfg.dims.empty() || cfg.dims.size() != cfg.counts.size()) {
    throw InputError("simulation needs matching, nonempty dims and counts");
  }
  if (cfg.grid_side < 1) throw InputError("grid side must be at least 1");
  if (!(cfg.noise_sd >= 0.0)) throw InputError("noise sd must be nonnegative");
  const Index D = static_cast<Index>(cfg.dims.size());
  const Index points = cfg.grid_side * cfg.grid_side;
  for (Index d = 0; d < D; ++d) {
    if (cfg.dims[d] < 1 || cfg.counts[d] < 1) throw InputError("simulation needs p_d >= 1 and n_d >= 1");
  }

  Eigen::MatrixXd grid_points(points, 2);
  for (Index g = 0; g < points; ++g) {
    grid_points(g, 0) = static_cast<double>(g / cfg.grid_side + 1);
    grid_points(g, 1) = static_cast<double>(g % cfg.grid_side + 1);
  }

  Rng loadings(cfg.seed, kLoadings);
  Rng noise(cfg.seed, kNoise);
  Rng counts_rng(cfg.seed, kCounts);

  SimData sim;
  std::vector<Eigen::MatrixXd> blocks;
  for (Index d = 0; d < D; ++d) {
    const Index p = cfg.dims[d];
    Eigen::MatrixXd B(p, 2);
    for (Index r = 0; r < p; ++r) {
      for (Index c = 0; c < 2; ++c) B(r, c) = loadings.normal();
    }
    auto per_point = grid_counts(cfg.counts[d], points, cfg.weight_kind, cfg.powerlaw_exponent, counts_rng);
    Eigen::MatrixXd X(cfg.counts[d], p);
    std::vector<Index> assignment;
    Index row = 0;
    for (Index g = 0; g < points; ++g) {
      const Eigen::VectorXd mean = B * grid_points.row(g).transpose();
      for (Index j = 0; j < per_point[static_cast<std::size_t>(g)]; ++j, ++row) {
        for (Index c = 0; c < p; ++c) X(row, c) = mean[c] + cfg.noise_sd * noise.normal();
        assignment.push_back(g);
      }
    }
    // Standardize with the population variance.
    X.rowwise() -= X.colwise().mean();
    for (Index c = 0; c < p; ++c) {
      const double sd = std::sqrt(X.col(c).squaredNorm() / static_cast<double>(X.rows()));
      if (sd > 0.0) X.col(c) /= sd;
    }
    blocks.push_back(std::move(X));
    sim.grid.push_back(std::move(assignment));
    sim.per_point.push_back(std::move(per_point));
  }
  sim.data = MultiDomainData(std::move(blocks));

  const auto& layout = sim.data.layout;
  // Global node ids by (domain, grid point).
  std::vector<std::vector<std::vector<Index>>> members(static_cast<std::size_t>(D),
                                                       std::vector<std::vector<Index>>(static_cast<std::size_t>(points)));
  for (Index d = 0; d < D; ++d) {
    const auto& a = sim.grid[static_cast<std::size_t>(d)];
    for (std::size_t r = 0; r < a.size(); ++r) {
      members[static_cast<std::size_t>(d)][static_cast<std::size_t>(a[r])].push_back(layout.row_offset(d) + static_cast<Index>(r));
    }
  }
  std::vector<WeightEntry> entries;
  for (Index d = 0; d < D; ++d) {
    for (Index e = d + 1; e < D; ++e) {
      for (Index g = 0; g < points; ++g) {
        for (Index i : members[static_cast<std::size_t>(e)][static_cast<std::size_t>(g)]) {
          for (Index j : members[static_cast<std::size_t>(d)][static_cast<std::size_t>(g)]) {
            entries.push_back({i, j, 1.0});
          }
        }
      }
    }
  }
  sim.wbar = SymWeights(layout.total_count(), std::move(entries));
  return sim;
}

Index block_link_count(const SimData& sim, Index d, Index e) {
  const auto& layout = sim.data.layout;
  Index count = 0;
  for (const auto& entry : sim.wbar.entries()) {
    const Index a = layout.domain_of_row(entry.i);
    const Index b = layout.domain_of_row(entry.j);
    if ((a == e && b == d) || (a == d && b == e)) ++count;
  }
  return count;
}

StructureDiagnostics expected_structure_check(const SimData& sim, const Eigen::MatrixXd& Y,
                                              const Eigen::VectorXd& lambdas, double tol) {
  StructureDiagnostics out;
  for (Index k = 0; k < lambdas.size(); ++k) {
    if (lambdas[k] > tol) {
      ++out.positive;
    } else if (lambdas[k] < -tol) {
      ++out.negative;
    } else {
      ++out.zero;
    }
  }
  out.within_between_ratio = std::numeric_limits<double>::quiet_NaN();
  if (Y.cols() < 2 || Y.rows() != sim.data.rows()) return out;
  const Index N = Y.rows();
  std::vector<Index> g(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) g[static_cast<std::size_t>(i)] = sim.grid_of(i);
  const Eigen::MatrixXd Z = Y.leftCols(2);
  double within = 0.0, between = 0.0;
  double n_within = 0.0, n_between = 0.0;
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < i; ++j) {
      const double dist = (Z.row(i) - Z.row(j)).norm();
      if (g[static_cast<std::size_t>(i)] == g[static_cast<std::size_t>(j)]) {
        within += dist;
        n_within += 1.0;
      } else {
        between += dist;
        n_between += 1.0;
      }
    }
  }
  if (n_within == 0.0 || n_between == 0.0) return out;
  const double mb = between / n_between;
  if (!(mb > 0.0) || !Z.allFinite()) return out;
  out.within_between_ratio = (within / n_within) / mb;
  return out;
}

}  // namespace mca
