#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mca/domains.hpp"
#include "mca/weights.hpp"

namespace mca {

enum class WeightKind { regular, powerlaw };

WeightKind parse_weight_kind(const std::string& name);
const char* to_string(WeightKind kind);

/**
 * Synthetic cross-domain benchmark. Points of a side x side grid, (1,1),
 * (1,2), ..., (side,side) in row-major order, are mapped into each domain
 * by a standard normal p_d x 2 matrix, Gaussian noise is added, and every
 * column is standardized. Vectors generated from the same grid point in
 * different domains are linked with weight 1.
 */
struct SimConfig {
  std::vector<Index> dims{10, 30, 100};
  std::vector<Index> counts{125, 250, 500};
  Index grid_side = 5;
  double noise_sd = 0.5;
  WeightKind weight_kind = WeightKind::regular;
  double powerlaw_exponent = 3.0;
  std::uint64_t seed = 0;
};

struct SimData {
  MultiDomainData data;
  SymWeights wbar;
  /// grid[d][r]: grid point (0-based) of local row r of domain d.
  std::vector<std::vector<Index>> grid;
  /// per_point[d][g]: number of domain-d vectors generated from grid point g.
  std::vector<std::vector<Index>> per_point;

  /// Grid point of global node i.
  Index grid_of(Index i) const;
};

/// Per-grid-point counts for one domain. Regular mode splits n evenly and
/// throws InputError if it does not divide; power-law mode draws from
/// P(c) proportional to c^{-exponent} on {1..n} and rescales to sum n by
/// largest remainders.
std::vector<Index> grid_counts(Index n, Index points, WeightKind kind, double exponent, Rng& rng);

/// Pure function of the config: the same seed gives bit-identical output.
SimData generate(const SimConfig& cfg);

/// Number of stored entries of Wbar between domains d < e.
Index block_link_count(const SimData& sim, Index d, Index e);

struct StructureDiagnostics {
  /// Mean distance between same-grid-point pairs over mean distance between
  /// different-grid-point pairs, in the first two embedding coordinates.
  /// NaN when undefined (fewer than two columns or a constant embedding).
  double within_between_ratio = 0.0;
  Index positive = 0;
  Index zero = 0;
  Index negative = 0;
};

inline constexpr double kSignatureZeroTolerance = 1e-8;

/// Cluster diagnostic on an embedding Y (rows = nodes) and eigenvalue
/// signature counts with |lambda| <= tol treated as zero.
StructureDiagnostics expected_structure_check(const SimData& sim, const Eigen::MatrixXd& Y,
                                              const Eigen::VectorXd& lambdas,
                                              double tol = kSignatureZeroTolerance);

}  // namespace mca
