#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mca/rng.hpp"

namespace mca {

using Index = Eigen::Index;

/// One stored weight. Only the lower triangle (i >= j) is kept; the entry
/// stands for both w_ij and w_ji.
struct WeightEntry {
  Index i = 0;
  Index j = 0;
  double w = 0.0;

  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

/**
 * Sparse symmetric nonnegative matching-weight matrix on N nodes.
 *
 * Entries are sorted by (i, j), strictly positive, and unique. Diagonal
 * entries w_ii are allowed and count once toward the degree of node i.
 * Values are immutable after construction.
 */
class SymWeights {
 public:
  SymWeights() = default;

  /// Validates and sorts `entries`. Zero weights are dropped; negative or
  /// non-finite weights, i < j, out-of-range indices and duplicate pairs
  /// throw InputError.
  SymWeights(Index n, std::vector<WeightEntry> entries);

  Index size() const noexcept { return n_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::span<const WeightEntry> entries() const noexcept { return entries_; }

  /// Sum of stored values; off-diagonal entries counted once.
  double stored_sum() const noexcept;

  /// c * W, for c > 0.
  SymWeights scaled(double c) const;

  friend bool operator==(const SymWeights&, const SymWeights&) = default;

 private:
  Index n_ = 0;
  std::vector<WeightEntry> entries_;
};

/// Row sums m_i = sum_j w_ij.
Eigen::VectorXd degree(const SymWeights& w);

enum class Scheme { link, node };

/// Result of a resampling split: `test` is W*, `train` is W - W*, and
/// `kappa` is the effective per-link resampling probability used to rescale
/// the two parts.
struct WeightSplit {
  SymWeights test;
  SymWeights train;
  double kappa = 0.0;
};

/// Keeps each stored entry independently with probability eps in (0, 1].
SymWeights link_sample(const SymWeights& wbar, double eps, Rng& rng);
SymWeights link_sample(const SymWeights& wbar, double eps, std::uint64_t seed);

/// Keeps each node with probability xi in (0, 1]; an entry survives iff both
/// endpoints survive. Node draws are made in index order 0..N-1.
SymWeights node_sample(const SymWeights& wbar, double xi, Rng& rng);
SymWeights node_sample(const SymWeights& wbar, double xi, std::uint64_t seed);

/// Sends each entry to the test part independently with probability kappa in (0, 1).
WeightSplit link_resample(const SymWeights& w, double kappa, Rng& rng);
WeightSplit link_resample(const SymWeights& w, double kappa, std::uint64_t seed);

/// Keeps each node for training with probability 1 - nu; an entry is in the
/// test part unless both endpoints are kept. Effective kappa = 1 - (1 - nu)^2.
WeightSplit node_resample(const SymWeights& w, double nu, Rng& rng);
WeightSplit node_resample(const SymWeights& w, double nu, std::uint64_t seed);

/// Dispatches to link_sample / node_sample.
SymWeights sample(const SymWeights& wbar, Scheme scheme, double prob, Rng& rng);

/// Dispatches to link_resample / node_resample.
WeightSplit resample(const SymWeights& w, Scheme scheme, double prob, Rng& rng);

/// Effective link-level probability of a scheme: prob for link, prob^2 for
/// node sampling.
double effective_sampling_prob(Scheme scheme, double prob);

/**
 * Reads a weight file: one `i j w` triple per line, 0-based, i >= j, `#`
 * starts a comment. A `# n = <N>` comment declares the node count. If
 * `n` is positive it takes precedence and the header must agree with it;
 * otherwise the header is used, falling back to max index + 1.
 */
SymWeights read_weights(const std::filesystem::path& path, Index n = 0);

/// Writes the format read by read_weights, with a `# n = <N>` header.
void write_weights(const std::filesystem::path& path, const SymWeights& w);

Scheme parse_scheme(const std::string& name);
const char* to_string(Scheme scheme);

}  // namespace mca
