#include "mca/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mca/error.hpp"

namespace mca {

namespace {

void check_prob(double p, bool allow_one, const char* what) {
  const bool ok = p > 0.0 && (allow_one ? p <= 1.0 : p < 1.0);
  if (!ok) {
    std::ostringstream os;
    os << what << " must lie in (0, 1" << (allow_one ? "]" : ")") << ", got " << p;
    throw InputError(os.str());
  }
}

}  // namespace

SymWeights::SymWeights(Index n, std::vector<WeightEntry> entries) : n_(n) {
  if (n < 0) throw InputError("weight matrix size must be nonnegative");
  std::erase_if(entries, [](const WeightEntry& e) { return e.w == 0.0; });
  for (const auto& e : entries) {
    if (e.i < e.j) {
      std::ostringstream os;
      os << "weight entry (" << e.i << ", " << e.j << ") violates i >= j";
      throw InputError(os.str());
    }
    if (e.j < 0 || e.i >= n) {
      std::ostringstream os;
      os << "weight entry (" << e.i << ", " << e.j << ") out of range for N = " << n;
      throw InputError(os.str());
    }
    if (!std::isfinite(e.w) || e.w < 0.0) {
      std::ostringstream os;
      os << "weight entry (" << e.i << ", " << e.j << ") has invalid value " << e.w;
      throw InputError(os.str());
    }
  }
  std::sort(entries.begin(), entries.end(), [](const WeightEntry& a, const WeightEntry& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  for (std::size_t k = 1; k < entries.size(); ++k) {
    if (entries[k].i == entries[k - 1].i && entries[k].j == entries[k - 1].j) {
      std::ostringstream os;
      os << "duplicate weight entry (" << entries[k].i << ", " << entries[k].j << ")";
      throw InputError(os.str());
    }
  }
  entries_ = std::move(entries);
}

double SymWeights::stored_sum() const noexcept {
  double s = 0.0;
  for (const auto& e : entries_) s += e.w;
  return s;
}

SymWeights SymWeights::scaled(double c) const {
  if (!(c > 0.0) || !std::isfinite(c)) throw InputError("weight scale factor must be positive");
  auto out = entries_;
  for (auto& e : out) e.w *= c;
  return SymWeights(n_, std::move(out));
}

Eigen::VectorXd degree(const SymWeights& w) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(w.size());
  for (const auto& e : w.entries()) {
    m[e.i] += e.w;
    if (e.i != e.j) m[e.j] += e.w;
  }
  return m;
}

SymWeights link_sample(const SymWeights& wbar, double eps, Rng& rng) {
  check_prob(eps, true, "link sampling probability");
  std::vector<WeightEntry> kept;
  for (const auto& e : wbar.entries()) {
    if (rng.bernoulli(eps)) kept.push_back(e);
  }
  return SymWeights(wbar.size(), std::move(kept));
}

SymWeights link_sample(const SymWeights& wbar, double eps, std::uint64_t seed) {
  Rng rng(seed);
  return link_sample(wbar, eps, rng);
}

SymWeights node_sample(const SymWeights& wbar, double xi, Rng& rng) {
  check_prob(xi, true, "node sampling probability");
  std::vector<char> z(static_cast<std::size_t>(wbar.size()));
  for (auto& zi : z) zi = rng.bernoulli(xi) ? 1 : 0;
  std::vector<WeightEntry> kept;
  for (const auto& e : wbar.entries()) {
    if (z[e.i] && z[e.j]) kept.push_back(e);
  }
  return SymWeights(wbar.size(), std::move(kept));
}

SymWeights node_sample(const SymWeights& wbar, double xi, std::uint64_t seed) {
  Rng rng(seed);
  return node_sample(wbar, xi, rng);
}

WeightSplit link_resample(const SymWeights& w, double kappa, Rng& rng) {
  check_prob(kappa, false, "link resampling probability");
  std::vector<WeightEntry> test, train;
  for (const auto& e : w.entries()) {
    (rng.bernoulli(kappa) ? test : train).push_back(e);
  }
  return {SymWeights(w.size(), std::move(test)), SymWeights(w.size(), std::move(train)), kappa};
}

WeightSplit link_resample(const SymWeights& w, double kappa, std::uint64_t seed) {
  Rng rng(seed);
  return link_resample(w, kappa, rng);
}

WeightSplit node_resample(const SymWeights& w, double nu, Rng& rng) {
  check_prob(nu, false, "node resampling probability");
  std::vector<char> keep(static_cast<std::size_t>(w.size()));
  for (auto& k : keep) k = rng.bernoulli(1.0 - nu) ? 1 : 0;
  std::vector<WeightEntry> test, train;
  for (const auto& e : w.entries()) {
    (keep[e.i] && keep[e.j] ? train : test).push_back(e);
  }
  const double kappa = 1.0 - (1.0 - nu) * (1.0 - nu);
  return {SymWeights(w.size(), std::move(test)), SymWeights(w.size(), std::move(train)), kappa};
}

WeightSplit node_resample(const SymWeights& w, double nu, std::uint64_t seed) {
  Rng rng(seed);
  return node_resample(w, nu, rng);
}

SymWeights sample(const SymWeights& wbar, Scheme scheme, double prob, Rng& rng) {
  return scheme == Scheme::link ? link_sample(wbar, prob, rng) : node_sample(wbar, prob, rng);
}

WeightSplit resample(const SymWeights& w, Scheme scheme, double prob, Rng& rng) {
  return scheme == Scheme::link ? link_resample(w, prob, rng) : node_resample(w, prob, rng);
}

double effective_sampling_prob(Scheme scheme, double prob) {
  return scheme == Scheme::link ? prob : prob * prob;
}

SymWeights read_weights(const std::filesystem::path& path, Index n) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open weight file: " + path.string());
  std::vector<WeightEntry> entries;
  Index declared = -1;
  Index max_index = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      std::string comment = line.substr(hash + 1);
      std::erase(comment, ' ');
      if (comment.rfind("n=", 0) == 0) declared = std::stoll(comment.substr(2));
      line.resize(hash);
    }
    std::istringstream fields(line);
    WeightEntry e;
    if (!(fields >> e.i)) continue;
    std::string extra;
    if (!(fields >> e.j >> e.w) || (fields >> extra)) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected `i j w`");
    }
    if (e.i < e.j) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": entry (" +
                       std::to_string(e.i) + ", " + std::to_string(e.j) + ") violates i >= j");
    }
    max_index = std::max(max_index, e.i);
    entries.push_back(e);
  }
  if (n > 0 && declared >= 0 && declared != n) {
    throw InputError(path.string() + ": declares n = " + std::to_string(declared) +
                     " but " + std::to_string(n) + " nodes were expected");
  }
  const Index size = n > 0 ? n : (declared >= 0 ? declared : max_index + 1);
  try {
    return SymWeights(size, std::move(entries));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_weights(const std::filesystem::path& path, const SymWeights& w) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write weight file: " + path.string());
  out << "# n = " << w.size() << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : w.entries()) out << e.i << ' ' << e.j << ' ' << e.w << '\n';
}

Scheme parse_scheme(const std::string& name) {
  if (name == "link") return Scheme::link;
  if (name == "node") return Scheme::node;
  throw InputError("unknown sampling scheme '" + name + "' (expected link or node)");
}

const char* to_string(Scheme scheme) { return scheme == Scheme::link ? "link" : "node"; }

}  // namespace mca
