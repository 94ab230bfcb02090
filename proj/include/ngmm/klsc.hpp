#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "ngmm/common.hpp"

namespace ngmm {

/// Greedy maximin selection order. selection[r] is the original point
/// index chosen at rank r; l[r] is the exact minimum distance from that
/// point to all previously selected ones (+inf for the first).
struct MaximinOrdering {
  std::vector<int> selection;
  std::vector<double> l;
  std::vector<int> factor_of;  // original index -> factor index

  int n() const { return static_cast<int>(selection.size()); }
  /// Factor index space reverses the selection order: the first-selected
  /// (coarsest) point gets the last factor index, so each column's
  /// neighbors among earlier-selected points sit below the diagonal.
  int orig(int factor_index) const {
    return selection[static_cast<std::size_t>(n() - 1 - factor_index)];
  }
  double l_of_factor(int factor_index) const {
    return l[static_cast<std::size_t>(n() - 1 - factor_index)];
  }
};

/// Exact O(n^2) greedy maximin ordering. The first point is fixed to
/// original index 0; ties break toward the lowest original index.
template <class Dist>
MaximinOrdering reverse_maximin(int n_points, Dist&& dist) {
  require(n_points >= 1, "reverse_maximin: need at least one point");
  MaximinOrdering ord;
  ord.selection.reserve(static_cast<std::size_t>(n_points));
  ord.l.reserve(static_cast<std::size_t>(n_points));
  std::vector<double> mind(static_cast<std::size_t>(n_points),
                           std::numeric_limits<double>::infinity());
  std::vector<char> used(static_cast<std::size_t>(n_points), 0);

  int cur = 0;
  ord.selection.push_back(cur);
  ord.l.push_back(std::numeric_limits<double>::infinity());
  used[0] = 1;
  for (int r = 1; r < n_points; ++r) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n_points; ++i) {
      auto iu = static_cast<std::size_t>(i);
      if (used[iu]) continue;
      double d = dist(i, cur);
      if (d < mind[iu]) mind[iu] = d;
      if (mind[iu] > best_d) {
        best_d = mind[iu];
        best = i;
      }
    }
    cur = best;
    used[static_cast<std::size_t>(cur)] = 1;
    ord.selection.push_back(cur);
    ord.l.push_back(best_d);
  }
  ord.factor_of.assign(static_cast<std::size_t>(n_points), -1);
  for (int r = 0; r < n_points; ++r)
    ord.factor_of[static_cast<std::size_t>(ord.selection[static_cast<std::size_t>(r)])] =
        n_points - 1 - r;
  return ord;
}

/// Per-column sparsity sets in factor index space. Column k holds k first,
/// followed (ascending) by the factor indices of earlier-selected points
/// within distance rho * l_k.
struct SparsityPattern {
  std::vector<std::vector<int>> cols;
  double rho = 2.0;

  std::size_t nnz() const {
    std::size_t t = 0;
    for (const auto& c : cols) t += c.size();
    return t;
  }
};

template <class Dist>
SparsityPattern build_pattern(const MaximinOrdering& ord, double rho,
                              Dist&& dist) {
  require(rho >= 1.0, "build_pattern: rho must be >= 1");
  int n = ord.n();
  SparsityPattern pat;
  pat.rho = rho;
  pat.cols.assign(static_cast<std::size_t>(n), {});
  for (int k = 0; k < n; ++k) {
    auto& col = pat.cols[static_cast<std::size_t>(k)];
    col.push_back(k);
    double lk = ord.l_of_factor(k);
    double cutoff = std::isinf(lk) ? std::numeric_limits<double>::infinity()
                                   : rho * lk;
    int ik = ord.orig(k);
    // strict inequality: at rho = 1 a point exactly at the selection
    // distance stays out, so well-separated sets get singleton columns
    for (int j = k + 1; j < n; ++j) {
      if (dist(ik, ord.orig(j)) < cutoff) col.push_back(j);
    }
  }
  return pat;
}

/// Sparse lower-triangular factor in factor index space with
/// L L^T ~= Theta^{-1} (exact when the pattern is full).
struct SparseFactor {
  MaximinOrdering ordering;
  SparsityPattern pattern;
  std::vector<std::vector<double>> values;  // aligned with pattern.cols
  std::vector<std::vector<int>> groups;     // aggregation map used

  int n() const { return ordering.n(); }

  double diag(int k) const { return values[static_cast<std::size_t>(k)][0]; }
};

/// Supernode aggregation: consecutive columns whose patterns are exact
/// suffixes of the group leader's pattern share one dense factorization.
/// Under this rule the aggregated solve reproduces the per-column values.
inline std::vector<std::vector<int>> aggregate(const SparsityPattern& pat) {
  int n = static_cast<int>(pat.cols.size());
  std::vector<std::vector<int>> groups;
  int k = 0;
  while (k < n) {
    const auto& lead = pat.cols[static_cast<std::size_t>(k)];
    std::vector<int> g{k};
    int j = k + 1;
    for (; j < n; ++j) {
      // column j must equal the suffix of the leader's pattern from j on
      auto it = std::lower_bound(lead.begin() + 1, lead.end(), j);
      if (it == lead.end() || *it != j) break;
      const auto& cj = pat.cols[static_cast<std::size_t>(j)];
      if (static_cast<std::size_t>(lead.end() - it) != cj.size() ||
          !std::equal(it, lead.end(), cj.begin()))
        break;
      g.push_back(j);
    }
    groups.push_back(std::move(g));
    k = j;
  }
  return groups;
}

using ThetaAccess = std::function<double(int, int)>;  // original index space

namespace detail {

/// Solve one group. For the leader pattern u (ascending factor indices),
/// factorize Theta restricted to u in reversed order once; each member
/// column is then a pair of triangular solves against a leading block.
inline void solve_group(const ThetaAccess& theta, const MaximinOrdering& ord,
                        const SparsityPattern& pat, const std::vector<int>& g,
                        std::vector<std::vector<double>>& values) {
  const auto& u = pat.cols[static_cast<std::size_t>(g.front())];
  auto m = static_cast<Eigen::Index>(u.size());
  // reversed order: r[a] = u[m-1-a]
  Eigen::MatrixXd C(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    int ia = ord.orig(u[static_cast<std::size_t>(m - 1 - a)]);
    for (Eigen::Index b = 0; b <= a; ++b) {
      int ib = ord.orig(u[static_cast<std::size_t>(m - 1 - b)]);
      double v = theta(ia, ib);
      C(a, b) = v;
      C(b, a) = v;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw NumericError(
        "klsc: covariance submatrix for column " +
        std::to_string(g.front()) +
        " is not positive definite; consider adding jitter");
  const Eigen::MatrixXd& G = llt.matrixL();

  for (int col : g) {
    // position of col in u (ascending); its pattern is the suffix u[p:]
    auto it = std::lower_bound(u.begin(), u.end(), col);
    auto p = static_cast<Eigen::Index>(it - u.begin());
    Eigen::Index q = m - p;  // suffix length == reversed prefix length
    // solve C[0:q,0:q]^{-1} e_{q-1} through the shared Cholesky block
    Eigen::VectorXd w = Eigen::VectorXd::Zero(q);
    w(q - 1) = 1.0;
    G.topLeftCorner(q, q).triangularView<Eigen::Lower>().solveInPlace(w);
    G.topLeftCorner(q, q)
        .transpose()
        .triangularView<Eigen::Upper>()
        .solveInPlace(w);
    // w is in reversed order; entry q-1 is the diagonal element (col itself)
    double d = w(q - 1);
    if (d <= 0.0)
      throw NumericError("klsc: non-positive pivot at column " +
                         std::to_string(col));
    double s = std::sqrt(d);
    auto& out = values[static_cast<std::size_t>(col)];
    out.resize(static_cast<std::size_t>(q));
    for (Eigen::Index a = 0; a < q; ++a)
      out[static_cast<std::size_t>(a)] = w(q - 1 - a) / s;
  }
}

}  // namespace detail

/// Compute the factor. Groups (or per-column singletons) are distributed
/// over `workers` threads; every column writes only its own slot, so the
/// result is identical for any worker count.
inline SparseFactor factorize(const ThetaAccess& theta,
                              const MaximinOrdering& ord,
                              const SparsityPattern& pat, int workers = 1,
                              bool aggregated = true) {
  SparseFactor f;
  f.ordering = ord;
  f.pattern = pat;
  int n = static_cast<int>(pat.cols.size());
  f.values.assign(static_cast<std::size_t>(n), {});
  if (aggregated) {
    f.groups = aggregate(pat);
  } else {
    f.groups.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) f.groups.push_back({k});
  }

  auto run_range = [&](std::size_t lo, std::size_t hi,
                       std::exception_ptr& err) {
    try {
      for (std::size_t gi = lo; gi < hi; ++gi)
        detail::solve_group(theta, ord, pat, f.groups[gi], f.values);
    } catch (...) {
      err = std::current_exception();
    }
  };

  workers = std::max(1, workers);
  std::size_t ngroups = f.groups.size();
  if (workers == 1 || ngroups <= 1) {
    std::exception_ptr err;
    run_range(0, ngroups, err);
    if (err) std::rethrow_exception(err);
  } else {
    auto w = static_cast<std::size_t>(workers);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errs(w);
    for (std::size_t t = 0; t < w; ++t) {
      std::size_t lo = ngroups * t / w;
      std::size_t hi = ngroups * (t + 1) / w;
      threads.emplace_back(run_range, lo, hi, std::ref(errs[t]));
    }
    for (auto& th : threads) th.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }
  return f;
}

/// y -> L^T y in factor index space.
inline Eigen::VectorXd factor_lt_mul(const SparseFactor& f,
                                     const Eigen::VectorXd& x) {
  int n = f.n();
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) {
    const auto& col = f.pattern.cols[static_cast<std::size_t>(k)];
    const auto& val = f.values[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (std::size_t a = 0; a < col.size(); ++a)
      s += val[a] * x(col[a]);
    out(k) = s;
  }
  return out;
}

/// t -> L t in factor index space.
inline Eigen::VectorXd factor_l_mul(const SparseFactor& f,
                                    const Eigen::VectorXd& t) {
  int n = f.n();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    const auto& col = f.pattern.cols[static_cast<std::size_t>(k)];
    const auto& val = f.values[static_cast<std::size_t>(k)];
    for (std::size_t a = 0; a < col.size(); ++a)
      out(col[a]) += val[a] * t(k);
  }
  return out;
}

/// Apply the approximate precision: x -> L L^T x, both in original index
/// order.
inline Eigen::VectorXd apply_precision(const SparseFactor& f,
                                       const Eigen::VectorXd& x_orig) {
  int n = f.n();
  Eigen::VectorXd xp(n);
  for (int k = 0; k < n; ++k) xp(k) = x_orig(f.ordering.orig(k));
  Eigen::VectorXd zp = factor_l_mul(f, factor_lt_mul(f, xp));
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) out(f.ordering.orig(k)) = zp(k);
  return out;
}

struct PosteriorSolve {
  Eigen::VectorXd mean;
  Eigen::VectorXd kernel_variance;  // diag(K* - k^T Theta^-1 k), clipped >= 0
  Eigen::VectorXd variance;         // kernel_variance + tau2 + phi2
  long clipped = 0;
};

/// Posterior mean and marginal variance at prediction points.
/// cross(i, j): covariance between prediction i and observation j, both in
/// original observation order. prior_diag: K* diagonal per prediction.
inline PosteriorSolve solve_posterior(const SparseFactor& f,
                                      const Eigen::VectorXd& obs_values,
                                      const Eigen::MatrixXd& cross,
                                      const Eigen::VectorXd& prior_diag,
                                      double tau2, double phi2) {
  require(obs_values.size() == f.n(),
          "solve_posterior: observation vector size mismatch");
  require(cross.cols() == f.n(), "solve_posterior: cross block shape");
  require(cross.rows() == prior_diag.size(),
          "solve_posterior: prior diagonal size mismatch");
  int n = f.n();
  Eigen::VectorXd z = apply_precision(f, obs_values);  // Theta^-1 y
  PosteriorSolve out;
  auto m = cross.rows();
  out.mean.resize(m);
  out.kernel_variance.resize(m);
  out.variance.resize(m);
  Eigen::VectorXd c_perm(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.mean(i) = cross.row(i).dot(z);
    for (int k = 0; k < n; ++k) c_perm(k) = cross(i, f.ordering.orig(k));
    double quad = factor_lt_mul(f, c_perm).squaredNorm();
    double kv = prior_diag(i) - quad;
    if (kv < 0.0) {
      kv = 0.0;
      ++out.clipped;
    }
    out.kernel_variance(i) = kv;
    out.variance(i) = kv + tau2 + phi2;
  }
  return out;
}

/// Binary round trip so a factor can be reused across predict/hazard runs.
inline void save_factor(const SparseFactor& f, const std::string& path) {
  std::ofstream out(path + ".tmp", std::ios::binary);
  if (!out) throw ParseError("cannot open " + path + ".tmp for writing");
  auto put_i = [&](std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  auto put_d = [&](double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put_i(0x4b4c5343'00000001);  // "KLSC" + version
  put_i(f.n());
  put_d(f.pattern.rho);
  for (int s : f.ordering.selection) put_i(s);
  for (double l : f.ordering.l) put_d(l);
  for (int k = 0; k < f.n(); ++k) {
    const auto& col = f.pattern.cols[static_cast<std::size_t>(k)];
    put_i(static_cast<std::int64_t>(col.size()));
    for (int r : col) put_i(r);
    for (double v : f.values[static_cast<std::size_t>(k)]) put_d(v);
  }
  out.close();
  std::filesystem::rename(path + ".tmp", path);
}

inline SparseFactor load_factor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open factor file: " + path);
  auto get_i = [&]() {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  auto get_d = [&]() {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  if (get_i() != 0x4b4c5343'00000001)
    throw ParseError("not a KLSC factor file: " + path);
  auto n = static_cast<int>(get_i());
  SparseFactor f;
  f.pattern.rho = get_d();
  f.ordering.selection.resize(static_cast<std::size_t>(n));
  f.ordering.l.resize(static_cast<std::size_t>(n));
  for (auto& s : f.ordering.selection) s = static_cast<int>(get_i());
  for (auto& l : f.ordering.l) l = get_d();
  f.ordering.factor_of.assign(static_cast<std::size_t>(n), -1);
  for (int r = 0; r < n; ++r)
    f.ordering.factor_of[static_cast<std::size_t>(
        f.ordering.selection[static_cast<std::size_t>(r)])] = n - 1 - r;
  f.pattern.cols.resize(static_cast<std::size_t>(n));
  f.values.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    auto sz = static_cast<std::size_t>(get_i());
    auto& col = f.pattern.cols[static_cast<std::size_t>(k)];
    auto& val = f.values[static_cast<std::size_t>(k)];
    col.resize(sz);
    val.resize(sz);
    for (auto& r : col) r = static_cast<int>(get_i());
    for (auto& v : val) v = get_d();
  }
  if (!in) throw ParseError("truncated factor file: " + path);
  return f;
}

}  // namespace ngmm
