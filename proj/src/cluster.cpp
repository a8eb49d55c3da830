#include "owdfa/cluster.hpp"

#include <limits>
#include <string>

#include "owdfa/error.hpp"

namespace owdfa {

namespace {

// Squared distance from every row of `points` to its nearest row of `centers`.
Vec<double> nearest_sq_dist(const RowMatrix<double>& points, const RowMatrix<double>& centers) {
  Vec<double> out = Vec<double>::Constant(points.rows(), std::numeric_limits<double>::infinity());
  for (Index c = 0; c < centers.rows(); ++c)
    out = out.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  return out;
}

Index sample_d2(const Vec<double>& d2, Rng& rng) {
  const double total = d2.sum();
  if (!(total > 0.0)) {
    // every point already sits on a centroid
    return static_cast<Index>(rng.below(static_cast<std::uint64_t>(d2.size())));
  }
  double r = rng.uniform() * total;
  Index last_positive = 0;
  for (Index i = 0; i < d2.size(); ++i) {
    if (d2[i] <= 0.0) continue;
    last_positive = i;
    if (r < d2[i]) return i;
    r -= d2[i];
  }
  return last_positive;
}

}  // namespace

RowMatrix<double> kmeans_pp_extend(const RowMatrix<double>& points, const RowMatrix<double>& existing,
                                   Index k, Rng& rng) {
  if (k < 0 || points.rows() < k)
    throw ShapeError("kmeans++: " + std::to_string(points.rows()) + " points for " + std::to_string(k) +
                     " centroids");
  RowMatrix<double> out(k, points.cols());
  if (k == 0) return out;
  Index start = 0;
  Vec<double> d2;
  if (existing.rows() == 0) {
    out.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(points.rows()))));
    d2 = (points.rowwise() - out.row(0)).rowwise().squaredNorm();
    start = 1;
  } else {
    d2 = nearest_sq_dist(points, existing);
  }
  for (Index c = start; c < k; ++c) {
    out.row(c) = points.row(sample_d2(d2, rng));
    d2 = d2.cwiseMin((points.rowwise() - out.row(c)).rowwise().squaredNorm());
  }
  return out;
}

RowMatrix<double> kmeans_pp_init(const RowMatrix<double>& points, Index k, Rng& rng) {
  return kmeans_pp_extend(points, RowMatrix<double>(0, points.cols()), k, rng);
}

double kmeans_objective(const RowMatrix<double>& points, const RowMatrix<double>& centroids,
                        std::span<const Index> assignments) {
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i)
    total += (points.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

std::vector<Index> ClusterState::unlabeled_assignments() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (!fixed_mask[i]) out.push_back(assignments[i]);
  return out;
}

ClusterState semisup_kmeans(const RowMatrix<double>& labeled, std::span<const int> labels,
                            const RowMatrix<double>& unlabeled, Index num_known, const KMeansOptions& options,
                            Rng& rng, const KMeansObserver& observe) {
  const Index nl = labeled.rows(), nu = unlabeled.rows();
  const Index k = options.k > 0 ? options.k : num_known;
  if (static_cast<Index>(labels.size()) != nl) throw ShapeError("semisup_kmeans: label count mismatch");
  if (nl > 0 && nu > 0 && labeled.cols() != unlabeled.cols())
    throw ShapeError("semisup_kmeans: labeled and unlabeled feature widths differ");
  if (k < num_known)
    throw ConfigError("semisup_kmeans: k=" + std::to_string(k) + " is below the known class count " +
                      std::to_string(num_known));
  if (!(options.tol > 0.0) || options.max_iter <= 0)
    throw ConfigError("semisup_kmeans: tol and max_iter must be positive");
  const Index d = nl > 0 ? labeled.cols() : unlabeled.cols();

  RowMatrix<double> points(nl + nu, d);
  if (nl > 0) points.topRows(nl) = labeled;
  if (nu > 0) points.bottomRows(nu) = unlabeled;

  ClusterState st;
  st.assignments.assign(static_cast<std::size_t>(nl + nu), -1);
  st.fixed_mask.assign(static_cast<std::size_t>(nl + nu), false);

  RowMatrix<double> known = RowMatrix<double>::Zero(num_known, d);
  std::vector<Index> counts(static_cast<std::size_t>(num_known), 0);
  for (Index i = 0; i < nl; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_known)
      throw ShapeError("semisup_kmeans: label " + std::to_string(y) + " is not a known class");
    known.row(y) += labeled.row(i);
    ++counts[static_cast<std::size_t>(y)];
    st.assignments[static_cast<std::size_t>(i)] = y;
    st.fixed_mask[static_cast<std::size_t>(i)] = true;
  }
  for (Index c = 0; c < num_known; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ShapeError("semisup_kmeans: known class " + std::to_string(c) + " has no labeled samples");
    known.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  if (nu == 0) {
    st.centroids = known;
    st.objective.push_back(kmeans_objective(points, st.centroids, st.assignments));
    if (observe) observe(st);
    st.iterations = 1;
    st.converged = true;
    return st;
  }
  if (nu < k - num_known)
    throw ShapeError("semisup_kmeans: " + std::to_string(nu) + " unlabeled points for " +
                     std::to_string(k - num_known) + " new clusters");

  st.centroids.resize(k, d);
  st.centroids.topRows(num_known) = known;
  st.centroids.bottomRows(k - num_known) = kmeans_pp_extend(unlabeled, known, k - num_known, rng);

  for (int iter = 0; iter < options.max_iter; ++iter) {
    // assignment
    for (Index i = nl; i < nl + nu; ++i) {
      Index best = 0;
      (st.centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      st.assignments[static_cast<std::size_t>(i)] = best;
    }
    st.objective.push_back(kmeans_objective(points, st.centroids, st.assignments));
    if (observe) observe(st);

    // update
    RowMatrix<double> sums = RowMatrix<double>::Zero(k, d);
    std::vector<Index> members(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < nl + nu; ++i) {
      const Index c = st.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++members[static_cast<std::size_t>(c)];
    }
    RowMatrix<double> next = st.centroids;
    std::vector<bool> taken(static_cast<std::size_t>(nu), false);
    for (Index c = 0; c < k; ++c) {
      if (members[static_cast<std::size_t>(c)] > 0) {
        next.row(c) = sums.row(c) / static_cast<double>(members[static_cast<std::size_t>(c)]);
        continue;
      }
      Index far = nl;
      double worst = -1.0;
      for (Index i = nl; i < nl + nu; ++i) {
        if (taken[static_cast<std::size_t>(i - nl)]) continue;
        const double dist = (points.row(i) - st.centroids.row(st.assignments[static_cast<std::size_t>(i)]))
                                .squaredNorm();
        if (dist > worst) {
          worst = dist;
          far = i;
        }
      }
      next.row(c) = points.row(far);
      taken[static_cast<std::size_t>(far - nl)] = true;
      ++st.reseeds;
    }
    const double shift = (next - st.centroids).rowwise().norm().maxCoeff();
    st.centroids = std::move(next);
    st.iterations = iter + 1;
    if (shift < options.tol) {
      st.converged = true;
      break;
    }
  }
  // final assignment against the final centroids
  for (Index i = nl; i < nl + nu; ++i) {
    Index best = 0;
    (st.centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
    st.assignments[static_cast<std::size_t>(i)] = best;
  }
  st.objective.push_back(kmeans_objective(points, st.centroids, st.assignments));
  if (observe) observe(st);
  return st;
}

}  // namespace owdfa
