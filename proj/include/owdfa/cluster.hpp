#pragma once

#include <functional>
#include <span>
#include <vector>

#include "owdfa/rng.hpp"
#include "owdfa/tensor.hpp"

namespace owdfa {

/// D^2 sampling of k rows of `points`; the first pick is uniform.
RowMatrix<double> kmeans_pp_init(const RowMatrix<double>& points, Index k, Rng& rng);

/// D^2 sampling of k more rows, with distances measured to `existing`
/// centroids as well as to the new picks.
RowMatrix<double> kmeans_pp_extend(const RowMatrix<double>& points, const RowMatrix<double>& existing,
                                   Index k, Rng& rng);

struct KMeansOptions {
  Index k = 0;  // 0 falls back to the known class count
  double tol = 1e-4;
  int max_iter = 100;
};

struct ClusterState {
  RowMatrix<double> centroids;
  std::vector<Index> assignments;  // labeled rows first, then unlabeled rows
  std::vector<bool> fixed_mask;
  std::vector<double> objective;  // after each assignment step
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;

  /// Cluster ids of the unlabeled rows.
  std::vector<Index> unlabeled_assignments() const;
};

/// Called after every assignment step, the final one included.
using KMeansObserver = std::function<void(const ClusterState&)>;

/// k-means where labeled rows stay in the cluster of their class. Known
/// centroids start at the labeled class means (labels must cover 0..num_known-1),
/// the remaining k - num_known come from D^2 sampling over the unlabeled rows.
/// Iterates until the largest centroid move is below tol or max_iter is hit.
/// An emptied cluster is moved onto the unlabeled row farthest from its own
/// centroid.
ClusterState semisup_kmeans(const RowMatrix<double>& labeled, std::span<const int> labels,
                            const RowMatrix<double>& unlabeled, Index num_known, const KMeansOptions& options,
                            Rng& rng, const KMeansObserver& observe = {});

/// Sum of squared distances of each row to the centroid it is assigned to.
double kmeans_objective(const RowMatrix<double>& points, const RowMatrix<double>& centroids,
                        std::span<const Index> assignments);

}  // namespace owdfa
