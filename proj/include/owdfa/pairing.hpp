#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "owdfa/autodiff.hpp"
#include "owdfa/rng.hpp"

namespace owdfa {

/// Cosine similarity between every pair of global features (rows).
/// Throws NumericError naming the first zero-norm row.
RowMatrix<double> global_similarity(const RowMatrix<double>& global);

/// Per-sample patch priority weights from local features laid out as
/// B x (d * q * q), channel-major (the layout of pool_local). Row b, column k
/// is the L2 norm of patch k divided by the sum of patch norms of sample b.
RowMatrix<double> spatial_weights(const RowMatrix<double>& local, Index q);

/// s_L[i][j] = sum_k w[i][k] * cos(patch_k(i), patch_k(j)). Not symmetric:
/// weights come from the row sample. A patch pair with a zero-norm side
/// contributes 0 and is counted in `zero_patch_pairs` when given.
RowMatrix<double> local_similarity(const RowMatrix<double>& local, Index q,
                                   const RowMatrix<double>& weights,
                                   std::size_t* zero_patch_pairs = nullptr);

struct SimilarityTables {
  RowMatrix<double> global;
  RowMatrix<double> local;
  RowMatrix<double> weights;
  std::size_t zero_patch_pairs = 0;
};

SimilarityTables similarity_tables(const RowMatrix<double>& global, const RowMatrix<double>& local,
                                   Index q);

/// argmax over j != i of each row, lowest index on ties.
std::vector<Index> top1_partners(const RowMatrix<double>& similarity);

enum class PartnerKind { none, labeled_same_class, voted_unlabeled };

struct Pair {
  Index partner = -1;
  PartnerKind kind = PartnerKind::none;
  bool vote_agreed = false;  // unlabeled anchors only
  Index global_top1 = -1;
  Index local_top1 = -1;
};

struct PairAssignment {
  std::vector<Pair> pairs;
  std::size_t agreed() const;
};

/// Labels: class id for labeled samples, -1 for unlabeled ones.
/// Labeled anchors get a uniformly random same-class batchmate (none if the
/// class is alone in the batch). Unlabeled anchors keep their global top-1
/// only when it coincides with their local top-1.
PairAssignment select_pairs(std::span<const int> labels, const RowMatrix<double>& s_global,
                            const RowMatrix<double>& s_local, Rng& rng);

/// -mean_i log <p_i, p_partner(i)> over every sample of the batch.
template <typename Scalar>
Var<Scalar> loss_gr(const Var<Scalar>& probs, std::span<const Index> partners);

/// Labeled terms divided by n, vote-agreed unlabeled terms divided by m;
/// samples without a partner contribute zero but still count in n and m.
template <typename Scalar>
Var<Scalar> loss_glv(const Var<Scalar>& probs, const PairAssignment& assignment,
                     std::span<const int> labels);

}  // namespace owdfa
