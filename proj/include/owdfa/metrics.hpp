#pragma once

#include <optional>
#include <span>
#include <vector>

#include "owdfa/tensor.hpp"

namespace owdfa {

/// Maximum-weight one-to-one assignment. Rectangular input is padded with
/// zeros; result[r] is the column matched to row r (-1 if r matched padding).
std::vector<Index> hungarian(const RowMatrix<double>& weights);

struct AccuracyResult {
  std::optional<double> known;
  std::optional<double> novel;
  std::optional<double> all;
  std::vector<Index> mapping;  // predicted id -> class id, -1 when unmatched
};

/// One Hungarian mapping over the whole set, then accuracy per subset.
/// `novel` flags the samples whose true class is novel; empty subsets are absent.
AccuracyResult clustering_accuracy(std::span<const int> pred, std::span<const int> truth,
                                   const std::vector<bool>& novel);

/// Mutual information over the arithmetic mean of the two entropies. Both
/// partitions trivial gives 1.
double nmi(std::span<const int> pred, std::span<const int> truth);

/// Adjusted Rand index. Returns 1 when the index cannot be adjusted (both
/// partitions trivial).
double ari(std::span<const int> pred, std::span<const int> truth);

/// Probability that a random positive outscores a random negative, ties 1/2.
double auc(std::span<const double> scores, const std::vector<bool>& positive);

/// AUC of "real" with score = sum of predicted probability over real heads.
double auc_real_fake(const RowMatrix<double>& probs, std::span<const Index> real_heads,
                     const std::vector<bool>& is_real);

struct EvalResult {
  std::optional<double> acc_known, acc_novel, acc_all;
  double nmi_novel = 0, nmi_all = 0, ari_novel = 0, ari_all = 0;
  std::optional<double> auc;
  std::vector<Index> mapping;
};

/// Accuracies, NMI and ARI of predictions against ground truth; the
/// novel-subset NMI/ARI are 0 when no novel sample is present.
EvalResult evaluate(std::span<const int> pred, std::span<const int> truth, const std::vector<bool>& novel);

}  // namespace owdfa
