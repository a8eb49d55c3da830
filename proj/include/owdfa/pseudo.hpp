#pragma once

#include <span>
#include <vector>

#include "owdfa/autodiff.hpp"
#include "owdfa/rng.hpp"

namespace owdfa {

/// Soft target for one unlabeled sample. `target` and `lambda` are constants
/// of the step that produced them; no gradient reaches them.
struct PseudoLabel {
  Vec<double> target;
  double lambda = 0.0;
  Index hard_class = 0;
};

/// softmax((log(p + eps) + g) / tau), g i.i.d. standard Gumbel.
Vec<double> gumbel_softmax(const Vec<double>& p, double tau, Rng& rng);

/// p at the argmax of the soft target.
double confidence_weight(const Vec<double>& p, const Vec<double>& target);

PseudoLabel soft_pseudo_label(const Vec<double>& p, double tau, Rng& rng);

/// One-hot at argmax p with lambda 1 when max p >= threshold; otherwise the
/// sample is excluded through lambda 0.
std::vector<PseudoLabel> hard_pseudo_baseline(const RowMatrix<double>& probs, double threshold);

/// -(1/m) sum_i sum_c lambda_i * target_ic * log(p_ic + eps).
template <typename Scalar>
Var<Scalar> loss_csp(const Var<Scalar>& probs, std::span<const PseudoLabel> pseudo);

}  // namespace owdfa
