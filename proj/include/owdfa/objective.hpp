#pragma once

#include <span>
#include <string_view>

#include "owdfa/autodiff.hpp"

namespace owdfa {

enum class PairingMode { none, gr, glv };
enum class PseudoMode { none, csp, hard };

std::string_view to_string(PairingMode mode);
std::string_view to_string(PseudoMode mode);

/// Weights of the pairing, pseudo-label and prior terms added to the
/// supervised cross-entropy; the modes pick which terms exist at all.
struct LossWeights {
  double eta1 = 1.0;
  double eta2 = 0.5;
  double eta3 = 1.0;
  PairingMode pairing = PairingMode::glv;
  PseudoMode pseudo = PseudoMode::csp;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Uniform distribution over `classes` labels.
Vec<double> uniform_prior(Index classes);
/// Distribution proportional to per-class sample counts; every count must be positive.
Vec<double> count_prior(std::span<const Index> counts);

/// -(1/n) sum_i log(p[i, y_i] + eps). Labels must index a head of p.
template <typename Scalar>
Var<Scalar> loss_ce(const Var<Scalar>& probs, std::span<const int> labels);

/// Same loss from logits through log_softmax. It has no epsilon, so a
/// confidently wrong row keeps a gradient of order one where the
/// probability form underflows to zero.
template <typename Scalar>
Var<Scalar> loss_ce_logits(const Var<Scalar>& logits, std::span<const int> labels);

/// KL(batch-mean prediction || prior).
template <typename Scalar>
Var<Scalar> regularizer(const Var<Scalar>& probs, const Vec<double>& prior);

template <typename T>
struct LossComponents {
  T ce{};
  T pairing{};
  T pseudo{};
  T prior{};
};

/// ce + eta1 * pairing + eta2 * pseudo + eta3 * prior, skipping terms whose mode is `none`.
double total_loss(const LossComponents<double>& c, const LossWeights& w);

template <typename Scalar>
Var<Scalar> total_loss(const LossComponents<Var<Scalar>>& c, const LossWeights& w) {
  Var<Scalar> out = c.ce;
  if (w.pairing != PairingMode::none) out = out + scale(c.pairing, static_cast<Scalar>(w.eta1));
  if (w.pseudo != PseudoMode::none) out = out + scale(c.pseudo, static_cast<Scalar>(w.eta2));
  return out + scale(c.prior, static_cast<Scalar>(w.eta3));
}

}  // namespace owdfa
