#include "owdfa/objective.hpp"

#include <cmath>
#include <string>

namespace owdfa {

std::string_view to_string(PairingMode mode) {
  switch (mode) {
    case PairingMode::none: return "none";
    case PairingMode::gr: return "gr";
    case PairingMode::glv: return "glv";
  }
  return "?";
}

std::string_view to_string(PseudoMode mode) {
  switch (mode) {
    case PseudoMode::none: return "none";
    case PseudoMode::csp: return "csp";
    case PseudoMode::hard: return "hard";
  }
  return "?";
}

void LossWeights::validate() const {
  if (!(eta1 >= 0 && eta2 >= 0 && eta3 >= 0))
    throw ConfigError("loss weights must be nonnegative");
}

Vec<double> uniform_prior(Index classes) {
  if (classes <= 0) throw ConfigError("prior: class count must be positive");
  return Vec<double>::Constant(classes, 1.0 / static_cast<double>(classes));
}

Vec<double> count_prior(std::span<const Index> counts) {
  Vec<double> p(static_cast<Index>(counts.size()));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] <= 0) throw ConfigError("prior: class " + std::to_string(i) + " has no samples");
    p[static_cast<Index>(i)] = static_cast<double>(counts[i]);
  }
  return p / p.sum();
}

namespace {

template <typename Scalar>
Tensor<Scalar> onehot_labels(std::string_view op, const Shape& s, std::span<const int> labels) {
  if (s.size() != 2 || static_cast<Index>(labels.size()) != s[0])
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for predictions " +
                     to_string(s));
  Tensor<Scalar> onehot(s);
  for (Index i = 0; i < s[0]; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= s[1])
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                       std::to_string(s[1]) + ")");
    onehot.matrix()(i, y) = Scalar(1);
  }
  return onehot;
}

}  // namespace

template <typename Scalar>
Var<Scalar> loss_ce(const Var<Scalar>& probs, std::span<const int> labels) {
  Tensor<Scalar> onehot = onehot_labels<Scalar>("loss_ce", probs.shape(), labels);
  Graph<Scalar>& g = *probs.graph();
  return scale(sum(g.constant(std::move(onehot)) * log(probs)), Scalar(-1) / static_cast<Scalar>(probs.shape()[0]));
}

template <typename Scalar>
Var<Scalar> loss_ce_logits(const Var<Scalar>& logits, std::span<const int> labels) {
  Tensor<Scalar> onehot = onehot_labels<Scalar>("loss_ce_logits", logits.shape(), labels);
  Graph<Scalar>& g = *logits.graph();
  return scale(sum(g.constant(std::move(onehot)) * log_softmax(logits)),
               Scalar(-1) / static_cast<Scalar>(logits.shape()[0]));
}

template <typename Scalar>
Var<Scalar> regularizer(const Var<Scalar>& probs, const Vec<double>& prior) {
  const Shape& s = probs.shape();
  if (s.size() != 2 || prior.size() != s[1])
    throw ShapeError("regularizer: prior of size " + std::to_string(prior.size()) +
                     " for predictions " + to_string(s));
  if (!(prior.minCoeff() > 0.0) || std::abs(prior.sum() - 1.0) > 1e-9)
    throw NumericError("regularizer: prior must be strictly positive and sum to 1");
  Graph<Scalar>& g = *probs.graph();
  const Var<Scalar> q = mean(probs, 0);
  const Var<Scalar> log_prior =
      g.constant(Tensor<Scalar>({s[1]}, prior.array().log().matrix().template cast<Scalar>()));
  return sum(q * (log(q) - log_prior));
}

double total_loss(const LossComponents<double>& c, const LossWeights& w) {
  double out = c.ce;
  if (w.pairing != PairingMode::none) out += w.eta1 * c.pairing;
  if (w.pseudo != PseudoMode::none) out += w.eta2 * c.pseudo;
  return out + w.eta3 * c.prior;
}

template Var<float> loss_ce(const Var<float>&, std::span<const int>);
template Var<double> loss_ce(const Var<double>&, std::span<const int>);
template Var<float> loss_ce_logits(const Var<float>&, std::span<const int>);
template Var<double> loss_ce_logits(const Var<double>&, std::span<const int>);
template Var<float> regularizer(const Var<float>&, const Vec<double>&);
template Var<double> regularizer(const Var<double>&, const Vec<double>&);

}  // namespace owdfa
