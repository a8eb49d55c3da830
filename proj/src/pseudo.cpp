#include "owdfa/pseudo.hpp"

#include <cmath>
#include <string>

namespace owdfa {

Vec<double> gumbel_softmax(const Vec<double>& p, double tau, Rng& rng) {
  if (!(tau > 0)) throw NumericError("gumbel_softmax: temperature must be positive");
  Vec<double> z(p.size());
  for (Index c = 0; c < p.size(); ++c) z[c] = (std::log(p[c] + kLogEps) + rng.gumbel()) / tau;
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  return z / z.sum();
}

double confidence_weight(const Vec<double>& p, const Vec<double>& target) {
  if (p.size() != target.size()) throw ShapeError("confidence_weight: size mismatch");
  Index c = 0;
  target.maxCoeff(&c);
  return p[c];
}

PseudoLabel soft_pseudo_label(const Vec<double>& p, double tau, Rng& rng) {
  PseudoLabel out;
  out.target = gumbel_softmax(p, tau, rng);
  out.target.maxCoeff(&out.hard_class);
  out.lambda = p[out.hard_class];
  return out;
}

std::vector<PseudoLabel> hard_pseudo_baseline(const RowMatrix<double>& probs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw NumericError("hard_pseudo_baseline: threshold must lie in [0, 1]");
  std::vector<PseudoLabel> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    PseudoLabel& pl = out[static_cast<std::size_t>(i)];
    const double top = probs.row(i).maxCoeff(&pl.hard_class);
    pl.target = Vec<double>::Zero(probs.cols());
    pl.target[pl.hard_class] = 1.0;
    pl.lambda = top >= threshold ? 1.0 : 0.0;
  }
  return out;
}

template <typename Scalar>
Var<Scalar> loss_csp(const Var<Scalar>& probs, std::span<const PseudoLabel> pseudo) {
  const Shape& s = probs.shape();
  if (s.size() != 2 || static_cast<Index>(pseudo.size()) != s[0])
    throw ShapeError("loss_csp: " + std::to_string(pseudo.size()) + " pseudo-labels for predictions " +
                     to_string(s));
  Tensor<Scalar> weighted(s);
  for (Index i = 0; i < s[0]; ++i) {
    const PseudoLabel& pl = pseudo[static_cast<std::size_t>(i)];
    if (pl.target.size() != s[1]) throw ShapeError("loss_csp: pseudo-label width mismatch");
    weighted.matrix().row(i) = (pl.lambda * pl.target).template cast<Scalar>().transpose();
  }
  Graph<Scalar>& g = *probs.graph();
  return scale(sum(g.constant(std::move(weighted)) * log(probs)),
               Scalar(-1) / static_cast<Scalar>(s[0]));
}

template Var<float> loss_csp(const Var<float>&, std::span<const PseudoLabel>);
template Var<double> loss_csp(const Var<double>&, std::span<const PseudoLabel>);

}  // namespace owdfa
