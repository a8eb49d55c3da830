#include "owdfa/adam.hpp"

#include <cmath>
#include <string>

namespace owdfa {

template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, AdamState<Scalar>& state) {
  if (!(state.lr > 0)) throw NumericError("adam_step: learning rate must be positive");
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor<Scalar>* p : params) {
      state.m.push_back(Vec<Scalar>::Zero(p->size()));
      state.v.push_back(Vec<Scalar>::Zero(p->size()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i]->size() || state.v[i].size() != params[i]->size())
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));

  ++state.step;
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, state.step));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, state.step));
  const Scalar lr = static_cast<Scalar>(state.lr);
  const Scalar eps = static_cast<Scalar>(state.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (p.grad()) {
      const Vec<Scalar>& g = *p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    } else {
      m *= b1;
      v *= b2;
    }
    p.data().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template void adam_step(std::span<Tensor<float>* const>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, AdamState<double>&);

}  // namespace owdfa
