#include "owdfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace owdfa {

namespace {

double evaluate(const GradCheckFn& f, std::vector<Tensor<double>>& point) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (auto& t : point) vars.push_back(g.constant(t));
  const Var<double> out = f(g, vars);
  if (out.value().size() != 1) throw GraphError("grad_check: function must be scalar-valued");
  return out.value().item();
}

}  // namespace

double grad_check(const GradCheckFn& f, std::vector<Tensor<double>> point, double h) {
  for (auto& t : point) t.clear_grad();
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (auto& t : point) vars.push_back(g.parameter(t));
    const Var<double> out = f(g, vars);
    if (out.value().size() != 1) throw GraphError("grad_check: function must be scalar-valued");
    g.backward(out);
  }
  std::vector<Vec<double>> analytic;
  for (auto& t : point) {
    analytic.push_back(t.grad() ? *t.grad() : Vec<double>::Zero(t.size()));
    t.clear_grad();
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < point.size(); ++p) {
    for (Index i = 0; i < point[p].size(); ++i) {
      const double saved = point[p][i];
      point[p][i] = saved + h;
      const double up = evaluate(f, point);
      point[p][i] = saved - h;
      const double down = evaluate(f, point);
      point[p][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace owdfa
