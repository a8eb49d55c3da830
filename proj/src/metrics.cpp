#include "owdfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "owdfa/error.hpp"

namespace owdfa {

namespace {

void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw ShapeError(std::string(what) + ": empty input");
}

// Contingency table with rows = predicted ids, cols = true ids (compacted).
RowMatrix<double> contingency(std::span<const int> pred, std::span<const int> truth) {
  std::vector<int> pu(pred.begin(), pred.end()), tu(truth.begin(), truth.end());
  std::sort(pu.begin(), pu.end());
  pu.erase(std::unique(pu.begin(), pu.end()), pu.end());
  std::sort(tu.begin(), tu.end());
  tu.erase(std::unique(tu.begin(), tu.end()), tu.end());
  RowMatrix<double> m = RowMatrix<double>::Zero(static_cast<Index>(pu.size()), static_cast<Index>(tu.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto r = std::lower_bound(pu.begin(), pu.end(), pred[i]) - pu.begin();
    const auto c = std::lower_bound(tu.begin(), tu.end(), truth[i]) - tu.begin();
    m(r, c) += 1.0;
  }
  return m;
}

double entropy(const Vec<double>& counts, double n) {
  double h = 0.0;
  for (Index i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) h -= counts[i] / n * std::log(counts[i] / n);
  return h;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

std::vector<Index> hungarian(const RowMatrix<double>& weights) {
  const Index rows = weights.rows(), cols = weights.cols();
  const Index n = std::max(rows, cols);
  std::vector<Index> result(static_cast<std::size_t>(rows), -1);
  if (n == 0) return result;
  const double top = weights.size() > 0 ? weights.maxCoeff() : 0.0;
  // minimise cost = top - weight on the padded square matrix
  auto cost = [&](Index r, Index c) { return (r < rows && c < cols) ? top - weights(r, c) : top; };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[j0] = true;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (Index j = 1; j <= n; ++j) {
    const Index r = p[j] - 1;
    if (r < rows && j - 1 < cols) result[static_cast<std::size_t>(r)] = j - 1;
  }
  return result;
}

AccuracyResult clustering_accuracy(std::span<const int> pred, std::span<const int> truth,
                                   const std::vector<bool>& novel) {
  check_same_length(pred.size(), truth.size(), "clustering_accuracy");
  if (novel.size() != truth.size()) throw ShapeError("clustering_accuracy: novel mask length mismatch");
  const int max_pred = *std::max_element(pred.begin(), pred.end());
  const int max_true = *std::max_element(truth.begin(), truth.end());
  if (*std::min_element(pred.begin(), pred.end()) < 0 || *std::min_element(truth.begin(), truth.end()) < 0)
    throw ShapeError("clustering_accuracy: ids must be nonnegative");
  RowMatrix<double> counts = RowMatrix<double>::Zero(max_pred + 1, max_true + 1);
  for (std::size_t i = 0; i < pred.size(); ++i) counts(pred[i], truth[i]) += 1.0;

  AccuracyResult out;
  out.mapping = hungarian(counts);
  double hit[2] = {0, 0}, total[2] = {0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int s = novel[i] ? 1 : 0;
    total[s] += 1;
    if (out.mapping[static_cast<std::size_t>(pred[i])] == truth[i]) hit[s] += 1;
  }
  if (total[0] > 0) out.known = hit[0] / total[0];
  if (total[1] > 0) out.novel = hit[1] / total[1];
  out.all = (hit[0] + hit[1]) / (total[0] + total[1]);
  return out;
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
  check_same_length(pred.size(), truth.size(), "nmi");
  const RowMatrix<double> m = contingency(pred, truth);
  const double n = static_cast<double>(pred.size());
  const Vec<double> a = m.rowwise().sum(), b = m.colwise().sum().transpose();
  const double ha = entropy(a, n), hb = entropy(b, n);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  double mi = 0.0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (m(r, c) > 0) mi += m(r, c) / n * std::log(n * m(r, c) / (a[r] * b[c]));
  return std::clamp(mi / ((ha + hb) / 2.0), 0.0, 1.0);
}

double ari(std::span<const int> pred, std::span<const int> truth) {
  check_same_length(pred.size(), truth.size(), "ari");
  const RowMatrix<double> m = contingency(pred, truth);
  const double n = static_cast<double>(pred.size());
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) index += choose2(m(r, c));
  for (Index r = 0; r < m.rows(); ++r) sa += choose2(m.row(r).sum());
  for (Index c = 0; c < m.cols(); ++c) sb += choose2(m.col(c).sum());
  const double pairs = choose2(n);
  const double expected = pairs > 0 ? sa * sb / pairs : 0.0;
  const double max_index = (sa + sb) / 2.0;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

double auc(std::span<const double> scores, const std::vector<bool>& positive) {
  check_same_length(scores.size(), positive.size(), "auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // sum of (average) ranks of the positives
  double rank_sum = 0.0, npos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += avg_rank;
        npos += 1;
      }
    i = j;
  }
  const double nneg = static_cast<double>(scores.size()) - npos;
  if (npos == 0 || nneg == 0) throw ShapeError("auc: both classes must be present");
  return (rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg);
}

double auc_real_fake(const RowMatrix<double>& probs, std::span<const Index> real_heads,
                     const std::vector<bool>& is_real) {
  if (real_heads.empty()) throw ShapeError("auc_real_fake: no real heads");
  if (static_cast<std::size_t>(probs.rows()) != is_real.size())
    throw ShapeError("auc_real_fake: label count mismatch");
  std::vector<double> score(static_cast<std::size_t>(probs.rows()), 0.0);
  for (Index i = 0; i < probs.rows(); ++i)
    for (Index h : real_heads) {
      if (h < 0 || h >= probs.cols()) throw ShapeError("auc_real_fake: head " + std::to_string(h) + " out of range");
      score[static_cast<std::size_t>(i)] += probs(i, h);
    }
  return auc(score, is_real);
}

EvalResult evaluate(std::span<const int> pred, std::span<const int> truth, const std::vector<bool>& novel) {
  const AccuracyResult acc = clustering_accuracy(pred, truth, novel);
  EvalResult out;
  out.acc_known = acc.known;
  out.acc_novel = acc.novel;
  out.acc_all = acc.all;
  out.mapping = acc.mapping;
  out.nmi_all = nmi(pred, truth);
  out.ari_all = ari(pred, truth);
  std::vector<int> pn, tn;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (novel[i]) {
      pn.push_back(pred[i]);
      tn.push_back(truth[i]);
    }
  if (!pn.empty()) {
    out.nmi_novel = nmi(pn, tn);
    out.ari_novel = ari(pn, tn);
  }
  return out;
}

}  // namespace owdfa
