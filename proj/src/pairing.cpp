#include "owdfa/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace owdfa {

namespace {

constexpr double kNormEps = 1e-12;

void check_local_layout(const RowMatrix<double>& local, Index q) {
  if (q <= 0 || local.cols() % (q * q) != 0)
    throw ShapeError("local features: " + std::to_string(local.cols()) +
                     " columns is not a multiple of q*q=" + std::to_string(q * q));
}

// Patch k of sample b as a d-vector: columns k, k+q^2, k+2q^2, ...
auto patch(const RowMatrix<double>& local, Index b, Index k, Index q2) {
  return Eigen::Map<const Vec<double>, 0, Eigen::InnerStride<>>(
      local.row(b).data() + k, local.cols() / q2, Eigen::InnerStride<>(q2));
}

// Weighted sum of -log <p_a, p_b> over (anchor, partner) pairs.
template <typename Scalar>
Var<Scalar> weighted_pair_nll(const Var<Scalar>& probs, const std::vector<Index>& anchors,
                              const std::vector<Index>& partners, const std::vector<Scalar>& weights) {
  Graph<Scalar>& g = *probs.graph();
  if (anchors.empty()) return g.constant(Tensor<Scalar>::scalar(Scalar(0)));
  const Var<Scalar> a = take_rows(probs, std::span<const Index>(anchors));
  const Var<Scalar> b = take_rows(probs, std::span<const Index>(partners));
  const Var<Scalar> inner = sum(a * b, 1);
  Tensor<Scalar> w({static_cast<Index>(weights.size())});
  for (std::size_t i = 0; i < weights.size(); ++i) w[static_cast<Index>(i)] = weights[i];
  return scale(sum(log(inner) * g.constant(std::move(w))), Scalar(-1));
}

}  // namespace

RowMatrix<double> global_similarity(const RowMatrix<double>& global) {
  const Vec<double> norms = global.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > kNormEps))
      throw NumericError("global_similarity: sample " + std::to_string(i) + " has a zero-norm feature");
  const RowMatrix<double> unit = global.array().colwise() / norms.array();
  return unit * unit.transpose();
}

RowMatrix<double> spatial_weights(const RowMatrix<double>& local, Index q) {
  check_local_layout(local, q);
  const Index q2 = q * q;
  RowMatrix<double> w(local.rows(), q2);
  for (Index b = 0; b < local.rows(); ++b) {
    for (Index k = 0; k < q2; ++k) w(b, k) = patch(local, b, k, q2).norm();
    const double total = w.row(b).sum();
    if (!(total > kNormEps))
      throw NumericError("spatial_weights: sample " + std::to_string(b) + " has an all-zero feature map");
    w.row(b) /= total;
  }
  return w;
}

RowMatrix<double> local_similarity(const RowMatrix<double>& local, Index q,
                                   const RowMatrix<double>& weights, std::size_t* zero_patch_pairs) {
  check_local_layout(local, q);
  const Index n = local.rows(), q2 = q * q;
  if (weights.rows() != n || weights.cols() != q2)
    throw ShapeError("local_similarity: weights must be " + std::to_string(n) + " x " +
                     std::to_string(q2));
  // unit patches, zero where the patch norm vanishes
  std::vector<RowMatrix<double>> unit(static_cast<std::size_t>(q2));
  std::vector<std::vector<bool>> alive(static_cast<std::size_t>(q2), std::vector<bool>(n));
  const Index d = local.cols() / q2;
  for (Index k = 0; k < q2; ++k) {
    RowMatrix<double>& u = unit[k];
    u.resize(n, d);
    for (Index b = 0; b < n; ++b) {
      u.row(b) = patch(local, b, k, q2).transpose();
      const double nrm = u.row(b).norm();
      alive[k][b] = nrm > kNormEps;
      if (alive[k][b]) u.row(b) /= nrm;
      else u.row(b).setZero();
    }
  }
  RowMatrix<double> s = RowMatrix<double>::Zero(n, n);
  std::size_t zeros = 0;
  for (Index k = 0; k < q2; ++k) {
    const RowMatrix<double> cos = unit[k] * unit[k].transpose();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        if (!alive[k][i] || !alive[k][j]) {
          ++zeros;
          continue;
        }
        s(i, j) += weights(i, k) * cos(i, j);
      }
  }
  if (zero_patch_pairs) *zero_patch_pairs = zeros;
  return s;
}

SimilarityTables similarity_tables(const RowMatrix<double>& global, const RowMatrix<double>& local,
                                   Index q) {
  if (global.rows() != local.rows()) throw ShapeError("similarity_tables: batch size mismatch");
  SimilarityTables t;
  t.global = global_similarity(global);
  t.weights = spatial_weights(local, q);
  t.local = local_similarity(local, q, t.weights, &t.zero_patch_pairs);
  return t;
}

std::vector<Index> top1_partners(const RowMatrix<double>& similarity) {
  const Index n = similarity.rows();
  std::vector<Index> out(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (best < 0 || similarity(i, j) > similarity(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::size_t PairAssignment::agreed() const {
  return static_cast<std::size_t>(std::count_if(
      pairs.begin(), pairs.end(), [](const Pair& p) { return p.vote_agreed; }));
}

PairAssignment select_pairs(std::span<const int> labels, const RowMatrix<double>& s_global,
                            const RowMatrix<double>& s_local, Rng& rng) {
  const Index n = static_cast<Index>(labels.size());
  if (s_global.rows() != n || s_global.cols() != n || s_local.rows() != n || s_local.cols() != n)
    throw ShapeError("select_pairs: similarity tables do not match batch size " + std::to_string(n));
  std::map<int, std::vector<Index>> by_class;
  for (Index i = 0; i < n; ++i)
    if (labels[i] >= 0) by_class[labels[i]].push_back(i);

  const std::vector<Index> g_top = top1_partners(s_global);
  const std::vector<Index> l_top = top1_partners(s_local);

  PairAssignment out;
  out.pairs.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Pair& p = out.pairs[static_cast<std::size_t>(i)];
    p.global_top1 = g_top[i];
    p.local_top1 = l_top[i];
    if (labels[i] >= 0) {
      const auto& members = by_class[labels[i]];
      if (members.size() < 2) continue;
      // uniform over members other than i
      std::size_t pick = static_cast<std::size_t>(rng.below(members.size() - 1));
      const auto self = std::find(members.begin(), members.end(), i) - members.begin();
      if (static_cast<std::ptrdiff_t>(pick) >= self) ++pick;
      p.partner = members[pick];
      p.kind = PartnerKind::labeled_same_class;
    } else if (g_top[i] >= 0 && g_top[i] == l_top[i]) {
      p.partner = g_top[i];
      p.kind = PartnerKind::voted_unlabeled;
      p.vote_agreed = true;
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> loss_gr(const Var<Scalar>& probs, std::span<const Index> partners) {
  const Index n = probs.shape().at(0);
  if (static_cast<Index>(partners.size()) != n)
    throw ShapeError("loss_gr: " + std::to_string(partners.size()) + " partners for batch of " +
                     std::to_string(n));
  std::vector<Index> anchors, targets;
  for (Index i = 0; i < n; ++i) {
    if (partners[i] < 0) continue;
    anchors.push_back(i);
    targets.push_back(partners[i]);
  }
  const std::vector<Scalar> w(anchors.size(), Scalar(1) / static_cast<Scalar>(n));
  return weighted_pair_nll(probs, anchors, targets, w);
}

template <typename Scalar>
Var<Scalar> loss_glv(const Var<Scalar>& probs, const PairAssignment& assignment,
                     std::span<const int> labels) {
  const Index b = probs.shape().at(0);
  if (static_cast<Index>(labels.size()) != b || static_cast<Index>(assignment.pairs.size()) != b)
    throw ShapeError("loss_glv: labels/assignment do not match batch size " + std::to_string(b));
  const auto n = std::count_if(labels.begin(), labels.end(), [](int y) { return y >= 0; });
  const auto m = b - n;
  std::vector<Index> anchors, targets;
  std::vector<Scalar> w;
  for (Index i = 0; i < b; ++i) {
    const Pair& p = assignment.pairs[static_cast<std::size_t>(i)];
    if (p.partner < 0) continue;
    anchors.push_back(i);
    targets.push_back(p.partner);
    w.push_back(Scalar(1) / static_cast<Scalar>(labels[i] >= 0 ? n : m));
  }
  return weighted_pair_nll(probs, anchors, targets, w);
}

template Var<float> loss_gr(const Var<float>&, std::span<const Index>);
template Var<double> loss_gr(const Var<double>&, std::span<const Index>);
template Var<float> loss_glv(const Var<float>&, const PairAssignment&, std::span<const int>);
template Var<double> loss_glv(const Var<double>&, const PairAssignment&, std::span<const int>);

}  // namespace owdfa
