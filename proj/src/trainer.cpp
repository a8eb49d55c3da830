#include "owdfa/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "owdfa/adam.hpp"
#include "owdfa/cluster.hpp"
#include "owdfa/pairing.hpp"
#include "owdfa/pseudo.hpp"

namespace owdfa {

namespace {

// stream tags, one per consumer of randomness
enum : std::uint64_t {
  kInitStream = 0x11,
  kPretrainStream = 0x21,
  kCplStream = 0x22,
  kIterStream = 0x23,
  kUpperStream = 0x24,
  kVoteStream = 0x25,
  kPairRng = 0x31,
  kPseudoRng = 0x32,
  kKMeansRng = 0x33,
};

RowMatrix<double> to_double(const RowMatrix<float>& m) { return m.cast<double>(); }

Index argmax_row(const RowMatrix<double>& m, Index r) {
  Index best = 0;
  m.row(r).maxCoeff(&best);
  return best;
}

// Stacks labeled rows then unlabeled rows of one batch.
RowMatrix<float> batch_images(const Dataset& d, const Batch& b) {
  RowMatrix<float> out(static_cast<Index>(b.labeled.size() + b.unlabeled.size()), d.labeled.images.cols());
  Index r = 0;
  for (Index i : b.labeled) out.row(r++) = d.labeled.images.row(i);
  for (Index i : b.unlabeled) out.row(r++) = d.unlabeled.images.row(i);
  return out;
}

void count_pairs(const PairAssignment& a, const std::vector<int>& truth, Index n_labeled, int n_known,
                 PairStats& s) {
  for (std::size_t i = static_cast<std::size_t>(n_labeled); i < a.pairs.size(); ++i) {
    const Pair& p = a.pairs[i];
    const int y = truth[i];
    const bool novel = y >= n_known;
    ++s.anchors;
    ++(novel ? s.novel_anchors : s.known_anchors);
    if (p.global_top1 >= 0 && truth[static_cast<std::size_t>(p.global_top1)] == y) ++s.global_correct;
    if (!p.vote_agreed) continue;
    const bool ok = truth[static_cast<std::size_t>(p.partner)] == y;
    ++s.agreed;
    s.agreed_correct += ok;
    if (novel) {
      ++s.agreed_novel;
      s.agreed_novel_correct += ok;
    } else {
      ++s.agreed_known;
      s.agreed_known_correct += ok;
    }
  }
}

}  // namespace

double PairStats::global_precision() const {
  return anchors > 0 ? static_cast<double>(global_correct) / static_cast<double>(anchors) : 0.0;
}

double PairStats::agreed_precision() const {
  return agreed > 0 ? static_cast<double>(agreed_correct) / static_cast<double>(agreed) : 0.0;
}

void PairStats::add(const PairStats& o) {
  anchors += o.anchors;
  global_correct += o.global_correct;
  agreed += o.agreed;
  agreed_correct += o.agreed_correct;
  agreed_known += o.agreed_known;
  agreed_known_correct += o.agreed_known_correct;
  agreed_novel += o.agreed_novel;
  agreed_novel_correct += o.agreed_novel_correct;
  novel_anchors += o.novel_anchors;
  known_anchors += o.known_anchors;
}

void CspStats::add(double lambda) {
  const auto bin = std::clamp(static_cast<int>(lambda * 10.0), 0, 9);
  ++lambda_hist[static_cast<std::size_t>(bin)];
  ++count;
  lambda_sum += lambda;
}

Trainer::Trainer(const Dataset& data, StageConfig cfg) : data_(&data), cfg_(std::move(cfg)) {
  cfg_.validate();
  const int c = data.num_classes();
  if (cfg_.prior == PriorKind::uniform) {
    prior_ = uniform_prior(c);
  } else {
    // labeled counts for known classes; novel classes get the mean known count
    std::vector<Index> counts(static_cast<std::size_t>(c), 0);
    for (int y : data.labeled.labels) ++counts[static_cast<std::size_t>(y)];
    Index total = 0;
    for (int k = 0; k < data.spec.n_known; ++k) total += counts[static_cast<std::size_t>(k)];
    for (int k = data.spec.n_known; k < c; ++k)
      counts[static_cast<std::size_t>(k)] = std::max<Index>(1, total / data.spec.n_known);
    prior_ = count_prior(counts);
  }
}

ModelConfig Trainer::model_config() const {
  ModelConfig m;
  m.input_size = data_->spec.image_size;
  m.num_classes = data_->num_classes();
  m.validate();
  if (m.feature_grid() % cfg_.q != 0)
    throw ConfigError("q=" + std::to_string(cfg_.q) + " does not divide the feature grid " +
                      std::to_string(m.feature_grid()));
  return m;
}

Model<float> Trainer::initial_model() const { return Model<float>(model_config(), mix64(cfg_.seed ^ kInitStream)); }

void Trainer::supervised_epochs(Model<float>& model, const RowMatrix<float>& images, const std::vector<int>& labels,
                                int epochs, const std::string& stage, std::uint64_t stream) {
  if (epochs == 0) return;
  if (images.rows() == 0) throw ConfigError(stage + ": no labeled samples to train on");
  BatchSampler sampler(images.rows(), 0, cfg_.batch_size, BatchMode::labeled_only, mix64(cfg_.seed ^ stream),
                       true, cfg_.epoch_batches);
  AdamState<float> adam;
  const auto params = model.parameter_ptrs();
  for (int e = 0; e < epochs; ++e) {
    EpochLog log;
    log.stage = stage;
    log.epoch = e;
    log.lr = adam.lr = cfg_.lr_at(e);
    for (const Batch& b : sampler.epoch()) {
      const RowMatrix<float> x = gather_rows(images, b.labeled);
      std::vector<int> y;
      for (Index i : b.labeled) y.push_back(labels[static_cast<std::size_t>(i)]);
      Graph<float> g;
      BoundModel<float> bound(model, g, true);
      const Var<float> logits = bound.logits(pool_global(bound.extract(bound.input(x))));
      const Var<float> loss = loss_ce_logits(logits, y);
      g.backward(loss);
      adam_step(std::span<Tensor<float>* const>(params), adam);
      model.clear_grads();
      log.ce += loss.value().item();
      ++log.steps;
    }
    if (log.steps > 0) log.ce /= log.steps;
    log.loss = log.ce;
    epochs_.push_back(log);
    if (on_epoch) on_epoch(log);
  }
}

void Trainer::pretrain(Model<float>& model) {
  supervised_epochs(model, data_->labeled.images, data_->labeled.labels, cfg_.t1, "pretrain", kPretrainStream);
}

void Trainer::contrastive_pseudo_learning(Model<float>& model) {
  if (cfg_.t2 == 0) return;
  const Dataset& d = *data_;
  const LossWeights& w = cfg_.weights;
  const bool use_pairing = w.pairing != PairingMode::none && w.eta1 > 0;
  const bool use_pseudo = w.pseudo != PseudoMode::none && w.eta2 > 0;
  const bool use_prior = w.eta3 > 0;
  const int n_known = d.spec.n_known;

  BatchSampler sampler(d.labeled.size(), d.unlabeled.size(), cfg_.batch_size, BatchMode::half,
                       mix64(cfg_.seed ^ kCplStream), true, cfg_.epoch_batches);
  Rng pair_rng = Rng::stream(cfg_.seed, {kCplStream, kPairRng});
  AdamState<float> adam;
  const auto params = model.parameter_ptrs();

  for (int e = 0; e < cfg_.t2; ++e) {
    EpochLog log;
    log.stage = "cpl";
    log.epoch = e;
    log.lr = adam.lr = cfg_.lr_at(e);
    for (const Batch& b : sampler.epoch()) {
      const Index nl = static_cast<Index>(b.labeled.size());
      const Index n = nl + static_cast<Index>(b.unlabeled.size());
      std::vector<int> y_l, batch_labels, truth;
      for (Index i : b.labeled) {
        y_l.push_back(d.labeled.labels[static_cast<std::size_t>(i)]);
        batch_labels.push_back(y_l.back());
        truth.push_back(y_l.back());
      }
      for (Index i : b.unlabeled) {
        batch_labels.push_back(-1);
        truth.push_back(d.unlabeled.labels[static_cast<std::size_t>(i)]);
      }

      Graph<float> g;
      BoundModel<float> bound(model, g, true);
      const Var<float> fm = bound.extract(bound.input(batch_images(d, b)));
      const Var<float> global = pool_global(fm);
      const Var<float> logits = bound.logits(global);
      const Var<float> probs = softmax(logits);

      Var<float> total = loss_ce_logits(slice(logits, 0, 0, nl), y_l);
      log.ce += total.value().item();

      if (use_pairing) {
        // selection runs on detached copies of the features
        const RowMatrix<double> gd = to_double(global.value().matrix());
        std::optional<Var<float>> term;
        try {
          if (w.pairing == PairingMode::gr) {
            const std::vector<Index> partners = top1_partners(global_similarity(gd));
            term = loss_gr(probs, std::span<const Index>(partners));
          } else {
            Graph<float> aux;
            const RowMatrix<double> ld = to_double(pool_local(aux.constant(fm.value()), cfg_.q).value().matrix());
            const SimilarityTables t = similarity_tables(gd, ld, cfg_.q);
            const PairAssignment a = select_pairs(batch_labels, t.global, t.local, pair_rng);
            count_pairs(a, truth, nl, n_known, log.pairs);
            term = loss_glv(probs, a, batch_labels);
          }
        } catch (const NumericError&) {
          ++log.skipped_pairing;
        }
        if (term) {
          log.pairing += term->value().item();
          total = total + scale(*term, static_cast<float>(w.eta1));
        }
      }

      if (use_pseudo) {
        const RowMatrix<double> pu = to_double(probs.value().matrix().bottomRows(n - nl));
        std::vector<PseudoLabel> pls;
        if (w.pseudo == PseudoMode::csp) {
          for (Index i = 0; i < pu.rows(); ++i) {
            // per-sample stream, keyed by epoch too unless the noise is fixed
            const auto sample = static_cast<std::uint64_t>(b.unlabeled[static_cast<std::size_t>(i)]);
            Rng rng = cfg_.csp_resample ? Rng::stream(cfg_.seed, {kCplStream, kPseudoRng, static_cast<std::uint64_t>(e), sample})
                                        : Rng::stream(cfg_.seed, {kCplStream, kPseudoRng, sample});
            pls.push_back(soft_pseudo_label(pu.row(i).transpose(), cfg_.tau, rng));
          }
        } else {
          pls = hard_pseudo_baseline(pu, cfg_.hard_threshold);
        }
        for (const PseudoLabel& pl : pls) log.csp.add(pl.lambda);
        const Var<float> term = loss_csp(slice(probs, 0, nl, n), std::span<const PseudoLabel>(pls));
        log.pseudo += term.value().item();
        total = total + scale(term, static_cast<float>(w.eta2));
      }

      if (use_prior) {
        const Var<float> term = regularizer(probs, prior_);
        log.prior += term.value().item();
        total = total + scale(term, static_cast<float>(w.eta3));
      }

      log.loss += total.value().item();
      g.backward(total);
      adam_step(std::span<Tensor<float>* const>(params), adam);
      model.clear_grads();
      ++log.steps;
    }
    if (log.steps > 0) {
      const double s = log.steps;
      log.loss /= s;
      log.ce /= s;
      log.pairing /= s;
      log.pseudo /= s;
      log.prior /= s;
    }
    epochs_.push_back(log);
    if (on_epoch) on_epoch(log);
  }
}

RowMatrix<double> Trainer::global_features(Model<float>& model, const RowMatrix<float>& images) const {
  if (images.rows() == 0) return RowMatrix<double>(0, model.config().feature_dim());
  return to_double(infer(model, images, cfg_.q).global);
}

std::vector<int> Trainer::iterative_learning(Model<float>& model, KMeansSummary* summary) {
  const Dataset& d = *data_;
  const int c = d.num_classes(), n_known = d.spec.n_known;
  const RowMatrix<double> fl = global_features(model, d.labeled.images);
  std::vector<int> pseudo(static_cast<std::size_t>(d.unlabeled.size()), -1);

  if (d.unlabeled.size() > 0) {
    Inference<float> inf = infer(model, d.unlabeled.images, cfg_.q);
    const RowMatrix<double> fu = to_double(inf.global);
    KMeansOptions opt{cfg_.kmeans_k > 0 ? cfg_.kmeans_k : c, cfg_.kmeans_tol, cfg_.kmeans_max_iter};
    Rng rng = Rng::stream(cfg_.seed, {kIterStream, kKMeansRng});
    bool fixity = true;
    const ClusterState st = semisup_kmeans(fl, d.labeled.labels, fu, n_known, opt, rng, [&](const ClusterState& s) {
      for (std::size_t i = 0; i < d.labeled.labels.size(); ++i)
        fixity = fixity && s.assignments[i] == d.labeled.labels[i];
    });

    // known clusters are the known heads; novel clusters are matched to novel
    // heads by how often the model already predicts each head inside them
    const Index k = st.centroids.rows();
    const std::vector<Index> ua = st.unlabeled_assignments();
    std::vector<Index> head_of(static_cast<std::size_t>(k), -1);
    for (Index i = 0; i < n_known; ++i) head_of[static_cast<std::size_t>(i)] = i;
    if (k > n_known && c > n_known) {
      RowMatrix<double> votes = RowMatrix<double>::Zero(k - n_known, c - n_known);
      const RowMatrix<double> pn = to_double(inf.probs).rightCols(c - n_known);
      for (std::size_t i = 0; i < ua.size(); ++i)
        if (ua[i] >= n_known) votes(ua[i] - n_known, argmax_row(pn, static_cast<Index>(i))) += 1;
      const std::vector<Index> match = hungarian(votes);
      for (Index r = 0; r < k - n_known; ++r)
        if (match[static_cast<std::size_t>(r)] >= 0)
          head_of[static_cast<std::size_t>(n_known + r)] = n_known + match[static_cast<std::size_t>(r)];
    }
    for (std::size_t i = 0; i < ua.size(); ++i) pseudo[i] = static_cast<int>(head_of[static_cast<std::size_t>(ua[i])]);

    if (summary) {
      summary->iterations = st.iterations;
      summary->converged = st.converged;
      summary->reseeds = st.reseeds;
      summary->final_objective = st.objective.back();
      summary->fixity_held = fixity;
      for (std::size_t t = 1; t < st.objective.size(); ++t)
        summary->monotone = summary->monotone && st.objective[t] <= st.objective[t - 1] + 1e-9;
      std::vector<int> pred, truth;
      std::vector<bool> novel;
      for (std::size_t i = 0; i < pseudo.size(); ++i) {
        if (pseudo[i] < 0) continue;
        pred.push_back(pseudo[i]);
        truth.push_back(d.unlabeled.labels[i]);
        novel.push_back(d.is_novel(truth.back()));
      }
      if (!pred.empty()) summary->pseudo_label_accuracy = *clustering_accuracy(pred, truth, novel).all;
    }
  }

  // labeled pool plus every unlabeled sample that received a head
  std::vector<Index> keep;
  for (std::size_t i = 0; i < pseudo.size(); ++i)
    if (pseudo[i] >= 0) keep.push_back(static_cast<Index>(i));
  RowMatrix<float> images(d.labeled.size() + static_cast<Index>(keep.size()), d.labeled.images.cols());
  images.topRows(d.labeled.size()) = d.labeled.images;
  std::vector<int> labels = d.labeled.labels;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    images.row(d.labeled.size() + static_cast<Index>(j)) = d.unlabeled.images.row(keep[j]);
    labels.push_back(pseudo[static_cast<std::size_t>(keep[j])]);
  }
  supervised_epochs(model, images, labels, cfg_.t3, "iterative", kIterStream);
  return pseudo;
}

Model<float> Trainer::upper_bound() {
  const Dataset& d = *data_;
  RowMatrix<float> images(d.labeled.size() + d.unlabeled.size(), d.labeled.images.cols());
  images << d.labeled.images, d.unlabeled.images;
  std::vector<int> labels = d.labeled.labels;
  labels.insert(labels.end(), d.unlabeled.labels.begin(), d.unlabeled.labels.end());
  Model<float> model = initial_model();
  supervised_epochs(model, images, labels, cfg_.t_upper, "upper", kUpperStream);
  return model;
}

StageResult Trainer::evaluate(Model<float>& model, const std::string& name, StageTag tag) const {
  const Dataset& d = *data_;
  const RowMatrix<double> probs = to_double(infer(model, d.test.images, cfg_.q).probs);
  std::vector<int> pred;
  std::vector<bool> novel;
  for (Index i = 0; i < probs.rows(); ++i) {
    pred.push_back(static_cast<int>(argmax_row(probs, i)));
    novel.push_back(d.is_novel(d.test.labels[static_cast<std::size_t>(i)]));
  }
  StageResult r;
  r.name = name;
  r.tag = tag;
  r.eval = owdfa::evaluate(pred, d.test.labels, novel);

  // head serving each class under the joint mapping
  std::vector<Index> head_for(static_cast<std::size_t>(d.num_classes()), -1);
  for (std::size_t h = 0; h < r.eval.mapping.size(); ++h)
    if (r.eval.mapping[h] >= 0 && r.eval.mapping[h] < d.num_classes())
      head_for[static_cast<std::size_t>(r.eval.mapping[h])] = static_cast<Index>(h);
  for (Index i = 0; i < probs.rows(); ++i) {
    const Index h = head_for[static_cast<std::size_t>(d.test.labels[static_cast<std::size_t>(i)])];
    if (h < 0 || h >= probs.cols()) continue;
    const double ph = probs(i, h);
    int rank = 0;  // heads strictly more probable than the true one
    for (Index j = 0; j < probs.cols(); ++j) rank += probs(i, j) > ph;
    for (int k = rank; k < 3; ++k) r.topk[static_cast<std::size_t>(k)] += 1;
  }
  for (double& t : r.topk) t /= static_cast<double>(probs.rows());

  if (d.spec.protocol == Protocol::p2) {
    const std::vector<Index> real = d.real_classes();
    std::vector<Index> real_heads;
    for (std::size_t h = 0; h < r.eval.mapping.size(); ++h)
      if (std::find(real.begin(), real.end(), r.eval.mapping[h]) != real.end() &&
          static_cast<Index>(h) < probs.cols())
        real_heads.push_back(static_cast<Index>(h));
    std::vector<bool> is_real;
    for (int y : d.test.labels) is_real.push_back(std::find(real.begin(), real.end(), y) != real.end());
    if (!real_heads.empty()) r.eval.auc = auc_real_fake(probs, real_heads, is_real);
  }
  return r;
}

PairStats Trainer::vote_quality(Model<float>& model) const {
  const Dataset& d = *data_;
  BatchSampler sampler(d.labeled.size(), d.unlabeled.size(), cfg_.batch_size, BatchMode::half,
                       mix64(cfg_.seed ^ kVoteStream));
  Rng rng = Rng::stream(cfg_.seed, {kVoteStream, kPairRng});
  PairStats stats;
  for (const Batch& b : sampler.epoch()) {
    std::vector<int> labels, truth;
    for (Index i : b.labeled) {
      labels.push_back(d.labeled.labels[static_cast<std::size_t>(i)]);
      truth.push_back(labels.back());
    }
    for (Index i : b.unlabeled) {
      labels.push_back(-1);
      truth.push_back(d.unlabeled.labels[static_cast<std::size_t>(i)]);
    }
    const Inference<float> inf = infer(model, batch_images(d, b), cfg_.q);
    const SimilarityTables t = similarity_tables(to_double(inf.global), to_double(inf.local), cfg_.q);
    const PairAssignment a = select_pairs(labels, t.global, t.local, rng);
    count_pairs(a, truth, static_cast<Index>(b.labeled.size()), d.spec.n_known, stats);
  }
  return stats;
}

}  // namespace owdfa
