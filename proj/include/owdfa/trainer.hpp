#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "owdfa/checkpoint.hpp"
#include "owdfa/config.hpp"
#include "owdfa/data.hpp"
#include "owdfa/metrics.hpp"
#include "owdfa/model.hpp"

namespace owdfa {

/// Ground-truth consistency of the partners picked for unlabeled anchors.
/// Uses the labels the generator stored for the unlabeled pool, so it is a
/// diagnostic only and never feeds back into training.
struct PairStats {
  long anchors = 0;         // unlabeled anchors
  long global_correct = 0;  // s_G top-1 partner has the anchor's class
  long agreed = 0;          // anchors whose s_G and s_L top-1 coincide
  long agreed_correct = 0;
  long agreed_known = 0, agreed_known_correct = 0;  // anchor (and partner) from a known class
  long agreed_novel = 0, agreed_novel_correct = 0;  // anchor (and partner) from a novel class
  long novel_anchors = 0;   // recall denominators: unlabeled anchors of novel classes
  long known_anchors = 0;

  double global_precision() const;
  double agreed_precision() const;
  void add(const PairStats& other);
};

/// Histogram of pseudo-label confidence weights over one epoch.
struct CspStats {
  std::array<long, 10> lambda_hist{};
  long count = 0;
  double lambda_sum = 0.0;
  void add(double lambda);
};

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double lr = 0.0;
  int steps = 0;
  double loss = 0, ce = 0, pairing = 0, pseudo = 0, prior = 0;  // means over steps
  int skipped_pairing = 0;  // batches whose features had a zero-norm row
  PairStats pairs;
  CspStats csp;
};

struct KMeansSummary {
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;
  bool fixity_held = true;  // after every assignment step
  bool monotone = true;
  double final_objective = 0;
  double pseudo_label_accuracy = 0;  // Hungarian-aligned, against the stored ground truth
};

struct StageResult {
  std::string name;
  StageTag tag = StageTag::init;
  EvalResult eval;
  std::array<double, 3> topk{};  // true class among the top-k heads under the eval mapping
  std::optional<KMeansSummary> kmeans;
};

/// Runs the training stages on one dataset. All randomness is derived from
/// cfg.seed, so a rerun with the same inputs gives bitwise-identical models.
class Trainer {
 public:
  Trainer(const Dataset& data, StageConfig cfg);

  const StageConfig& config() const { return cfg_; }
  ModelConfig model_config() const;
  Model<float> initial_model() const;

  /// Cross-entropy on labeled batches only.
  void pretrain(Model<float>& model);
  /// Half-labeled batches with the full objective.
  void contrastive_pseudo_learning(Model<float>& model);
  /// k-means pseudo-labels for the unlabeled pool, then cross-entropy on both
  /// pools. The pseudo-labels are returned (head ids, -1 when dropped).
  std::vector<int> iterative_learning(Model<float>& model, KMeansSummary* summary = nullptr);
  /// Cross-entropy with ground truth for labeled and unlabeled pools.
  Model<float> upper_bound();

  StageResult evaluate(Model<float>& model, const std::string& name, StageTag tag) const;
  /// One epoch of half batches through a frozen model, counting pair quality.
  PairStats vote_quality(Model<float>& model) const;

  const std::vector<EpochLog>& epochs() const { return epochs_; }
  /// Receives one line per finished epoch.
  std::function<void(const EpochLog&)> on_epoch;

 private:
  void supervised_epochs(Model<float>& model, const RowMatrix<float>& images, const std::vector<int>& labels,
                         int epochs, const std::string& stage, std::uint64_t stream);
  RowMatrix<double> global_features(Model<float>& model, const RowMatrix<float>& images) const;

  const Dataset* data_;
  StageConfig cfg_;
  Vec<double> prior_;
  std::vector<EpochLog> epochs_;
};

}  // namespace owdfa
