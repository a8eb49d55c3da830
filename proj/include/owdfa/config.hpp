#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "owdfa/objective.hpp"

namespace owdfa {

enum class PriorKind { uniform, counts };

/// Every knob of a training run. Text form is flat `key=value` lines; keys are
/// case-insensitive, `#` starts a comment, unknown keys are rejected.
struct StageConfig {
  int t1 = 20;
  int t2 = 50;
  int t3 = 20;
  int t_upper = 20;
  double lr = 2e-4;
  double lr_decay = 0.2;
  int lr_decay_every = 10;
  int batch_size = 128;
  int epoch_batches = 0;  // 0: an epoch is one pass over the labeled pool
  double tau = 1.0;
  bool csp_resample = true;  // false: the Gumbel noise of a sample is drawn once and reused every epoch
  int q = 3;
  LossWeights weights;
  double hard_threshold = 0.95;
  PriorKind prior = PriorKind::uniform;
  double kmeans_tol = 1e-4;
  int kmeans_max_iter = 100;
  int kmeans_k = 0;  // 0: total class count
  bool stage2_from_scratch = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::string serialize() const;
  static StageConfig parse(std::string_view text);
  /// Applies one `key=value` assignment.
  void set(std::string_view key, std::string_view value);
  /// Learning rate for a 0-based epoch within a stage.
  double lr_at(int epoch) const;
  bool operator==(const StageConfig&) const = default;
};

/// Loss-term selection for the named ablation rows:
/// ce, gr, glv, gr+csp, glv+csp, glv+hard.
void apply_ablation(StageConfig& cfg, std::string_view name);
/// Inverse of apply_ablation for the active loss terms, e.g. "glv+csp".
std::string ablation_name(const StageConfig& cfg);

}  // namespace owdfa
