#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "owdfa/trainer.hpp"

namespace owdfa {

/// Everything a training run reports. Wall-clock time is kept out of it so
/// that reruns with the same inputs serialize to identical bytes.
struct RunReport {
  StageConfig config;
  std::string ablation = "glv+csp";
  Protocol protocol = Protocol::p1;
  int n_known = 0, n_novel = 0;
  std::uint64_t data_seed = 0;
  std::vector<StageResult> stages;  // ordered by stage tag
  std::vector<EpochLog> epochs;
  std::optional<PairStats> vote;  // one epoch of pair quality after stage 1

  const StageResult* find(StageTag tag) const;
  /// Inserts or replaces the row for r.tag.
  void put(StageResult r);
};

std::string to_json(const RunReport& report);
RunReport report_from_json(std::string_view text);

/// Known/Novel/All table with one row per stage of one run.
std::string stage_table(const RunReport& report);
/// Seed-averaged rows per ablation name, taken at `tag`.
std::string ablation_table(const std::vector<RunReport>& reports, StageTag tag);
/// Full human-readable report for a set of runs.
std::string report_text(const std::vector<RunReport>& reports);
/// One row per (run, stage).
std::string report_csv(const std::vector<RunReport>& reports);
/// Whitespace-separated per-epoch losses with a `#` header, for gnuplot.
std::string losses_dat(const RunReport& report);
std::string pairs_csv(const RunReport& report);
std::string csp_csv(const RunReport& report);

/// run.json, report.txt, report.csv, losses.dat, pairs.csv, csp_diag.csv.
void write_report_files(const RunReport& report, const std::filesystem::path& dir);
RunReport load_report(const std::filesystem::path& dir);

enum class StageSelection { pretrain, cpl, iterative, upper, all };
/// "1", "2", "3", "upper" or "all".
StageSelection parse_stage(std::string_view text);

struct RunOptions {
  StageSelection stage = StageSelection::all;
  std::optional<std::filesystem::path> resume;  // default: the previous stage's checkpoint in the run dir
  bool upper = true;                             // `all` also trains the upper bound
  std::function<void(const std::string&)> log;   // progress lines
};

/// Runs the selected stages and writes checkpoints (stage1.ckpt, stage2.ckpt,
/// stage3.ckpt, upper.ckpt), pseudo_labels.labels, the report files and
/// timing.txt into `dir`. A report already in `dir` is extended.
/// Throws CompatibilityError when the resumed checkpoint comes from the wrong
/// stage or was built for another model layout.
RunReport run_training(const Dataset& data, const StageConfig& cfg, const RunOptions& options,
                       const std::filesystem::path& dir);

/// Label of a stage row as it appears in the tables.
std::string_view stage_label(StageTag tag);

}  // namespace owdfa
