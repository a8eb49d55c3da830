#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "owdfa/binary_io.hpp"
#include "owdfa/checkpoint.hpp"
#include "owdfa/config.hpp"
#include "owdfa/data.hpp"
#include "owdfa/run.hpp"

namespace fs = std::filesystem;
using namespace owdfa;

namespace {

// process exit codes
enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingFile = 3,
  kBadConfig = 4,
  kIncompatible = 5,
  kBadFormat = 6,
};

struct GenerateArgs {
  BenchmarkSpec spec;
  std::string out;
  std::string protocol = "p1";
  bool no_jitter = false;
};

struct TrainArgs {
  std::string data, out, stage = "all", config, resume, ablation;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool no_upper = false, quiet = false;
};

struct EvalArgs {
  std::string data, checkpoint, config;
};

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

Protocol parse_protocol(const std::string& s) {
  if (s == "p1") return Protocol::p1;
  if (s == "p2") return Protocol::p2;
  throw ConfigError("unknown protocol '" + s + "' (p1 or p2)");
}

int generate_cmd(GenerateArgs& a) {
  a.spec.protocol = parse_protocol(a.protocol);
  a.spec.jitter = !a.no_jitter;
  a.spec.validate();
  const Dataset d = generate(a.spec);
  save_dataset(d, a.out);
  for (const ClassInfo& c : d.classes) std::cout << c.describe() << "\n";
  std::cout << "labeled " << d.labeled.size() << ", unlabeled " << d.unlabeled.size() << ", test " << d.test.size()
            << "; nearest-centroid accuracy " << nearest_centroid_accuracy(d) << "\n"
            << "wrote " << a.out << "\n";
  return kOk;
}

StageConfig load_config(const std::string& path) {
  return path.empty() ? StageConfig{} : StageConfig::parse(read_file(path));
}

int train_cmd(TrainArgs& a) {
  StageConfig cfg = load_config(a.config);
  if (!a.ablation.empty()) apply_ablation(cfg, a.ablation);
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  Dataset data;
  if (a.data.empty()) {
    BenchmarkSpec spec;
    spec.seed = cfg.seed;
    data = generate(spec);
  } else {
    data = load_dataset(a.data);
  }

  RunOptions opt;
  opt.stage = parse_stage(a.stage);
  if (!a.resume.empty()) opt.resume = fs::path(a.resume);
  opt.upper = !a.no_upper;
  if (!a.quiet) opt.log = [](const std::string& line) { std::cerr << line << "\n"; };
  const RunReport report = run_training(data, cfg, opt, a.out);
  std::cout << stage_table(report);
  return kOk;
}

int eval_cmd(EvalArgs& a) {
  const StageConfig cfg = load_config(a.config);
  const Dataset data = load_dataset(a.data);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const Trainer trainer(data, cfg);
  if (!(ck.model.config() == trainer.model_config()))
    throw CompatibilityError(a.checkpoint + " was built for another model layout or class count");
  RunReport report;
  report.config = cfg;
  report.protocol = data.spec.protocol;
  report.n_known = data.spec.n_known;
  report.n_novel = data.spec.n_novel;
  report.data_seed = data.spec.seed;
  report.put(trainer.evaluate(ck.model, std::string(stage_label(ck.stage)), ck.stage));
  std::cout << stage_label(ck.stage) << " checkpoint on " << data.test.size() << " test samples\n";
  std::vector<RunReport> one{report};
  const std::string csv = report_csv(one);
  const EvalResult& e = report.stages.front().eval;
  std::printf("acc known %.4f novel %.4f all %.4f | nmi novel %.4f all %.4f | ari novel %.4f all %.4f",
              e.acc_known.value_or(0), e.acc_novel.value_or(0), e.acc_all.value_or(0), e.nmi_novel, e.nmi_all,
              e.ari_novel, e.ari_all);
  if (e.auc) std::printf(" | auc %.4f", *e.auc);
  std::printf("\n%s", csv.c_str());
  return kOk;
}

int report_cmd(ReportArgs& a) {
  std::vector<RunReport> reports;
  for (const std::string& dir : a.runs) reports.push_back(load_report(dir));
  const std::string text = report_text(reports);
  const std::string csv = report_csv(reports);
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "report.txt", text);
    write_file(fs::path(a.out) / "report.csv", csv);
    std::cout << "wrote " << (fs::path(a.out) / "report.txt").string() << " and report.csv\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-world deepfake attribution on a synthetic benchmark"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic benchmark dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.spec.seed, "Dataset seed");
  g->add_option("--protocol", gen.protocol, "p1 (fakes only) or p2 (real and fake)");
  g->add_flag("--real-novel", gen.spec.real_novel, "Under p2, also make the first novel class real");
  g->add_option("--n-known", gen.spec.n_known, "Known classes");
  g->add_option("--n-novel", gen.spec.n_novel, "Novel classes");
  g->add_option("--labeled", gen.spec.labeled_per_known, "Labeled samples per known class");
  g->add_option("--unlabeled", gen.spec.unlabeled_per_class, "Unlabeled samples per class");
  g->add_option("--test", gen.spec.test_per_class, "Test samples per class");
  g->add_option("--image-size", gen.spec.image_size, "Image side in pixels");
  g->add_option("--region-size", gen.spec.region_size, "Side of the manipulated region");
  g->add_option("--noise", gen.spec.noise_sigma, "Pixel noise sigma");
  g->add_option("--real-multiplier", gen.spec.real_multiplier, "Real-class size factor under p2");
  g->add_option("--global-class", gen.spec.global_class, "Class with a whole-image texture (-1: last)");
  g->add_flag("--no-jitter", gen.no_jitter, "Same background phase for every sample");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run training stages and write checkpoints plus a run report");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--data", tr.data, "Dataset directory (default: generate one from the seed)");
  t->add_option("--stage", tr.stage, "1, 2, 3, upper or all")->check(CLI::IsMember({"1", "2", "3", "upper", "all"}));
  t->add_option("--config", tr.config, "Flat key=value config file");
  t->add_option("--seed", tr.seed, "Run seed (overrides the config)");
  t->add_option("--resume", tr.resume, "Checkpoint to start the stage from");
  t->add_option("--ablation", tr.ablation, "Loss terms: ce, gr, glv, gr+csp, glv+csp, glv+hard")
      ->check(CLI::IsMember({"ce", "gr", "glv", "gr+csp", "glv+csp", "glv+hard"}));
  t->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  t->add_flag("--no-upper", tr.no_upper, "With --stage all, skip the upper-bound model");
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--config", ev.config, "Config file (for q)");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Tables and CSV from finished runs");
  r->add_option("runs", rep.runs, "Run directories")->required();
  r->add_option("--out", rep.out, "Also write report.txt and report.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return generate_cmd(gen);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*r) return report_cmd(rep);
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kMissingFile;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kBadConfig;
  } catch (const CompatibilityError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kIncompatible;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kBadFormat;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
