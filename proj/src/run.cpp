#include "owdfa/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "owdfa/binary_io.hpp"
#include "owdfa/checkpoint.hpp"

namespace owdfa {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json to_j(const PairStats& p) {
  return {{"anchors", p.anchors},
          {"global_correct", p.global_correct},
          {"agreed", p.agreed},
          {"agreed_correct", p.agreed_correct},
          {"agreed_known", p.agreed_known},
          {"agreed_known_correct", p.agreed_known_correct},
          {"agreed_novel", p.agreed_novel},
          {"agreed_novel_correct", p.agreed_novel_correct},
          {"novel_anchors", p.novel_anchors},
          {"known_anchors", p.known_anchors}};
}

PairStats pairs_from(const json& j) {
  PairStats p;
  p.anchors = j.at("anchors");
  p.global_correct = j.at("global_correct");
  p.agreed = j.at("agreed");
  p.agreed_correct = j.at("agreed_correct");
  p.agreed_known = j.at("agreed_known");
  p.agreed_known_correct = j.at("agreed_known_correct");
  p.agreed_novel = j.at("agreed_novel");
  p.agreed_novel_correct = j.at("agreed_novel_correct");
  p.novel_anchors = j.at("novel_anchors");
  p.known_anchors = j.at("known_anchors");
  return p;
}

json to_j(const EvalResult& e) {
  return {{"acc_known", opt(e.acc_known)}, {"acc_novel", opt(e.acc_novel)}, {"acc_all", opt(e.acc_all)},
          {"nmi_novel", e.nmi_novel},      {"nmi_all", e.nmi_all},         {"ari_novel", e.ari_novel},
          {"ari_all", e.ari_all},          {"auc", opt(e.auc)},            {"mapping", e.mapping}};
}

EvalResult eval_from(const json& j) {
  EvalResult e;
  e.acc_known = opt_from(j.at("acc_known"));
  e.acc_novel = opt_from(j.at("acc_novel"));
  e.acc_all = opt_from(j.at("acc_all"));
  e.nmi_novel = j.at("nmi_novel");
  e.nmi_all = j.at("nmi_all");
  e.ari_novel = j.at("ari_novel");
  e.ari_all = j.at("ari_all");
  e.auc = opt_from(j.at("auc"));
  e.mapping = j.at("mapping").get<std::vector<Index>>();
  return e;
}

json to_j(const KMeansSummary& k) {
  return {{"iterations", k.iterations},
          {"converged", k.converged},
          {"reseeds", k.reseeds},
          {"fixity_held", k.fixity_held},
          {"monotone", k.monotone},
          {"final_objective", k.final_objective},
          {"pseudo_label_accuracy", k.pseudo_label_accuracy}};
}

KMeansSummary kmeans_from(const json& j) {
  KMeansSummary k;
  k.iterations = j.at("iterations");
  k.converged = j.at("converged");
  k.reseeds = j.at("reseeds");
  k.fixity_held = j.at("fixity_held");
  k.monotone = j.at("monotone");
  k.final_objective = j.at("final_objective");
  k.pseudo_label_accuracy = j.at("pseudo_label_accuracy");
  return k;
}

json to_j(const StageResult& r) {
  json j = {{"name", r.name},
            {"tag", static_cast<std::uint32_t>(r.tag)},
            {"eval", to_j(r.eval)},
            {"topk", r.topk}};
  j["kmeans"] = r.kmeans ? to_j(*r.kmeans) : json(nullptr);
  return j;
}

StageResult stage_from(const json& j) {
  StageResult r;
  r.name = j.at("name");
  const auto tag = j.at("tag").get<std::uint32_t>();
  if (tag > static_cast<std::uint32_t>(StageTag::upper)) throw FormatError("report: unknown stage tag");
  r.tag = static_cast<StageTag>(tag);
  r.eval = eval_from(j.at("eval"));
  r.topk = j.at("topk").get<std::array<double, 3>>();
  if (!j.at("kmeans").is_null()) r.kmeans = kmeans_from(j.at("kmeans"));
  return r;
}

json to_j(const EpochLog& e) {
  return {{"stage", e.stage},
          {"epoch", e.epoch},
          {"lr", e.lr},
          {"steps", e.steps},
          {"loss", e.loss},
          {"ce", e.ce},
          {"pairing", e.pairing},
          {"pseudo", e.pseudo},
          {"prior", e.prior},
          {"skipped_pairing", e.skipped_pairing},
          {"pairs", to_j(e.pairs)},
          {"csp", {{"hist", e.csp.lambda_hist}, {"count", e.csp.count}, {"lambda_sum", e.csp.lambda_sum}}}};
}

EpochLog epoch_from(const json& j) {
  EpochLog e;
  e.stage = j.at("stage");
  e.epoch = j.at("epoch");
  e.lr = j.at("lr");
  e.steps = j.at("steps");
  e.loss = j.at("loss");
  e.ce = j.at("ce");
  e.pairing = j.at("pairing");
  e.pseudo = j.at("pseudo");
  e.prior = j.at("prior");
  e.skipped_pairing = j.at("skipped_pairing");
  e.pairs = pairs_from(j.at("pairs"));
  const json& c = j.at("csp");
  e.csp.lambda_hist = c.at("hist").get<std::array<long, 10>>();
  e.csp.count = c.at("count");
  e.csp.lambda_sum = c.at("lambda_sum");
  return e;
}

std::string printf_str(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string pct(const std::optional<double>& v) { return v ? printf_str("%7.2f", 100.0 * *v) : "      -"; }
std::string pct(double v) { return printf_str("%7.2f", 100.0 * v); }
std::string num(const std::optional<double>& v) { return v ? printf_str("%.6f", *v) : ""; }
std::string num(double v) { return printf_str("%.6f", v); }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

bool any_auc(const std::vector<const EvalResult*>& rows) {
  return std::any_of(rows.begin(), rows.end(), [](const EvalResult* e) { return e->auc.has_value(); });
}

std::string table_header(const std::string& first, bool auc) {
  std::string h1 = pad(first, 16) + "  Known |           Novel       |            All";
  std::string h2 = pad("", 16) + "    ACC |    ACC    NMI    ARI |    ACC    NMI    ARI";
  if (auc) {
    h1 += " |    AUC";
    h2 += " |       ";
  }
  return h1 + "\n" + h2 + "\n";
}

std::string table_row(const std::string& name, const EvalResult& e, bool auc) {
  std::string row = pad(name, 16) + pct(e.acc_known) + " |" + pct(e.acc_novel) + pct(e.nmi_novel) + pct(e.ari_novel) +
                    " |" + pct(e.acc_all) + pct(e.nmi_all) + pct(e.ari_all);
  if (auc) row += " |" + pct(e.auc);
  return row + "\n";
}

EvalResult mean_eval(const std::vector<const EvalResult*>& rows) {
  EvalResult m;
  const double n = static_cast<double>(rows.size());
  auto mean_opt = [&](auto field) -> std::optional<double> {
    double s = 0;
    for (const EvalResult* e : rows) {
      if (!(e->*field)) return std::nullopt;
      s += *(e->*field);
    }
    return s / n;
  };
  auto mean = [&](auto field) {
    double s = 0;
    for (const EvalResult* e : rows) s += e->*field;
    return s / n;
  };
  m.acc_known = mean_opt(&EvalResult::acc_known);
  m.acc_novel = mean_opt(&EvalResult::acc_novel);
  m.acc_all = mean_opt(&EvalResult::acc_all);
  m.auc = mean_opt(&EvalResult::auc);
  m.nmi_novel = mean(&EvalResult::nmi_novel);
  m.nmi_all = mean(&EvalResult::nmi_all);
  m.ari_novel = mean(&EvalResult::ari_novel);
  m.ari_all = mean(&EvalResult::ari_all);
  return m;
}

std::string ablation_row_label(const std::string& ablation) {
  static const std::map<std::string, std::string> labels = {
      {"ce", "CE"},           {"gr", "CE+GR"},           {"glv", "CE+GLV"},
      {"gr+csp", "CE+GR+CSP"}, {"glv+csp", "CE+GLV+CSP"}, {"glv+hard", "CE+GLV+Hard"}};
  const auto it = labels.find(ablation);
  return it == labels.end() ? ablation : it->second;
}

}  // namespace

std::string_view stage_label(StageTag tag) {
  switch (tag) {
    case StageTag::init: return "Init";
    case StageTag::pretrain: return "S1-Pretrain";
    case StageTag::cpl: return "S2-CPL";
    case StageTag::iterative: return "S3-IL";
    case StageTag::upper: return "Upper Bound";
  }
  return "?";
}

const StageResult* RunReport::find(StageTag tag) const {
  for (const StageResult& r : stages)
    if (r.tag == tag) return &r;
  return nullptr;
}

void RunReport::put(StageResult r) {
  std::erase_if(stages, [&](const StageResult& s) { return s.tag == r.tag; });
  stages.push_back(std::move(r));
  std::stable_sort(stages.begin(), stages.end(),
                   [](const StageResult& a, const StageResult& b) { return a.tag < b.tag; });
}

std::string to_json(const RunReport& report) {
  json j;
  j["config"] = report.config.serialize();
  j["ablation"] = report.ablation;
  j["protocol"] = std::string(to_string(report.protocol));
  j["n_known"] = report.n_known;
  j["n_novel"] = report.n_novel;
  j["data_seed"] = report.data_seed;
  j["stages"] = json::array();
  for (const StageResult& r : report.stages) j["stages"].push_back(to_j(r));
  j["epochs"] = json::array();
  for (const EpochLog& e : report.epochs) j["epochs"].push_back(to_j(e));
  j["vote"] = report.vote ? to_j(*report.vote) : json(nullptr);
  return j.dump(1) + "\n";
}

RunReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    RunReport r;
    r.config = StageConfig::parse(j.at("config").get<std::string>());
    r.ablation = j.at("ablation");
    const std::string protocol = j.at("protocol");
    if (protocol != "p1" && protocol != "p2") throw FormatError("report: unknown protocol " + protocol);
    r.protocol = protocol == "p1" ? Protocol::p1 : Protocol::p2;
    r.n_known = j.at("n_known");
    r.n_novel = j.at("n_novel");
    r.data_seed = j.at("data_seed");
    for (const json& s : j.at("stages")) r.stages.push_back(stage_from(s));
    for (const json& e : j.at("epochs")) r.epochs.push_back(epoch_from(e));
    if (!j.at("vote").is_null()) r.vote = pairs_from(j.at("vote"));
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string stage_table(const RunReport& report) {
  std::vector<const EvalResult*> rows;
  for (const StageResult& r : report.stages) rows.push_back(&r.eval);
  const bool auc = any_auc(rows);
  std::string out = table_header("Stage", auc);
  for (const StageResult& r : report.stages)
    if (r.tag != StageTag::upper && r.tag != StageTag::init) out += table_row(std::string(stage_label(r.tag)), r.eval, auc);
  return out;
}

std::string ablation_table(const std::vector<RunReport>& reports, StageTag tag) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalResult*>> groups;
  for (const RunReport& r : reports) {
    const StageResult* s = r.find(tag);
    if (!s) continue;
    if (!groups.count(r.ablation)) order.push_back(r.ablation);
    groups[r.ablation].push_back(&s->eval);
  }
  std::vector<const EvalResult*> all;
  for (const auto& [name, rows] : groups) all.insert(all.end(), rows.begin(), rows.end());
  const bool auc = any_auc(all);
  std::string out = table_header("Method (seeds)", auc);
  for (const std::string& name : order) {
    const auto& rows = groups[name];
    out += table_row(ablation_row_label(name) + " (" + std::to_string(rows.size()) + ")", mean_eval(rows), auc);
  }
  return out;
}

std::string report_text(const std::vector<RunReport>& reports) {
  std::ostringstream out;
  for (const RunReport& r : reports) {
    out << "run: seed=" << r.config.seed << " data_seed=" << r.data_seed << " ablation=" << r.ablation
        << " protocol=" << to_string(r.protocol) << " classes=" << r.n_known << "+" << r.n_novel << "\n\n";

    std::vector<const EvalResult*> rows;
    for (const StageResult& s : r.stages) rows.push_back(&s.eval);
    const bool auc = any_auc(rows);
    out << table_header("Method", auc);
    if (const StageResult* s = r.find(StageTag::pretrain)) out << table_row("Lower Bound", s->eval, auc);
    if (const StageResult* s = r.find(StageTag::upper)) out << table_row("Upper Bound", s->eval, auc);
    const StageResult* final_stage = r.find(StageTag::iterative);
    if (!final_stage) final_stage = r.find(StageTag::cpl);
    if (final_stage) out << table_row("CPL", final_stage->eval, auc);
    out << "\n" << stage_table(r) << "\n";

    for (const StageResult& s : r.stages) {
      out << stage_label(s.tag) << " top-1/2/3:" << pct(s.topk[0]) << pct(s.topk[1]) << pct(s.topk[2]) << "\n";
      if (s.kmeans) {
        const KMeansSummary& k = *s.kmeans;
        out << stage_label(s.tag) << " k-means: iterations " << k.iterations << (k.converged ? " converged" : " not converged")
            << ", reseeds " << k.reseeds << ", fixity " << (k.fixity_held ? "held" : "broken") << ", objective "
            << (k.monotone ? "non-increasing" : "increased") << ", pseudo-label ACC" << pct(k.pseudo_label_accuracy)
            << "\n";
      }
    }
    if (r.vote) {
      out << "pairs after S1: vote-agreed precision" << pct(r.vote->agreed_precision()) << " (" << r.vote->agreed << " of "
          << r.vote->anchors << " anchors), global top-1 precision" << pct(r.vote->global_precision()) << "\n";
    }
    out << "\nconfig:\n" << r.config.serialize() << "\n";
  }
  if (reports.size() > 1) {
    out << "Ablation at S2-CPL (seed mean)\n" << ablation_table(reports, StageTag::cpl) << "\n";
    out << "Ablation at S3-IL (seed mean)\n" << ablation_table(reports, StageTag::iterative) << "\n";
  }
  return out.str();
}

std::string report_csv(const std::vector<RunReport>& reports) {
  std::ostringstream out;
  out << "ablation,seed,data_seed,protocol,stage,acc_known,acc_novel,acc_all,nmi_novel,nmi_all,ari_novel,ari_all,auc,"
         "top1,top2,top3\n";
  for (const RunReport& r : reports)
    for (const StageResult& s : r.stages) {
      const EvalResult& e = s.eval;
      out << r.ablation << "," << r.config.seed << "," << r.data_seed << "," << to_string(r.protocol) << ","
          << stage_label(s.tag) << "," << num(e.acc_known) << "," << num(e.acc_novel) << "," << num(e.acc_all) << ","
          << num(e.nmi_novel) << "," << num(e.nmi_all) << "," << num(e.ari_novel) << "," << num(e.ari_all) << ","
          << num(e.auc) << "," << num(s.topk[0]) << "," << num(s.topk[1]) << "," << num(s.topk[2]) << "\n";
    }
  return out.str();
}

std::string losses_dat(const RunReport& report) {
  std::ostringstream out;
  std::string current;
  for (const EpochLog& e : report.epochs) {
    if (e.stage != current) {
      if (!current.empty()) out << "\n\n";
      current = e.stage;
      out << "# " << e.stage << "\n# epoch lr loss ce pairing pseudo prior\n";
    }
    out << e.epoch << " " << num(e.lr) << " " << num(e.loss) << " " << num(e.ce) << " " << num(e.pairing) << " "
        << num(e.pseudo) << " " << num(e.prior) << "\n";
  }
  return out.str();
}

std::string pairs_csv(const RunReport& report) {
  std::ostringstream out;
  out << "stage,epoch,anchors,global_correct,global_precision,agreed,agreed_correct,agreed_precision,agreed_known,"
         "agreed_known_correct,agreed_novel,agreed_novel_correct,known_anchors,novel_anchors\n";
  auto row = [&](const std::string& stage, int epoch, const PairStats& p) {
    out << stage << "," << epoch << "," << p.anchors << "," << p.global_correct << "," << num(p.global_precision())
        << "," << p.agreed << "," << p.agreed_correct << "," << num(p.agreed_precision()) << "," << p.agreed_known << ","
        << p.agreed_known_correct << "," << p.agreed_novel << "," << p.agreed_novel_correct << "," << p.known_anchors
        << "," << p.novel_anchors << "\n";
  };
  if (report.vote) row("after_pretrain", 0, *report.vote);
  for (const EpochLog& e : report.epochs)
    if (e.pairs.anchors > 0) row(e.stage, e.epoch, e.pairs);
  return out.str();
}

std::string csp_csv(const RunReport& report) {
  std::ostringstream out;
  out << "stage,epoch,count,lambda_mean";
  for (int b = 0; b < 10; ++b) out << ",bin" << b;
  out << "\n";
  for (const EpochLog& e : report.epochs) {
    if (e.csp.count == 0) continue;
    out << e.stage << "," << e.epoch << "," << e.csp.count << ","
        << num(e.csp.lambda_sum / static_cast<double>(e.csp.count));
    for (long c : e.csp.lambda_hist) out << "," << c;
    out << "\n";
  }
  return out.str();
}

void write_report_files(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "run.json", to_json(report));
  write_file(dir / "report.txt", report_text({report}));
  write_file(dir / "report.csv", report_csv({report}));
  write_file(dir / "losses.dat", losses_dat(report));
  write_file(dir / "pairs.csv", pairs_csv(report));
  write_file(dir / "csp_diag.csv", csp_csv(report));
}

RunReport load_report(const std::filesystem::path& dir) { return report_from_json(read_file(dir / "run.json")); }

StageSelection parse_stage(std::string_view text) {
  if (text == "1") return StageSelection::pretrain;
  if (text == "2") return StageSelection::cpl;
  if (text == "3") return StageSelection::iterative;
  if (text == "upper") return StageSelection::upper;
  if (text == "all") return StageSelection::all;
  throw ConfigError("unknown stage '" + std::string(text) + "' (expected 1, 2, 3, upper or all)");
}

namespace {

Model<float> resume_model(const Trainer& trainer, const std::filesystem::path& path,
                          std::initializer_list<StageTag> accepted, std::string_view stage) {
  Checkpoint ck = load_checkpoint(path);
  if (std::find(accepted.begin(), accepted.end(), ck.stage) == accepted.end()) {
    std::string want;
    for (StageTag t : accepted) want += (want.empty() ? "" : " or ") + std::string(to_string(t));
    throw CompatibilityError(std::string(stage) + " needs a " + want + " checkpoint, " + path.string() + " is tagged " +
                             std::string(to_string(ck.stage)));
  }
  if (!(ck.model.config() == trainer.model_config()))
    throw CompatibilityError(path.string() + " was built for another model layout or class count");
  return std::move(ck.model);
}

}  // namespace

RunReport run_training(const Dataset& data, const StageConfig& cfg, const RunOptions& options,
                       const std::filesystem::path& dir) {
  using clock = std::chrono::steady_clock;
  const bool all = options.stage == StageSelection::all;
  std::filesystem::create_directories(dir);

  RunReport report;
  if (!all && std::filesystem::exists(dir / "run.json")) report = load_report(dir);
  report.config = cfg;
  report.ablation = ablation_name(cfg);
  report.protocol = data.spec.protocol;
  report.n_known = data.spec.n_known;
  report.n_novel = data.spec.n_novel;
  report.data_seed = data.spec.seed;

  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  Trainer trainer(data, cfg);
  trainer.on_epoch = [&](const EpochLog& e) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s epoch %d lr %.3g loss %.4f (ce %.4f pair %.4f pseudo %.4f prior %.4f)",
                  e.stage.c_str(), e.epoch, e.lr, e.loss, e.ce, e.pairing, e.pseudo, e.prior);
    log(buf);
  };
  std::ostringstream timing;
  auto timed = [&](const std::string& name, auto&& body) {
    const auto t0 = clock::now();
    body();
    timing << name << " " << std::chrono::duration<double>(clock::now() - t0).count() << "\n";
  };
  auto record = [&](Model<float>& model, StageTag tag, std::optional<KMeansSummary> kmeans = std::nullopt) {
    StageResult r = trainer.evaluate(model, std::string(stage_label(tag)), tag);
    r.kmeans = kmeans;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: known %.4f novel %.4f all %.4f", r.name.c_str(), r.eval.acc_known.value_or(0),
                  r.eval.acc_novel.value_or(0), r.eval.acc_all.value_or(0));
    log(buf);
    report.put(std::move(r));
  };

  const std::size_t epochs_before = trainer.epochs().size();
  std::optional<Model<float>> model;

  if (all || options.stage == StageSelection::pretrain) {
    timed("stage1", [&] {
      model = trainer.initial_model();
      trainer.pretrain(*model);
    });
    save_checkpoint(dir / "stage1.ckpt", *model, StageTag::pretrain);
    record(*model, StageTag::pretrain);
    report.vote = trainer.vote_quality(*model);
  }

  if (all || options.stage == StageSelection::cpl) {
    if (cfg.stage2_from_scratch && !options.resume) {
      model = trainer.initial_model();
    } else if (!all) {
      model = resume_model(trainer, options.resume.value_or(dir / "stage1.ckpt"), {StageTag::init, StageTag::pretrain},
                           "stage 2");
    }
    timed("stage2", [&] { trainer.contrastive_pseudo_learning(*model); });
    save_checkpoint(dir / "stage2.ckpt", *model, StageTag::cpl);
    record(*model, StageTag::cpl);
  }

  if (all || options.stage == StageSelection::iterative) {
    if (!all) model = resume_model(trainer, options.resume.value_or(dir / "stage2.ckpt"), {StageTag::cpl}, "stage 3");
    KMeansSummary summary;
    std::vector<int> pseudo;
    timed("stage3", [&] { pseudo = trainer.iterative_learning(*model, &summary); });
    if (!summary.converged) log("warning: k-means stopped at max_iter without converging");
    save_checkpoint(dir / "stage3.ckpt", *model, StageTag::iterative);
    save_labels(dir / "pseudo_labels.labels", pseudo);
    record(*model, StageTag::iterative, summary);
  }

  if ((all && options.upper) || options.stage == StageSelection::upper) {
    Model<float> upper = trainer.initial_model();
    timed("upper", [&] { upper = trainer.upper_bound(); });
    save_checkpoint(dir / "upper.ckpt", upper, StageTag::upper);
    record(upper, StageTag::upper);
  }

  // epochs of the stages run now replace any earlier ones of the same name
  const std::vector<EpochLog>& fresh = trainer.epochs();
  for (std::size_t i = epochs_before; i < fresh.size(); ++i)
    std::erase_if(report.epochs, [&](const EpochLog& e) { return e.stage == fresh[i].stage; });
  report.epochs.insert(report.epochs.end(), fresh.begin() + static_cast<std::ptrdiff_t>(epochs_before), fresh.end());
  std::stable_sort(report.epochs.begin(), report.epochs.end(), [](const EpochLog& a, const EpochLog& b) {
    static const std::map<std::string, int> order = {{"pretrain", 0}, {"cpl", 1}, {"iterative", 2}, {"upper", 3}};
    return order.at(a.stage) < order.at(b.stage);
  });

  write_report_files(report, dir);
  write_file(dir / "timing.txt", timing.str());
  return report;
}

}  // namespace owdfa
