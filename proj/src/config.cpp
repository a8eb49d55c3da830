#include "owdfa/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "owdfa/error.hpp"

namespace owdfa {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T number(std::string_view key, std::string_view value) {
  T v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("config: bad value '" + std::string(value) + "' for " + std::string(key));
  return v;
}

bool boolean(std::string_view key, std::string_view value) {
  const std::string v = lower(value);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + std::string(value) + "' for " + std::string(key));
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

void StageConfig::validate() const {
  if (t1 < 0 || t2 < 0 || t3 < 0 || t_upper < 0) throw ConfigError("config: epoch counts must be nonnegative");
  if (!(lr > 0)) throw ConfigError("config: lr must be positive");
  if (!(lr_decay > 0) || lr_decay_every <= 0) throw ConfigError("config: lr_decay and lr_decay_every must be positive");
  if (batch_size <= 0 || batch_size % 2 != 0) throw ConfigError("config: batch_size must be positive and even");
  if (epoch_batches < 0) throw ConfigError("config: epoch_batches must be nonnegative");
  if (!(tau > 0)) throw ConfigError("config: tau must be positive");
  if (q <= 0) throw ConfigError("config: q must be positive");
  if (!(hard_threshold >= 0 && hard_threshold <= 1)) throw ConfigError("config: hard_threshold must lie in [0, 1]");
  if (!(kmeans_tol > 0) || kmeans_max_iter <= 0 || kmeans_k < 0)
    throw ConfigError("config: kmeans_tol and kmeans_max_iter must be positive");
  weights.validate();
}

void StageConfig::set(std::string_view raw_key, std::string_view raw_value) {
  const std::string key = lower(trim(raw_key));
  const std::string_view value = trim(raw_value);
  if (key == "t1") t1 = number<int>(key, value);
  else if (key == "t2") t2 = number<int>(key, value);
  else if (key == "t3") t3 = number<int>(key, value);
  else if (key == "t_upper") t_upper = number<int>(key, value);
  else if (key == "lr") lr = number<double>(key, value);
  else if (key == "lr_decay") lr_decay = number<double>(key, value);
  else if (key == "lr_decay_every") lr_decay_every = number<int>(key, value);
  else if (key == "batch_size") batch_size = number<int>(key, value);
  else if (key == "epoch_batches") epoch_batches = number<int>(key, value);
  else if (key == "tau") tau = number<double>(key, value);
  else if (key == "csp_resample") csp_resample = boolean(key, value);
  else if (key == "q") q = number<int>(key, value);
  else if (key == "eta_1") weights.eta1 = number<double>(key, value);
  else if (key == "eta_2") weights.eta2 = number<double>(key, value);
  else if (key == "eta_3") weights.eta3 = number<double>(key, value);
  else if (key == "pairing_mode") {
    const std::string v = lower(value);
    if (v == "none") weights.pairing = PairingMode::none;
    else if (v == "gr") weights.pairing = PairingMode::gr;
    else if (v == "glv") weights.pairing = PairingMode::glv;
    else if (v == "gr+glv" || v == "glv+gr")
      throw ConfigError("config: pairing modes gr and glv are exclusive");
    else throw ConfigError("config: unknown pairing_mode '" + std::string(value) + "'");
  } else if (key == "pseudo_mode") {
    const std::string v = lower(value);
    if (v == "none") weights.pseudo = PseudoMode::none;
    else if (v == "csp") weights.pseudo = PseudoMode::csp;
    else if (v == "hard") weights.pseudo = PseudoMode::hard;
    else throw ConfigError("config: unknown pseudo_mode '" + std::string(value) + "'");
  } else if (key == "hard_threshold") hard_threshold = number<double>(key, value);
  else if (key == "prior") {
    const std::string v = lower(value);
    if (v == "uniform") prior = PriorKind::uniform;
    else if (v == "counts") prior = PriorKind::counts;
    else throw ConfigError("config: unknown prior '" + std::string(value) + "'");
  } else if (key == "kmeans_tol") kmeans_tol = number<double>(key, value);
  else if (key == "kmeans_max_iter") kmeans_max_iter = number<int>(key, value);
  else if (key == "kmeans_k") kmeans_k = number<int>(key, value);
  else if (key == "stage2_from_scratch") stage2_from_scratch = boolean(key, value);
  else if (key == "seed") seed = number<std::uint64_t>(key, value);
  else throw ConfigError("config: unknown key '" + std::string(trim(raw_key)) + "'");
}

StageConfig StageConfig::parse(std::string_view text) {
  StageConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int number_of_line = 0;
  while (std::getline(in, line)) {
    ++number_of_line;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(number_of_line) + ": expected key=value");
    cfg.set(l.substr(0, eq), l.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::string StageConfig::serialize() const {
  std::ostringstream out;
  out << "t1=" << t1 << "\n"
      << "t2=" << t2 << "\n"
      << "t3=" << t3 << "\n"
      << "t_upper=" << t_upper << "\n"
      << "lr=" << fmt(lr) << "\n"
      << "lr_decay=" << fmt(lr_decay) << "\n"
      << "lr_decay_every=" << lr_decay_every << "\n"
      << "batch_size=" << batch_size << "\n"
      << "epoch_batches=" << epoch_batches << "\n"
      << "tau=" << fmt(tau) << "\n"
      << "csp_resample=" << (csp_resample ? "true" : "false") << "\n"
      << "q=" << q << "\n"
      << "eta_1=" << fmt(weights.eta1) << "\n"
      << "eta_2=" << fmt(weights.eta2) << "\n"
      << "eta_3=" << fmt(weights.eta3) << "\n"
      << "pairing_mode=" << to_string(weights.pairing) << "\n"
      << "pseudo_mode=" << to_string(weights.pseudo) << "\n"
      << "hard_threshold=" << fmt(hard_threshold) << "\n"
      << "prior=" << (prior == PriorKind::uniform ? "uniform" : "counts") << "\n"
      << "kmeans_tol=" << fmt(kmeans_tol) << "\n"
      << "kmeans_max_iter=" << kmeans_max_iter << "\n"
      << "kmeans_k=" << kmeans_k << "\n"
      << "stage2_from_scratch=" << (stage2_from_scratch ? "true" : "false") << "\n"
      << "seed=" << seed << "\n";
  return out.str();
}

double StageConfig::lr_at(int epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
}

void apply_ablation(StageConfig& cfg, std::string_view name) {
  const std::string n = lower(name);
  auto set = [&](PairingMode p, PseudoMode s) {
    cfg.weights.pairing = p;
    cfg.weights.pseudo = s;
  };
  if (n == "ce") set(PairingMode::none, PseudoMode::none);
  else if (n == "gr") set(PairingMode::gr, PseudoMode::none);
  else if (n == "glv") set(PairingMode::glv, PseudoMode::none);
  else if (n == "gr+csp") set(PairingMode::gr, PseudoMode::csp);
  else if (n == "glv+csp") set(PairingMode::glv, PseudoMode::csp);
  else if (n == "glv+hard") set(PairingMode::glv, PseudoMode::hard);
  else throw ConfigError("unknown ablation '" + std::string(name) + "' (ce, gr, glv, gr+csp, glv+csp, glv+hard)");
}

std::string ablation_name(const StageConfig& cfg) {
  const LossWeights& w = cfg.weights;
  const bool pairing = w.pairing != PairingMode::none && w.eta1 > 0;
  const bool pseudo = w.pseudo != PseudoMode::none && w.eta2 > 0;
  if (!pairing && !pseudo) return "ce";
  std::string out = pairing ? std::string(to_string(w.pairing)) : std::string();
  if (pseudo) out += (out.empty() ? "" : "+") + std::string(to_string(w.pseudo));
  return out;
}

}  // namespace owdfa
