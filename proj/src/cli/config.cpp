#include "iwadv/cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace iwadv::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// strtod keeps subnormals that std::stod rejects as out of range.
bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d{
      {"run.seed", "0"},
      // synthetic neuron
      {"sim.frames", "36000"},
      {"sim.rate_hz", "60"},
      {"sim.tau", "0.7"},
      {"sim.alpha", "1"},
      {"sim.beta", "0"},
      {"sim.sigma", "0.2"},
      {"sim.rate", "0.01"},
      // spike model
      {"model.conv_widths", "15,9"},
      {"model.filters", "16"},
      {"model.noise_layers", "0,1"},
      {"model.disc_widths", "11,11"},
      {"model.disc_filters", "16"},
      {"model.ar_window", "10"},
      {"model.segment_frames", "60"},
      // training
      {"train.objective", "iw-avb"},
      {"train.k", "2"},
      {"train.steps", "1500"},
      {"train.batch", "80"},
      {"train.lr_theta", "0.003"},
      {"train.lr_phi", "0.003"},
      {"train.lr_psi", "0.003"},
      {"train.optimizer", "adam"},
      {"train.disc_steps", "1"},
      {"train.checkpoint_every", "0"},
      {"train.early_stop", "false"},
      {"train.trace", ""},
      // inference / evaluation
      {"infer.samples", "20"},
      {"infer.checkpoint", ""},
      {"infer.trace", ""},
      {"eval.rate_hz", "25"},
      {"eval.binning", "count"},
      // gradient SNR study
      {"snr.ks", "1,4,16,64"},
      {"snr.repeats", "300"},
      {"snr.dim", "20"},
      {"snr.perturbation", "0.01"},
      {"snr.batch", "1"},
      // theory suites
      {"theory.identity_models", "100"},
      {"theory.chain_models", "50"},
      {"theory.ordering_models", "20"},
      {"theory.grid", "200"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config file");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(path.string() + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' outside a [section]");
    for (const auto& [key, value] : body) {
      try {
        set(section + "." + key, value.get_value<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
      }
    }
  }
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const auto& v = raw(key);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + v + "'");
  }
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& v = raw(key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config key '" + key + "' needs a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is out of range: '" + v + "'");
  }
}

std::size_t RunConfig::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' needs true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(raw(key));
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("config key '" + key + "' needs a comma-separated list of integers, got '" + raw(key) + "'");
    }
    out.push_back(std::stoul(item));
  }
  return out;
}

std::string RunConfig::to_ini() const {
  std::string out, section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_ini())));
  return buf;
}

void emit_report(const std::vector<MetricRecord>& metrics, const std::filesystem::path& path) {
  if (metrics.empty()) throw std::invalid_argument("report has no metrics");
  std::string text = "name\tvalue\tse\tconfig_hash\n";
  for (const auto& m : metrics) {
    if (m.name.empty() || m.name.find_first_of("\t\n") != std::string::npos) {
      throw std::invalid_argument("metric name '" + m.name + "' is empty or contains a tab or newline");
    }
    text += m.name + "\t" + format_double(m.value) + "\t" + format_double(m.se) + "\t" + m.config_hash + "\n";
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write report");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": failed writing report");
}

std::vector<MetricRecord> parse_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open report");
  std::string line;
  if (!std::getline(in, line) || line != "name\tvalue\tse\tconfig_hash") {
    throw std::runtime_error(path.string() + ": line 1: missing report header");
  }
  std::vector<MetricRecord> out;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cells.push_back(c);
    if (cells.size() != 4) throw std::runtime_error(path.string() + ": line " + std::to_string(n) + ": expected 4 fields");
    MetricRecord r{cells[0], 0, 0, cells[3]};
    if (!parse_double(cells[1], r.value) || !parse_double(cells[2], r.se)) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(n) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace iwadv::cli
