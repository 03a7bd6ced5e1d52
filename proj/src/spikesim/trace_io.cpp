#include "iwadv/spikesim/trace_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace iwadv::spike {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) cells.push_back(cell);
  if (!line.empty() && line.back() == sep) cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<double>* TraceFile::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return &data[i];
  }
  return nullptr;
}

FluorescenceTrace TraceFile::fluorescence() const {
  auto* col = column("fluorescence");
  if (!col) throw TraceFormatError("trace file has no fluorescence column");
  return {*col, rate_hz, neuron};
}

std::optional<SpikeTrain> TraceFile::spikes() const {
  auto* col = column("spikes");
  if (!col) return std::nullopt;
  return SpikeTrain{*col, rate_hz};
}

TraceFile TraceFile::paired(const FluorescenceTrace& trace, const std::optional<SpikeTrain>& spikes) {
  TraceFile f;
  f.rate_hz = trace.rate_hz;
  f.neuron = trace.neuron;
  f.columns.push_back("fluorescence");
  f.data.push_back(trace.values);
  if (spikes) {
    if (spikes->values.size() != trace.values.size()) {
      throw std::invalid_argument("spike train and trace differ in length");
    }
    f.columns.push_back("spikes");
    f.data.push_back(spikes->values);
  }
  return f;
}

void save_traces(const std::filesystem::path& path, const TraceFile& file) {
  if (file.columns.size() != file.data.size() || file.columns.empty()) {
    throw std::invalid_argument("trace file needs one data vector per named column");
  }
  for (const auto& col : file.data) {
    if (col.size() != file.frames()) throw std::invalid_argument("trace columns differ in length");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", file.rate_hz);
  out << "# rate_hz=" << buf;
  if (!file.neuron.empty()) out << " neuron=" << file.neuron;
  out << '\n';
  for (std::size_t c = 0; c < file.columns.size(); ++c) out << (c ? "," : "") << file.columns[c];
  out << '\n';
  for (std::size_t t = 0; t < file.frames(); ++t) {
    for (std::size_t c = 0; c < file.columns.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", file.data[c][t]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TraceFile load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path.string());
  auto fail = [&](std::size_t line, const std::string& what) {
    throw TraceFormatError(path.string() + ":" + std::to_string(line) + ": " + what);
  };
  TraceFile file;
  std::string line;
  std::size_t lineno = 0;
  bool have_rate = false;

  if (!std::getline(in, line)) fail(1, "empty file");
  ++lineno;
  line = trim(line);
  if (line.rfind('#', 0) != 0) fail(lineno, "missing '# rate_hz=...' metadata line");
  {
    std::istringstream meta(line.substr(1));
    std::string token;
    while (meta >> token) {
      auto eq = token.find('=');
      if (eq == std::string::npos) fail(lineno, "malformed metadata token '" + token + "'");
      auto key = token.substr(0, eq), value = token.substr(eq + 1);
      if (key == "rate_hz") {
        char* end = nullptr;
        file.rate_hz = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0' || !(file.rate_hz > 0)) fail(lineno, "bad rate_hz '" + value + "'");
        have_rate = true;
      } else if (key == "neuron") {
        file.neuron = value;
      }
    }
  }
  if (!have_rate) fail(lineno, "missing rate_hz metadata");

  if (!std::getline(in, line)) fail(lineno + 1, "missing column header");
  ++lineno;
  for (auto& name : split(trim(line), ',')) {
    name = trim(name);
    if (name.empty()) fail(lineno, "empty column name");
    file.columns.push_back(name);
  }
  file.data.assign(file.columns.size(), {});

  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != file.columns.size()) {
      fail(lineno, "expected " + std::to_string(file.columns.size()) + " cells, found " +
                       std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto cell = trim(cells[c]);
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0' || !std::isfinite(v)) fail(lineno, "non-numeric cell '" + cell + "'");
      file.data[c].push_back(v);
    }
  }
  return file;
}

}  // namespace iwadv::spike
