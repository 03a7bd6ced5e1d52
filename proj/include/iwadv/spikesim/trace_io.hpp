#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwadv/spikesim/biophys.hpp"

namespace iwadv::spike {

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Column-oriented trace file:
///
///   # rate_hz=60 neuron=cell3
///   fluorescence,spikes
///   0.125,0
///   ...
///
/// Columns are named in the header row; every data row has one cell per column.
struct TraceFile {
  double rate_hz = 60.0;
  std::string neuron;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> data;  // one vector per column

  std::size_t frames() const { return data.empty() ? 0 : data.front().size(); }
  const std::vector<double>* column(const std::string& name) const;

  FluorescenceTrace fluorescence() const;
  std::optional<SpikeTrain> spikes() const;

  static TraceFile paired(const FluorescenceTrace& trace, const std::optional<SpikeTrain>& spikes);
};

void save_traces(const std::filesystem::path& path, const TraceFile& file);
TraceFile load_traces(const std::filesystem::path& path);

}  // namespace iwadv::spike
