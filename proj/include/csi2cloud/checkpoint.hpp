// SPDX-License-Identifier: Apache-2.0
//
// Textual checkpoint format:
//
//   csi2cloud-checkpoint v1
//   <entry count>
//   <name> <rank> <extent...> <numel>
//   <value value ...>                      (one line, %.17g each)
//
// %.17g round-trips doubles exactly, so save -> load -> save is
// byte-identical.
#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csi2cloud/common.hpp"
#include "csi2cloud/tensor.hpp"

namespace c2c {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline std::string serialize_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::ostringstream out;
  out << "csi2cloud-checkpoint v1\n" << entries.size() << "\n";
  for (const auto& e : entries) {
    require(!e.name.empty() && e.name.find(' ') == std::string::npos,
            "checkpoint: entry names must be non-empty and space-free");
    out << e.name << ' ' << e.shape.size();
    for (std::size_t d : e.shape) out << ' ' << d;
    out << ' ' << e.values.size() << '\n';
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      if (i) out << ' ';
      out << fmt_full(e.values[i]);
    }
    out << '\n';
  }
  return out.str();
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::vector<CheckpointEntry>& entries) {
  atomic_write_file(path, serialize_checkpoint(entries));
}

inline std::vector<CheckpointEntry> parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "csi2cloud-checkpoint" || version != "v1") {
    throw ParseError("checkpoint: bad header");
  }
  std::size_t count = 0;
  if (!(in >> count)) throw ParseError("checkpoint: missing entry count");
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    std::size_t rank = 0, numel = 0;
    if (!(in >> e.name >> rank)) throw ParseError("checkpoint: truncated entry header");
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      if (!(in >> d)) throw ParseError("checkpoint: truncated shape");
    }
    if (!(in >> numel)) throw ParseError("checkpoint: missing value count");
    if (numel != shape_numel(e.shape)) {
      throw ParseError("checkpoint: value count does not match shape for " + e.name);
    }
    e.values.resize(numel);
    for (auto& v : e.values) {
      if (!(in >> v)) throw ParseError("checkpoint: truncated values for " + e.name);
    }
  }
  return entries;
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace c2c
