#pragma once

// Append-only results ledger (CSV) and the per-episode weight-grid dump (TSV).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metairnet/errors.hpp"
#include "metairnet/fusion.hpp"

namespace metairnet {

struct LedgerRow {
  std::string stage;  // meta-train, evaluate, sweep-naug, probe:<kind>, ...
  std::string config_hash;
  std::string mode;
  std::size_t n = 0, m = 0, q = 0;
  std::size_t episodes = 0;
  double mean = 0, ci95 = 0;
};

inline constexpr const char* kLedgerHeader = "stage,config_hash,mode,n,m,q,episodes,mean,ci95";

inline void append_ledger(const std::filesystem::path& path, const LedgerRow& row) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to ledger " + path.string());
  if (fresh) out << kLedgerHeader << '\n';
  out << row.stage << ',' << row.config_hash << ',' << row.mode << ',' << row.n << ',' << row.m << ',' << row.q
      << ',' << row.episodes << ',' << std::fixed << std::setprecision(4) << row.mean << ',' << row.ci95 << '\n';
}

inline std::vector<LedgerRow> read_ledger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ledger " + path.string());
  std::vector<LedgerRow> rows;
  std::string line;
  std::getline(in, line);
  if (line != kLedgerHeader) throw DataError(path.string() + " has an unexpected ledger header");
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw DataError(path.string() + ": malformed ledger row '" + line + "'");
    rows.push_back({f[0], f[1], f[2], std::stoul(f[3]), std::stoul(f[4]), std::stoul(f[5]), std::stoul(f[6]),
                    std::stod(f[7]), std::stod(f[8])});
  }
  return rows;
}

/// One line per (episode, image): the image id followed by the g*g weights in row-major order.
class WeightGridDump {
 public:
  explicit WeightGridDump(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw DataError("cannot write weight dump " + path.string());
    out_ << "episode\timage_id\tgrid\tweights\n";
  }
  void write(std::size_t episode, const std::string& id, const WeightGrid<float>& grid) {
    out_ << episode << '\t' << id << '\t' << grid.g << '\t';
    for (std::size_t i = 0; i < grid.weights.size(); ++i) out_ << (i ? "," : "") << grid.weights[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace metairnet
