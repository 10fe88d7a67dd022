#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cttagen/harness.hpp"

namespace cttagen {

// Fixed-header CSV, one row per (run, domain) plus a source_backtest row per
// run. Loss columns are means over the domain's non-skipped steps. Output is
// byte-deterministic for a given record set.
std::string metrics_csv(const std::vector<RunRecord>& records);

// Writes metrics.csv, run_<id>.json per record, and SVG plots (accuracy vs
// domain index; per-run loss curves) under out_dir.
void emit_report(const std::vector<RunRecord>& records,
                 const std::filesystem::path& out_dir);

// Reads every run_*.json under dir, sorted by filename.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

}  // namespace cttagen
