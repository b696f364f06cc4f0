#pragma once

#include <string>
#include <vector>

#include "bench/bench.hpp"

namespace tlb::report {

enum class Format { Markdown, Csv, Json };

std::optional<Format> parse_format(const std::string& text);

struct TableSpec {
  bench::RunKey run_key;
  Format format = Format::Markdown;
};

inline constexpr std::array<const char*, 6> kColumns = {
    "Models", "Accuracy", "precision", "Recall", "F1 Score", "Execution Time"};

// "Without GPU support for Device1 (D_1')".
std::string caption(const bench::RunKey& key);

// One row per model in table order, "—" for missing models; no rows at all
// when `records` is empty. CSV output is the bare six-column table (callers
// print the caption separately); JSON keeps full-precision metrics.
std::string render_table(const std::vector<bench::RunRecord>& records, const TableSpec& spec);

// The table row for a single record, pipe-separated: what a training command
// prints after it appends the record.
std::string render_row(const bench::RunRecord& record);

// Keeps the most recent record per (model, run key): the explicit selection
// render_table asks for when a model was run more than once.
std::vector<bench::RunRecord> latest_per_model(const std::vector<bench::RunRecord>& records);

struct ComparisonRow {
  std::string model;
  int device_index = 0;
  bench::RunRecord without;  // D_i'
  bench::RunRecord with;     // D_i
};

struct Comparison {
  std::vector<ComparisonRow> pairs;
  std::vector<std::string> unpaired;  // "Mobilenet (D_1 only)"
};

Comparison compare(const std::vector<bench::RunRecord>& records);

// Per model and device: both times, the saved time, speedup and the accuracy
// change, then a summary line and the unpaired list. Throws NoComparablePairs
// when nothing pairs up.
std::string render_comparison(const std::vector<bench::RunRecord>& records);
std::string render_unpaired(const Comparison& comparison);

// Time difference in whole minutes, rounded up: "4h 54min", "19min".
std::string format_time_delta(double seconds);

}  // namespace tlb::report
