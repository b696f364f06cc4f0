#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bench/bench.hpp"
#include "common/error.hpp"
#include "dataset/dataset.hpp"
#include "pipeline/config.hpp"

namespace tlb::pipeline {

struct Data {
  dataset::DatasetManifest manifest;
  std::unique_ptr<dataset::PixelSource> pixels;
};

// Synthetic set when configured, otherwise the ingested data_root.
Data load_data(const RunConfig& config);

struct RunOutcome {
  bench::RunRecord record;
  std::filesystem::path run_dir;
  bool ok = true;
  std::optional<Errc> error_code;
};

// Runs one of the eight models end to end: timed training, test-split
// metrics, persisted artifacts and one appended RunRecord (failed runs are
// recorded too). `model_token` is one of the eight tokens.
RunOutcome run_model(const RunConfig& config, const Data& data, const std::string& model_token);

// All eight models in table order.
std::vector<RunOutcome> run_all(const RunConfig& config, const Data& data);

bench::RunStore store_for(const RunConfig& config);

}  // namespace tlb::pipeline
