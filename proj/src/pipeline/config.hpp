#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "backbones/train.hpp"
#include "hybrid/gbdt.hpp"
#include "json.hpp"

namespace tlb::pipeline {

struct SynthSource {
  int n_per_class = 32;
  std::uint64_t seed = 0;
  double margin = dataset::kDefaultSynthMargin;
};

// Fully resolved run configuration. JSON keys mirror the field names; a
// config file is merged under command-line flags.
struct RunConfig {
  std::filesystem::path data_root;
  std::optional<SynthSource> synth;
  std::string model = "all";  // one of the eight tokens or "all"
  backbones::FineTuneConfig fine_tune;
  hybrid::GBDTParams gbdt;
  std::string extractor = "stock";  // hybrid features: "stock" or "finetuned"
  double meta_lambda = 1.0;
  int device_index = 1;
  std::string accelerator = "auto";  // "auto" or "off"
  std::uint64_t seed = 0;
  bool pretrained = false;
  std::filesystem::path weights_dir;  // <token>.tlbw files for pretrained bases
  std::filesystem::path out_dir = "runs";
};

// Defaults, then `j` on top. Unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

// Digest of the canonical (key-sorted) JSON of every setting that can change
// a result, with `model` replaced by the run's own model token.
std::string config_hash(const RunConfig& config, const std::string& model_token);

void validate(const RunConfig& config);

}  // namespace tlb::pipeline
