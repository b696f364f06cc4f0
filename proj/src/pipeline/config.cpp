#include "pipeline/config.hpp"

#include <set>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "report/models.hpp"

namespace tlb::pipeline {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.contains(key))
      throw Error(Errc::InvalidArgument, "unknown config key '" + where + key + "'");
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["data_root"] = c.data_root.string();
  if (c.synth)
    j["synth"] = {{"n_per_class", c.synth->n_per_class},
                  {"seed", c.synth->seed},
                  {"margin", c.synth->margin}};
  else
    j["synth"] = nullptr;
  j["model"] = c.model;
  j["fine_tune"] = backbones::to_json(c.fine_tune);
  json g = hybrid::to_json(c.gbdt);
  g.erase("objective");
  j["gbdt"] = g;
  j["extractor"] = c.extractor;
  j["meta_lambda"] = c.meta_lambda;
  j["device_index"] = c.device_index;
  j["accelerator"] = c.accelerator;
  j["seed"] = c.seed;
  j["pretrained"] = c.pretrained;
  j["weights_dir"] = c.weights_dir.string();
  j["out_dir"] = c.out_dir.string();
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "config must be a JSON object");
  reject_unknown(j,
                 {"data_root", "synth", "model", "fine_tune", "gbdt", "extractor", "meta_lambda",
                  "device_index", "accelerator", "seed", "pretrained", "weights_dir", "out_dir"},
                 "");
  try {
    if (j.contains("seed")) {
      // the global seed drives every component unless a section sets its own
      c.seed = j.at("seed").get<std::uint64_t>();
      c.fine_tune.seed = c.seed;
      c.gbdt.seed = c.seed;
    }
    if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
    if (j.contains("synth") && !j.at("synth").is_null()) {
      const json& s = j.at("synth");
      reject_unknown(s, {"n_per_class", "seed", "margin"}, "synth.");
      SynthSource src;
      src.seed = c.seed;
      src.n_per_class = s.value("n_per_class", src.n_per_class);
      src.seed = s.value("seed", src.seed);
      src.margin = s.value("margin", src.margin);
      c.synth = src;
    }
    if (j.contains("model")) c.model = j.at("model").get<std::string>();
    if (j.contains("fine_tune")) {
      const json& f = j.at("fine_tune");
      reject_unknown(f, {"optimizer", "learning_rate", "momentum", "epochs", "batch_size", "loss",
                         "seed", "trainable_base"},
                     "fine_tune.");
      auto& t = c.fine_tune;
      t.optimizer = f.value("optimizer", t.optimizer);
      t.learning_rate = f.value("learning_rate", t.learning_rate);
      t.momentum = f.value("momentum", t.momentum);
      t.epochs = f.value("epochs", t.epochs);
      t.batch_size = f.value("batch_size", t.batch_size);
      t.loss = f.value("loss", t.loss);
      t.seed = f.value("seed", t.seed);
      t.trainable_base = f.value("trainable_base", t.trainable_base);
    }
    if (j.contains("gbdt")) {
      const json& g = j.at("gbdt");
      reject_unknown(g, {"n_trees", "max_depth", "learning_rate", "seed", "reg_lambda",
                         "min_child_weight", "colsample"},
                     "gbdt.");
      auto& p = c.gbdt;
      p.n_trees = g.value("n_trees", p.n_trees);
      p.max_depth = g.value("max_depth", p.max_depth);
      p.learning_rate = g.value("learning_rate", p.learning_rate);
      p.seed = g.value("seed", p.seed);
      p.reg_lambda = g.value("reg_lambda", p.reg_lambda);
      p.min_child_weight = g.value("min_child_weight", p.min_child_weight);
      p.colsample = g.value("colsample", p.colsample);
    }
    c.extractor = j.value("extractor", c.extractor);
    c.meta_lambda = j.value("meta_lambda", c.meta_lambda);
    c.device_index = j.value("device_index", c.device_index);
    c.accelerator = j.value("accelerator", c.accelerator);
    c.pretrained = j.value("pretrained", c.pretrained);
    if (j.contains("weights_dir")) c.weights_dir = j.at("weights_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad config value: ") + e.what());
  }
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  if (c.model != "all" && !report::model_by_token(c.model))
    throw Error(Errc::InvalidArgument, "unknown model '" + c.model + "'");
  backbones::validate(c.fine_tune);
  hybrid::validate(c.gbdt);
  if (c.extractor != "stock" && c.extractor != "finetuned")
    throw Error(Errc::InvalidArgument, "extractor must be 'stock' or 'finetuned'");
  if (c.meta_lambda < 0) throw Error(Errc::InvalidArgument, "meta_lambda must be >= 0");
  if (c.device_index < 1) throw Error(Errc::InvalidArgument, "device_index must be >= 1");
  if (c.accelerator != "auto" && c.accelerator != "off")
    throw Error(Errc::InvalidArgument, "accelerator must be 'auto' or 'off'");
  if (c.synth && c.synth->n_per_class < 1)
    throw Error(Errc::InvalidArgument, "synthetic n_per_class must be >= 1");
}

std::string config_hash(const RunConfig& config, const std::string& model_token) {
  json j = to_json(config);
  j["model"] = model_token;
  j.erase("out_dir");  // where results go does not change them
  // nlohmann::json keeps object keys sorted, so the dump is order-independent
  return sha256_hex(j.dump());
}

}  // namespace tlb::pipeline
