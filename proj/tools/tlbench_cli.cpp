// Command-line front end. Talks to the benchmark only through the C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tlbench/tlbench.h"

using nlohmann::json;

namespace {

struct Text {
  char* p = nullptr;
  ~Text() { tlb_free(p); }
  std::string str() const { return p ? p : ""; }
};

int report_error(tlb_status st) {
  std::cerr << "error: " << tlb_last_error() << '\n';
  return st;
}

// Flags shared by every command that resolves a configuration. Only flags the
// user actually gave override the config file.
struct ConfigFlags {
  std::string config_file;
  std::string data_root;
  int synth = 0;
  double synth_margin = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0;
  double momentum = 0;
  int batch_size = 0;
  bool frozen_base = false;
  bool pretrained = false;
  std::string weights_dir;
  int n_trees = 0;
  int max_depth = 0;
  double gbdt_lr = 0;
  std::string extractor;
  double meta_lambda = 0;
  int device = 1;
  bool no_accelerator = false;
  std::string out_dir;

  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void add_data(CLI::App* app) {
    opts.emplace_back("config", app->add_option("--config", config_file, "JSON config file; flags override it")
                                    ->check(CLI::ExistingFile));
    opts.emplace_back("data_root", app->add_option("--data-root", data_root,
                                                   "Image tree with one directory per class"));
    opts.emplace_back("synth", app->add_option("--synth", synth,
                                               "Use a synthetic set with N images per class")
                                   ->check(CLI::PositiveNumber));
    opts.emplace_back("synth_margin", app->add_option("--synth-margin", synth_margin,
                                                      "Class mean gap of the synthetic set")
                                          ->check(CLI::Range(0.0, 1.0)));
    opts.emplace_back("seed", app->add_option("--seed", seed, "Global seed"));
  }

  void add_run(CLI::App* app) {
    add_data(app);
    opts.emplace_back("epochs", app->add_option("--epochs", epochs, "Fine-tuning epochs (default 30)"));
    opts.emplace_back("learning_rate", app->add_option("--lr", learning_rate, "SGD learning rate (default 1e-4)"));
    opts.emplace_back("momentum", app->add_option("--momentum", momentum, "SGD momentum (default 0)"));
    opts.emplace_back("batch_size", app->add_option("--batch-size", batch_size, "Mini-batch size (default 32)"));
    opts.emplace_back("frozen_base", app->add_flag("--frozen-base", frozen_base,
                                                   "Train only the head; backbone weights stay fixed"));
    opts.emplace_back("pretrained", app->add_flag("--pretrained", pretrained,
                                                  "Load backbone weights from --weights-dir"));
    opts.emplace_back("weights_dir", app->add_option("--weights-dir", weights_dir,
                                                     "Directory with <model>.tlbw weight files"));
    opts.emplace_back("n_trees", app->add_option("--n-trees", n_trees, "Boosting rounds (default 100)"));
    opts.emplace_back("max_depth", app->add_option("--max-depth", max_depth, "Tree depth (default 6)"));
    opts.emplace_back("gbdt_lr", app->add_option("--gbdt-lr", gbdt_lr, "Boosting shrinkage (default 0.3)"));
    opts.emplace_back("extractor", app->add_option("--extractor", extractor,
                                                   "Hybrid feature extractor: stock or finetuned"));
    opts.emplace_back("meta_lambda", app->add_option("--meta-lambda", meta_lambda,
                                                     "L2 strength of the stacking meta-learner (default 1)"));
    opts.emplace_back("device", app->add_option("--device", device, "Device index i of the run key D_i (default 1)"));
    opts.emplace_back("no_accelerator", app->add_flag("--no-accelerator", no_accelerator,
                                                      "Record the run as accelerator-off (also TLBENCH_NO_ACCELERATOR=1)"));
    opts.emplace_back("out_dir", app->add_option("--out", out_dir, "Run store directory (default runs)"));
  }

  bool given(const std::string& key) const {
    for (const auto& [k, o] : opts)
      if (k == key) return o->count() > 0;
    return false;
  }

  json resolve(const std::string& model) const {
    json j = json::object();
    if (given("config")) {
      std::ifstream in(config_file);
      j = json::parse(in);
      if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
    }
    if (!model.empty()) j["model"] = model;
    if (given("seed")) j["seed"] = seed;
    if (given("data_root")) j["data_root"] = data_root;
    if (given("synth") || given("synth_margin")) {
      json& s = j["synth"];
      if (!s.is_object()) s = json::object();
      if (given("synth")) s["n_per_class"] = synth;
      if (given("synth_margin")) s["margin"] = synth_margin;
      if (given("seed")) s["seed"] = seed;
    }
    auto section = [&](const char* name) -> json& {
      json& s = j[name];
      if (!s.is_object()) s = json::object();
      return s;
    };
    if (given("seed") && j.contains("fine_tune")) section("fine_tune")["seed"] = seed;
    if (given("seed") && j.contains("gbdt")) section("gbdt")["seed"] = seed;
    if (given("epochs")) section("fine_tune")["epochs"] = epochs;
    if (given("learning_rate")) section("fine_tune")["learning_rate"] = learning_rate;
    if (given("momentum")) section("fine_tune")["momentum"] = momentum;
    if (given("batch_size")) section("fine_tune")["batch_size"] = batch_size;
    if (given("frozen_base")) section("fine_tune")["trainable_base"] = false;
    if (given("pretrained")) j["pretrained"] = true;
    if (given("weights_dir")) j["weights_dir"] = weights_dir;
    if (given("n_trees")) section("gbdt")["n_trees"] = n_trees;
    if (given("max_depth")) section("gbdt")["max_depth"] = max_depth;
    if (given("gbdt_lr")) section("gbdt")["learning_rate"] = gbdt_lr;
    if (given("extractor")) j["extractor"] = extractor;
    if (given("meta_lambda")) j["meta_lambda"] = meta_lambda;
    if (given("device")) j["device_index"] = device;
    if (given("no_accelerator")) j["accelerator"] = "off";
    if (given("out_dir")) j["out_dir"] = out_dir;
    return j;
  }
};

struct Session {
  tlb_session* s = nullptr;
  ~Session() { tlb_session_close(s); }
};

int open_session(const json& config, Session& session) {
  const tlb_status st = tlb_session_open(config.dump().c_str(), &session.s);
  return st == TLB_OK ? 0 : report_error(st);
}

int cmd_ingest(const ConfigFlags& flags, const std::string& root) {
  json config = flags.resolve("");
  if (!root.empty()) config["data_root"] = root;
  if (!config.contains("synth") && !config.contains("data_root")) {
    std::cerr << "error: ingest needs a root directory or --synth N\n";
    return TLB_ERR_USAGE;
  }
  Session session;
  if (int rc = open_session(config, session)) return rc;
  Text out;
  if (tlb_status st = tlb_ingest(session.s, &out.p); st != TLB_OK) return report_error(st);
  const json summary = json::parse(out.str());
  std::cout << "total: " << summary["total"] << '\n';
  for (const auto& [label, n] : summary["class_counts"].items()) std::cout << label << ": " << n << '\n';
  if (summary["unreadable"].get<int>() > 0) std::cout << "unreadable: " << summary["unreadable"] << '\n';
  std::cout << "content_hash: " << summary["content_hash"].get<std::string>() << '\n';
  return 0;
}

int cmd_run(const ConfigFlags& flags, const std::vector<std::string>& tokens) {
  Session session;
  if (int rc = open_session(flags.resolve(tokens.size() == 1 ? tokens[0] : "all"), session)) return rc;
  {
    Text summary;
    if (tlb_status st = tlb_ingest(session.s, &summary.p); st != TLB_OK) return report_error(st);
  }
  std::cout << "| Models | Accuracy | precision | Recall | F1 Score | Execution Time |\n"
            << "|---|---|---|---|---|---|\n";
  int rc = 0;
  for (const std::string& token : tokens) {
    std::cerr << "running " << token << " ..." << std::endl;
    Text record;
    const tlb_status st = tlb_run(session.s, token.c_str(), &record.p);
    if (record.p == nullptr) return report_error(st);  // nothing was recorded
    Text row;
    if (tlb_render_row(record.p, &row.p) == TLB_OK) std::cout << row.str() << std::endl;
    if (st != TLB_OK) {
      std::cerr << "error: " << token << ": " << tlb_last_error() << '\n';
      if (rc == 0) rc = st;
    }
  }
  return rc;
}

std::vector<std::string> all_tokens() {
  Text out;
  tlb_model_tokens(&out.p);
  return json::parse(out.str()).get<std::vector<std::string>>();
}

int write_out(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return 0;
  }
  std::ofstream out(path);
  out << text;
  if (!out) {
    std::cerr << "error: cannot write " << path << '\n';
    return TLB_ERR_REPORT;
  }
  return 0;
}

int cmd_params(bool as_json) {
  Text out;
  const tlb_status st = tlb_params_audit(&out.p);
  if (out.p == nullptr) return report_error(st);
  if (as_json) {
    std::cout << out.str() << '\n';
  } else {
    std::printf("%-12s %12s %12s %8s %10s\n", "model", "computed", "expected", "delta", "rel");
    for (const json& r : json::parse(out.str()))
      std::printf("%-12s %12lld %12lld %8lld %9.4f%%%s\n", r["model"].get<std::string>().c_str(),
                  r["computed"].get<long long>(), r["expected"].get<long long>(),
                  r["delta"].get<long long>(), 100.0 * r["relative_delta"].get<double>(),
                  r["within_tolerance"].get<bool>() ? "" : "  OUT OF TOLERANCE");
  }
  if (st != TLB_OK) return report_error(st);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-learning benchmark: fine-tuning, stacking, GBDT and timing reports"};
  app.require_subcommand(1);

  ConfigFlags ingest_flags, train_flags, stack_flags, hybrid_flags;

  std::string ingest_root;
  CLI::App* ingest = app.add_subcommand("ingest", "Scan a dataset (or build the synthetic one) and summarize it");
  ingest->add_option("root", ingest_root, "Dataset root directory");
  ingest_flags.add_data(ingest);

  std::string model;
  bool all = false;
  CLI::App* train = app.add_subcommand("train", "Fine-tune and benchmark one model or all eight");
  auto* model_opt = train->add_option("--model", model,
                                      "vgg16, resnet50, densenet121, inceptionv3, xception, mobilenet, "
                                      "xgb-vgg16 or stacked");
  auto* all_opt = train->add_flag("--all", all, "Run all eight models in table order");
  model_opt->excludes(all_opt);
  train_flags.add_run(train);

  CLI::App* stack = app.add_subcommand("stack", "Train the stacking ensemble (60/10/30 split)");
  stack_flags.add_run(stack);
  CLI::App* hybrid = app.add_subcommand("hybrid", "GBDT on VGG16 features");
  hybrid_flags.add_run(hybrid);

  int report_device = 1;
  bool report_no_accel = false, compare = false, latest = false;
  std::string format = "markdown", report_out, report_dir = "runs";
  CLI::App* report = app.add_subcommand("report", "Render benchmark tables from the run store");
  report->add_option("--device", report_device, "Device index i (default 1)");
  report->add_flag("--no-accelerator", report_no_accel, "Table for D_i' instead of D_i");
  report->add_option("--format", format, "markdown, csv or json")
      ->check(CLI::IsMember({"markdown", "csv", "json"}));
  report->add_flag("--compare", compare, "Accelerated vs. unaccelerated comparison");
  report->add_flag("--latest", latest, "Use the newest record when a model was run more than once");
  report->add_option("--out", report_out, "Write the rendered output to a file");
  report->add_option("--store", report_dir, "Run store directory (default runs)");

  bool params_json = false;
  CLI::App* params = app.add_subcommand("params", "Audit trainable-parameter counts of the six backbones");
  params->add_flag("--json", params_json, "Print the audit as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return TLB_ERR_USAGE;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_flags, ingest_root);
    if (*train) {
      if (!all && model.empty()) {
        std::cerr << "error: train needs --model <name> or --all\n";
        return TLB_ERR_USAGE;
      }
      return cmd_run(train_flags, all ? all_tokens() : std::vector<std::string>{model});
    }
    if (*stack) return cmd_run(stack_flags, {"stacked"});
    if (*hybrid) return cmd_run(hybrid_flags, {"xgb-vgg16"});
    if (*report) {
      Text out;
      if (compare) {
        const tlb_status st = tlb_report_compare(report_dir.c_str(), &out.p);
        if (out.p) write_out(out.str(), report_out);
        return st == TLB_OK ? 0 : report_error(st);
      }
      const int accel = report_no_accel ? 0 : 1;
      const tlb_status st =
          tlb_report_table(report_dir.c_str(), report_device, accel, format.c_str(), latest, &out.p);
      if (st != TLB_OK) return report_error(st);
      if (format == "csv" && report_out.empty()) {
        Text cap;
        tlb_report_caption(report_device, accel, &cap.p);
        std::cerr << cap.str() << '\n';
      }
      return write_out(out.str(), report_out);
    }
    if (*params) return cmd_params(params_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return TLB_ERR_USAGE;
  }
  return TLB_ERR_USAGE;
}
