#include "backbones/train.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "common/error.hpp"
#include "nn/optimizer.hpp"
#include "nn/rng.hpp"
#include "nn/weights_io.hpp"

namespace tlb::backbones {

using nlohmann::ordered_json;

void validate(const FineTuneConfig& c) {
  if (!(c.learning_rate > 0.0)) throw Error(Errc::InvalidArgument, "learning_rate must be > 0");
  if (c.epochs < 1) throw Error(Errc::InvalidArgument, "epochs must be >= 1");
  if (c.batch_size < 1) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");
  if (c.momentum < 0.0 || c.momentum >= 1.0)
    throw Error(Errc::InvalidArgument, "momentum must lie in [0, 1)");
  if (c.optimizer != "sgd") throw Error(Errc::InvalidArgument, "only the sgd optimizer is supported");
  if (c.loss != "binary_crossentropy")
    throw Error(Errc::InvalidArgument, "only binary_crossentropy loss is supported");
}

ordered_json to_json(const FineTuneConfig& c) {
  return {{"optimizer", c.optimizer},   {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},     {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"loss", c.loss},
          {"seed", c.seed},             {"trainable_base", c.trainable_base}};
}

ordered_json to_json(const BackboneSpec& spec) {
  ordered_json head = ordered_json::array();
  for (const HeadLayer& l : spec.head) head.push_back(describe(l));
  return {{"id", token(spec.id)},
          {"head", head},
          {"expected_trainable_params", spec.expected_trainable_params},
          {"base_pooling", spec.base_pooling == BasePooling::Average ? "avg" : "none"},
          {"input_shape", {spec.input_height, spec.input_width, spec.input_channels}}};
}

std::vector<std::size_t> indices_of(const dataset::DatasetManifest& manifest,
                                    std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> pos;
  pos.reserve(manifest.samples.size());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) pos.emplace(manifest.samples[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const auto it = pos.find(id);
    if (it == pos.end()) throw Error(Errc::InvalidArgument, "unknown sample id " + id);
    out.push_back(it->second);
  }
  return out;
}

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// BCE on a logit: softplus(z) - y z, evaluated without overflow.
double bce_logit(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

double label_value(const dataset::DatasetManifest& m, std::size_t index) {
  return m.samples[index].label == dataset::Label::ASD ? 1.0 : 0.0;
}

}  // namespace

std::vector<double> predict_indices(Model& model, const dataset::PixelSource& pixels,
                                    std::span<const std::size_t> indices, int batch_size) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto chunk = indices.subspan(b, std::min<std::size_t>(batch_size, indices.size() - b));
    const std::vector<double> p = predict_proba(model, pixels.load(chunk));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TrainedModel train(Model model, const TrainingData& data, const FineTuneConfig& config,
                   const std::filesystem::path& weights_dir) {
  validate(config);
  if (data.split.train_ids.empty()) throw Error(Errc::EmptySplit, "train split is empty");
  if (data.split.val_ids.empty()) throw Error(Errc::EmptySplit, "validation split is empty");
  const std::vector<std::size_t> train_idx = indices_of(data.manifest, data.split.train_ids);
  const std::vector<std::size_t> val_idx = indices_of(data.manifest, data.split.val_ids);

  TrainedModel result{std::move(model), {}, 0.0, {}, {}};
  set_base_trainable(result.model, config.trainable_base);
  nn::Graph& g = result.model.graph;
  const std::vector<nn::Param*> params = g.params();
  nn::Sgd sgd(static_cast<float>(config.learning_rate), static_cast<float>(config.momentum));

  auto run = bench::time_run([&] {
    std::vector<std::size_t> order = train_idx;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      nn::Rng rng(nn::mix_seed(config.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));
      nn::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
        const std::span<const std::size_t> chunk(
            order.data() + b, std::min<std::size_t>(config.batch_size, order.size() - b));
        const nn::Tensor batch = data.pixels.load(chunk);
        const nn::Tensor& logits = g.forward(batch, nn::Mode::Train);
        const auto n = static_cast<double>(chunk.size());
        nn::Tensor dout(logits.shape());
        double batch_loss = 0.0;
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          const double z = logits[i];
          const double y = label_value(data.manifest, chunk[i]);
          batch_loss += bce_logit(z, y);
          correct += (z >= 0.0) == (y == 1.0) ? 1 : 0;
          dout[i] = static_cast<float>((sigmoid(z) - y) / n);
        }
        if (!std::isfinite(batch_loss))
          throw Error(Errc::NonFiniteLoss, std::string(token(result.model.spec.id)) +
                                               ": loss diverged in epoch " + std::to_string(epoch + 1));
        loss_sum += batch_loss;
        nn::Sgd::zero_grad(params);
        g.backward(dout);
        sgd.step(params);
      }

      EpochStats stats;
      stats.loss = loss_sum / static_cast<double>(order.size());
      stats.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
      const std::vector<double> p =
          predict_indices(result.model, data.pixels, val_idx, config.batch_size);
      std::size_t val_correct = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double y = label_value(data.manifest, val_idx[i]);
        const double q = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
        stats.val_loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
        val_correct += (p[i] >= 0.5) == (y == 1.0) ? 1 : 0;
      }
      stats.val_loss /= static_cast<double>(p.size());
      stats.val_accuracy = static_cast<double>(val_correct) / static_cast<double>(p.size());
      result.history.push_back(stats);
    }
  });
  result.model.graph.clear_activations();
  result.timing = run.timing;
  result.wall_seconds = run.timing.wall_seconds;
  run.value();

  if (!weights_dir.empty()) save_trained(result, config, weights_dir);
  return result;
}

void save_trained(TrainedModel& trained, const FineTuneConfig& config,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_weights(trained.model.graph, dir / "model.tlbw");
  std::ofstream(dir / "spec.json") << to_json(trained.model.spec).dump(2) << '\n';
  std::ofstream(dir / "config.json") << to_json(config).dump(2) << '\n';
  ordered_json history = ordered_json::array();
  for (const EpochStats& e : trained.history)
    history.push_back({{"loss", e.loss},
                       {"accuracy", e.accuracy},
                       {"val_loss", e.val_loss},
                       {"val_accuracy", e.val_accuracy}});
  std::ofstream(dir / "history.json")
      << ordered_json{{"wall_seconds", trained.wall_seconds}, {"epochs", history}}.dump(2) << '\n';
  trained.weights_dir = dir;
}

Model load_trained(BackboneId id, const std::filesystem::path& weights_dir) {
  Model model = build_model(spec_for(id), BuildOptions{});
  nn::load_weights(model.graph, weights_dir / "model.tlbw");
  return model;
}

}  // namespace tlb::backbones
