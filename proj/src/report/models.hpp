#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace tlb::report {

// The eight reported models: CLI token and table row name, in table row order.
struct ModelName {
  std::string_view token;
  std::string_view display;
};

inline constexpr std::array<ModelName, 8> kModels = {{
    {"vgg16", "VGG16"},
    {"resnet50", "Resnet50"},
    {"densenet121", "Densenet"},
    {"inceptionv3", "Inceptionv3"},
    {"xception", "Xception"},
    {"mobilenet", "Mobilenet"},
    {"xgb-vgg16", "XGBOOST-VGG16"},
    {"stacked", "Proposed Model"},
}};

inline std::optional<ModelName> model_by_token(std::string_view token) {
  for (const ModelName& m : kModels)
    if (m.token == token) return m;
  return std::nullopt;
}

inline std::optional<ModelName> model_by_display(std::string_view display) {
  for (const ModelName& m : kModels)
    if (m.display == display) return m;
  return std::nullopt;
}

}  // namespace tlb::report
