#pragma once

#include <filesystem>

#include "nn/graph.hpp"

namespace tlb::nn {

// Self-describing little-endian container: "TLBW", version, entry count, then
// per entry the name, the four shape dims and the float32 payload. Holds both
// parameters and batch-norm running statistics.
void save_weights(Graph& graph, const std::filesystem::path& path);

// Every entry in the file must match a graph tensor by name and shape, and every
// graph tensor must be present.
void load_weights(Graph& graph, const std::filesystem::path& path);

}  // namespace tlb::nn
