#include "nn/weights_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "common/error.hpp"

namespace tlb::nn {
namespace {

constexpr char kMagic[4] = {'T', 'L', 'B', 'W'};
constexpr std::uint32_t kVersion = 1;

std::map<std::string, Tensor*> tensors_of(Graph& graph) {
  std::map<std::string, Tensor*> all;
  for (auto& [name, p] : graph.named_params()) all.emplace(name, &p->value);
  for (auto& [name, t] : graph.named_buffers()) all.emplace(name, t);
  return all;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(Errc::StoreCorrupt, "truncated weights file " + path.string());
  return v;
}

}  // namespace

void save_weights(Graph& graph, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::Io, "cannot write " + path.string());
  const auto all = tensors_of(graph);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape s = t->shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!os.flush()) throw Error(Errc::Io, "failed writing " + path.string());
}

void load_weights(Graph& graph, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::WeightsUnavailable, "cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Errc::StoreCorrupt, path.string() + " is not a weights container");
  if (get<std::uint32_t>(is, path) != kVersion)
    throw Error(Errc::StoreCorrupt, "unsupported weights version in " + path.string());

  auto all = tensors_of(graph);
  const auto count = get<std::uint32_t>(is, path);
  if (count != all.size())
    throw Error(Errc::ShapeMismatch, path.string() + " holds " + std::to_string(count) +
                                         " tensors, model has " + std::to_string(all.size()));
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > 4096) throw Error(Errc::StoreCorrupt, "bad entry name in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error(Errc::StoreCorrupt, "truncated " + path.string());
    Shape s;
    s.n = get<std::int32_t>(is, path);
    s.c = get<std::int32_t>(is, path);
    s.h = get<std::int32_t>(is, path);
    s.w = get<std::int32_t>(is, path);
    const auto it = all.find(name);
    if (it == all.end()) throw Error(Errc::ShapeMismatch, "unknown tensor " + name);
    Tensor& t = *it->second;
    if (!(t.shape() == s))
      throw Error(Errc::ShapeMismatch, name + ": stored " + to_string(s) + ", model " +
                                           to_string(t.shape()));
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw Error(Errc::StoreCorrupt, "truncated " + path.string());
  }
}

}  // namespace tlb::nn
