#include "oneshot/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "oneshot/errors.hpp"

namespace oneshot {

namespace {

constexpr std::array<char, 8> kMagic{'O', 'S', 'C', 'K', 'P', 'T', '\0', '\1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(std::string("truncated checkpoint: ") + what);
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, nlohmann::json manifest,
                      const std::vector<NamedParameter>& parameters) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : parameters) list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  manifest["parameters"] = list;
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : parameters) {
    auto v = p.tensor.values();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("not a checkpoint: bad magic");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(is, "manifest length");
  if (len > (1ULL << 30)) throw FormatError("implausible manifest length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint manifest");

  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(text);
    for (const auto& entry : ck.manifest.at("parameters")) {
      Tensor t(entry.at("shape").get<Shape>());
      auto v = t.mutable_values();
      if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
        throw FormatError("truncated parameter buffer '" + entry.at("name").get<std::string>() + "'");
      }
      ck.parameters.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after parameter buffers");
  return ck;
}

void assign_parameters(const std::vector<NamedParameter>& source, const std::vector<NamedParameter>& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  if (by_name.size() != targets.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(by_name.size()) + " parameters, model has " +
                     std::to_string(targets.size()));
  }
  for (const auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw ShapeError("checkpoint lacks parameter '" + t.name + "'");
    if (it->second->shape() != t.tensor.shape()) {
      throw ShapeError("parameter '" + t.name + "' has shape " + to_string(it->second->shape()) + ", model expects " +
                       to_string(t.tensor.shape()));
    }
    auto dst = Tensor(t.tensor).mutable_values();
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace oneshot
