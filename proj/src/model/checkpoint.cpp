#include "cpo/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cpo::model {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'O', 'T', 'E', 'N', 'S', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

std::vector<NamedTensor> all_tensors(const Checkpoint& c) {
  std::vector<NamedTensor> out = c.base.named();
  if (c.adapters) {
    for (auto& t : c.adapters->named()) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::filesystem::path checkpoint_blob(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".bin");
}

std::filesystem::path checkpoint_manifest(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".json");
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream blob(checkpoint_blob(stem), std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + checkpoint_blob(stem).string());
  blob.write(kMagic, sizeof kMagic);

  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = sizeof kMagic;
  for (const auto& [name, t] : all_tensors(checkpoint)) {
    const auto bytes = static_cast<std::streamsize>(t.numel() * sizeof(double));
    blob.write(reinterpret_cast<const char*>(t.values().data()), bytes);
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(bytes);
  }
  if (!blob) throw std::runtime_error("write failed for " + checkpoint_blob(stem).string());

  nlohmann::json manifest = {
      {"format", "cpo-checkpoint/1"},
      {"config", checkpoint.base.config},
      {"vocabulary", checkpoint.vocabulary.symbols()},
      {"adapter_rank", checkpoint.adapters ? checkpoint.adapters->rank : 0},
      {"adapter_alpha", checkpoint.adapters ? checkpoint.adapters->alpha : 0.0},
      {"seed", checkpoint.seed},
      {"steps", checkpoint.steps},
      {"blob", checkpoint_blob(stem).filename().string()},
      {"blob_bytes", offset},
      {"tensors", index},
      {"extra", checkpoint.extra},
  };
  std::ofstream out(checkpoint_manifest(stem), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + checkpoint_manifest(stem).string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream in(checkpoint_manifest(stem));
  if (!in) throw std::runtime_error("cannot read checkpoint manifest " + checkpoint_manifest(stem).string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "cpo-checkpoint/1") {
    throw std::runtime_error(checkpoint_manifest(stem).string() + ": unsupported checkpoint format");
  }

  Checkpoint c;
  const TransformerConfig config = manifest.at("config").get<TransformerConfig>();
  c.vocabulary = Vocabulary(manifest.at("vocabulary").get<std::string>());
  c.seed = manifest.at("seed").get<std::uint64_t>();
  c.steps = manifest.at("steps").get<std::uint64_t>();
  c.extra = manifest.value("extra", nlohmann::json::object());
  // Shapes come from fresh initialization; values are overwritten below.
  c.base = ModelParams::init(config, 0);
  const std::size_t rank = manifest.at("adapter_rank").get<std::size_t>();
  if (rank > 0) c.adapters = AdapterParams::init(config, rank, manifest.at("adapter_alpha").get<double>(), 0);

  std::ifstream blob(checkpoint_blob(stem), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read checkpoint blob " + checkpoint_blob(stem).string());
  char magic[sizeof kMagic];
  blob.read(magic, sizeof magic);
  if (!blob || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(checkpoint_blob(stem).string() + ": bad magic");
  }

  const auto& index = manifest.at("tensors");
  auto tensors = all_tensors(c);
  if (index.size() != tensors.size()) {
    throw std::runtime_error("checkpoint lists " + std::to_string(index.size()) + " tensors, expected " +
                             std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    const auto& entry = index[i];
    if (entry.at("name").get<std::string>() != name || entry.at("shape").get<compute::Shape>() != t.shape()) {
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " is " +
                               entry.at("name").get<std::string>() + ", expected " + name + " " +
                               compute::shape_string(t.shape()));
    }
    blob.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    auto values = t.mutable_values();
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!blob) throw std::runtime_error("truncated checkpoint blob at tensor " + name);
  }
  return c;
}

}  // namespace cpo::model
