#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "cpo/model/transformer.hpp"
#include "cpo/model/vocabulary.hpp"

namespace cpo::model {

/// A model snapshot: `<stem>.bin` holds raw little-endian float64 tensor
/// data, `<stem>.json` the manifest (config, vocabulary, adapter rank, seed,
/// step count and a tensor index). Loading reproduces every value bit-exactly.
struct Checkpoint {
  ModelParams base;
  std::optional<AdapterParams> adapters;
  Vocabulary vocabulary = Vocabulary::default_charset();
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

/// Paths of the two files behind a checkpoint stem.
std::filesystem::path checkpoint_blob(const std::filesystem::path& stem);
std::filesystem::path checkpoint_manifest(const std::filesystem::path& stem);

}  // namespace cpo::model
