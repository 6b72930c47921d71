#pragma once

// Single-file container: "DFU1", u32 version, JSON metadata, tensor table
// (name, dtype, shape, offset, size), little-endian payload, trailing CRC32
// over everything before it. Used for training checkpoints and dataset caches.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dfu/config.hpp"
#include "dfu/grid.hpp"
#include "dfu/trainer.hpp"

namespace dfu {

inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  Json metadata = Json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string encode_container(const Container& c);
// Throws CheckpointError naming `origin` on bad magic, checksum or version.
Container decode_container(std::string_view bytes, const std::string& origin = "container");

// Writes to a temporary sibling and renames, so readers never see a partial file.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

struct Checkpoint {
  TrainState state;
  Json config = Json::object();
  std::string config_hash;
  Json extra = Json::object();
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& s, const Json& resolved_config,
                     const Json& extra = Json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_dataset(const std::filesystem::path& path, const MultiResDataset& ds, const Json& resolved_config);
MultiResDataset load_dataset(const std::filesystem::path& path);

}  // namespace dfu
