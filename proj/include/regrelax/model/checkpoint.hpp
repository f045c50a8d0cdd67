#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "regrelax/model/transformer.hpp"

namespace regrelax::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "RGRLXCKP"            8-byte magic
//   u32 version
//   u32 n, n bytes        ModelConfig::to_text()
//   u32 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank],
//               f32 values row-major
// Values are stored at 32-bit precision; parameters that already hold
// f32-representable values round-trip bit-exactly.
std::string serialize_checkpoint(const Transformer& model);
Transformer parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Transformer& model, const std::filesystem::path& file);
Transformer load_checkpoint(const std::filesystem::path& file);

// FNV-1a of the serialized bytes, hex encoded.
std::string checkpoint_hash(const Transformer& model);

}  // namespace regrelax::model
