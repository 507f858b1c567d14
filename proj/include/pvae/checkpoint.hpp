#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvae/models.hpp"

namespace pvae {

struct NamedTensor {
  std::string name;
  Matrix value;
};

enum class ArchiveKind : std::uint8_t { kVae = 0, kDictionary = 1 };

/// Binary model container.
///
/// Layout (all integers and doubles little-endian):
///   "PVCK" | u16 version | u8 kind | u8 family | u8 encoder | u8 grad mode |
///   u16 reserved | u64 M | u64 K | u64 H | f64 beta | u32 tensor count |
///   tensors: u16 name length, name, u64 rows, u64 cols, rows*cols f64 |
///   u64 FNV-1a of every preceding byte.
/// Parameter tensors are named "param/<field>"; anything else (optimizer
/// state, counters) rides along as extra tensors.
struct Checkpoint {
  ArchiveKind kind = ArchiveKind::kVae;
  LinearVae model;    // kVae
  Matrix dictionary;  // kDictionary
  std::vector<NamedTensor> extra;

  const NamedTensor* find_extra(std::string_view name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const LinearVae& model, std::span<const NamedTensor> extra = {});
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::string& path, const LinearVae& model, std::span<const NamedTensor> extra = {});
Checkpoint load_checkpoint(const std::string& path);

void save_dictionary(const std::string& path, const Matrix& phi);
/// Dictionary from either a dictionary archive or a VAE checkpoint.
Matrix load_dictionary(const std::string& path);

}  // namespace pvae
