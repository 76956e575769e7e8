#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ndfsr/config.hpp"
#include "ndfsr/tensor.hpp"

namespace ndfsr {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncationError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointChecksumError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Versioned container of named parameter tensors plus the config that
// produced them. On-disk layout: magic "NDFP", format version u16, u32
// length-prefixed config text, per-tensor records (u32 name length, name,
// u32 rank, u64 extents, f64 values), all little-endian, then CRC-32 of
// every preceding byte.
struct Checkpoint {
  static constexpr std::uint16_t kFormatVersion = 1;

  TrainConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw CheckpointError("checkpoint: no tensor named '" + name + "'");
  }
};

void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);
std::uint32_t crc32_file(const std::string& path);

}  // namespace ndfsr
