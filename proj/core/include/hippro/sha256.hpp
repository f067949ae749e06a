// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hippro {

/// Incremental SHA-256. Used for checkpoint integrity records and for the
/// lineage / parameter-constancy hashes the trainer verifies.
class Sha256 {
public:
  Sha256() { reset(); }

  void reset();
  void update(const void* data, std::size_t len);
  std::array<std::uint8_t, 32> digest(); // finalizes; reset() to reuse

  static std::array<std::uint8_t, 32> of(const void* data, std::size_t len);
  static std::string hex(const std::array<std::uint8_t, 32>& d);

private:
  void process_block(const std::uint8_t* block);

  std::array<std::uint32_t, 8> state_{};
  std::array<std::uint8_t, 64> buffer_{};
  std::uint64_t total_len_ = 0;
  std::size_t buffer_len_ = 0;
};

} // namespace hippro
