#pragma once

#include <cstddef>
#include <string>

#include "compose/encoder.hpp"

namespace app {

// Binary layout, all integers and floats little-endian:
//   bytes 0..3   magic "CMPS"
//   u32          format version (1)
//   u32 D, u32 K, u32 h
//   f64[h*D]     W1, row-major
//   f64[h]       v
//   f64[D*D]     W2, row-major
//   f64          log_tau
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct SavedModel {
  compose::enc::EncoderParams params;
  std::size_t num_slots = 0;
};

void save_model(const std::string& path, const compose::enc::EncoderParams& params, std::size_t num_slots);
// Throws compose::InvalidArgument on missing files or malformed contents.
SavedModel load_model(const std::string& path);

}  // namespace app
