#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "owdfa/model.hpp"

namespace owdfa {

/// Which training stage produced a checkpoint.
enum class StageTag : std::uint32_t { init = 0, pretrain = 1, cpl = 2, iterative = 3, upper = 4 };

std::string_view to_string(StageTag tag);

struct Checkpoint {
  StageTag stage = StageTag::init;
  Model<float> model;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "OWDFACKP" | u32 version | u32 stage | str config | u32 count |
//   count x (str name | u32 rank | rank x u64 dim | f32 payload) | u64 fnv1a
// where str is u32 length + bytes, and the checksum covers every byte before it.
std::string encode_checkpoint(const Model<float>& model, StageTag stage);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, StageTag stage);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace owdfa
