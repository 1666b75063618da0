#pragma once

#include <filesystem>
#include <string>

#include "dpm/model.hpp"
#include "dpm/vocab.hpp"

// "DPM1" checkpoint layout:
//   4 bytes   magic "DPM1"
//   8 bytes   manifest length L, unsigned little-endian
//   L bytes   JSON manifest {"format", "config", "vocab", "parameters": [{name, shape, offset}]}
//   payload   every parameter as little-endian IEEE-754 doubles; offsets are
//             byte offsets from the start of the payload
namespace dpm {

struct Checkpoint {
  DpmModel model;
  Vocab vocab;
};

std::string serialize_checkpoint(const DpmModel& model, const Vocab& vocab);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const DpmModel& model, const Vocab& vocab);
// Throws DataError for unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dpm
