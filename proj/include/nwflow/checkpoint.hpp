#pragma once

#include <filesystem>
#include <string>

#include "nwflow/field.hpp"

namespace nwflow {

inline constexpr const char* kCheckpointFormat = "nwflow-ckpt-v1";

/// A trained field together with the time interval it maps across.
struct Checkpoint {
  FieldParams params;
  double t0 = 0.0;
  double t1 = 1.0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nwflow
