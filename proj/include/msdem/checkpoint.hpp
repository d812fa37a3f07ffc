/* Copyright 2026 The msdem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

// Binary checkpoints, little-endian:
//   "MSCK" u32 version
//   u64 n, n bytes of JSON (model config, backbones, tasks, train config,
//     step counter, accuracy history)
//   u32 parameter count, per parameter:
//     u32 name length, name, u8 frozen, u32 rank, u64 dims[rank], f32 values
//   u32 t, then t*t relation entries as (u8 masked, f32 value)
//   u32 Adam state count, per state:
//     u32 name length, name, u64 step, f64 lr, beta1, beta2, epsilon,
//     u64 n, f32 first[n], f32 second[n]
//   u64 FNV-1a of every preceding byte

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "msdem/model.hpp"
#include "msdem/trainer.hpp"

namespace msdem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  std::uint32_t version = 0;
  std::unique_ptr<MsdemModel> model;
  TrainConfig train;
  TrainState state;
};

std::string serialize_checkpoint(const MsdemModel& model, const TrainConfig& train, const TrainState& state);
void save_checkpoint(const MsdemModel& model, const TrainConfig& train, const TrainState& state,
                     const std::filesystem::path& path);

// ParseError (with byte offset) on malformed or corrupted input; an Error of
// category "version" for versions newer than kCheckpointVersion.
LoadedCheckpoint parse_checkpoint(std::string_view bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msdem
