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

#include <filesystem>
#include <string>

#include "msdem/model.hpp"
#include "msdem/stream.hpp"
#include "msdem/trainer.hpp"

namespace msdem {

// Training run configuration: model hyperparameters plus the trainer's
// settings. tau and sigma live in the train section and are copied into the
// model when training starts.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Parses a JSON document with optional "model" and "train" objects. Missing
// keys take defaults; unknown keys, wrong types and invalid values are all
// collected into one ValidationError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_text(const RunConfig& config);

// Same checks as parse_run_config against a concrete backbone list.
void validate_run_config(const RunConfig& config, std::span<const BackboneSpec> backbones);

// JSON parsing of the gen-synth configuration (defaults as SynthStreamConfig).
SynthStreamConfig parse_synth_config(const std::string& text);
std::string synth_config_to_text(const SynthStreamConfig& config);

}  // namespace msdem
