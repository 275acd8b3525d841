/* Copyright 2026 The smokedet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef SMOKEDET_CHECKPOINT_HPP_
#define SMOKEDET_CHECKPOINT_HPP_

#include <filesystem>
#include <string>

#include "json.hpp"
#include "params.hpp"

namespace smokedet {

// Manifest (JSON) + sidecar blob of little-endian raw values in manifest order.
// Momentum buffers are stored as extra entries prefixed with kMomentumPrefix.
inline constexpr const char* kMomentumPrefix = "momentum:";

template <typename T>
void save_checkpoint(const std::filesystem::path& manifest, const ParameterStore<T>& store,
                     const nlohmann::json& meta, bool include_momentum);

/// Loads values into existing parameters (converting dtype if needed) and
/// returns the manifest's `meta` object. Every store parameter must be present.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& manifest, ParameterStore<T>& store,
                               bool load_momentum);

nlohmann::json read_manifest(const std::filesystem::path& manifest);

}  // namespace smokedet

#endif  // SMOKEDET_CHECKPOINT_HPP_
