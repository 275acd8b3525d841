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

#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace smokedet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order; big-endian hosts need byte swaps");

namespace fs = std::filesystem;

namespace {

template <typename T>
void append_raw(std::string& blob, std::span<const T> values) {
  const auto* bytes = reinterpret_cast<const char*>(values.data());
  blob.append(bytes, values.size() * sizeof(T));
}

template <typename Dst>
void read_values(const std::string& blob, std::uint64_t offset, DType dtype, std::size_t n,
                 std::span<Dst> out, const std::string& name) {
  const std::size_t width = dtype == DType::kF32 ? 4 : 8;
  if (offset + n * width > blob.size()) {
    throw std::runtime_error("checkpoint blob truncated at entry " + name);
  }
  const char* src = blob.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::kF32) {
      float v;
      std::memcpy(&v, src + i * 4, 4);
      out[i] = static_cast<Dst>(v);
    } else {
      double v;
      std::memcpy(&v, src + i * 8, 8);
      out[i] = static_cast<Dst>(v);
    }
  }
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  throw std::runtime_error("checkpoint: unknown dtype " + s);
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& manifest, const ParameterStore<T>& store,
                     const nlohmann::json& meta, bool include_momentum) {
  const fs::path blob_path = fs::path(manifest).replace_extension(".bin");
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  auto add_entry = [&](const std::string& name, const Shape& shape, std::span<const T> values) {
    entries.push_back({{"name", name},
                       {"shape", shape},
                       {"dtype", dtype_name(dtype_of<T>())},
                       {"byte_offset", blob.size()}});
    append_raw(blob, values);
  };
  for (const auto& p : store.params()) add_entry(p.name, p.tensor.shape(), p.tensor.data());
  if (include_momentum) {
    for (const auto& p : store.params()) {
      add_entry(kMomentumPrefix + p.name, p.tensor.shape(), p.momentum);
    }
  }
  nlohmann::json doc = {{"format", "smokedet-checkpoint"},
                        {"version", 1},
                        {"blob", blob_path.filename().string()},
                        {"params", entries},
                        {"meta", meta}};
  {
    std::ofstream b(blob_path, std::ios::binary | std::ios::trunc);
    if (!b) throw std::runtime_error("cannot write " + blob_path.string());
    b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream m(manifest, std::ios::trunc);
  if (!m) throw std::runtime_error("cannot write " + manifest.string());
  m << doc.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest " + manifest.string() + ": " +
                             e.what());
  }
  if (doc.value("format", "") != "smokedet-checkpoint") {
    throw std::runtime_error(manifest.string() + " is not a smokedet checkpoint manifest");
  }
  return doc;
}

template <typename T>
nlohmann::json load_checkpoint(const fs::path& manifest, ParameterStore<T>& store,
                               bool load_momentum) {
  const auto doc = read_manifest(manifest);
  const fs::path blob_path = manifest.parent_path() / doc.at("blob").get<std::string>();
  std::ifstream b(blob_path, std::ios::binary);
  if (!b) throw std::runtime_error("cannot open checkpoint blob " + blob_path.string());
  const std::string blob((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : doc.at("params")) by_name[e.at("name").get<std::string>()] = &e;

  auto load_into = [&](const std::string& key, const Shape& shape, std::span<T> out) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks entry " + key);
    const auto& e = *it->second;
    if (e.at("shape").get<Shape>() != shape) {
      throw std::runtime_error("checkpoint entry " + key + " has shape " +
                               shape_str(e.at("shape").get<Shape>()) + ", model expects " +
                               shape_str(shape));
    }
    read_values<T>(blob, e.at("byte_offset").get<std::uint64_t>(),
                   parse_dtype(e.at("dtype").get<std::string>()), out.size(), out, key);
  };
  for (auto& p : store.params()) {
    load_into(p.name, p.tensor.shape(), p.tensor.mutable_data());
    check_finite<T>(p.tensor.data(), "checkpoint values");
    if (load_momentum) load_into(kMomentumPrefix + p.name, p.tensor.shape(), p.momentum);
  }
  return doc.value("meta", nlohmann::json::object());
}

template void save_checkpoint(const fs::path&, const ParameterStore<float>&,
                              const nlohmann::json&, bool);
template void save_checkpoint(const fs::path&, const ParameterStore<double>&,
                              const nlohmann::json&, bool);
template nlohmann::json load_checkpoint(const fs::path&, ParameterStore<float>&, bool);
template nlohmann::json load_checkpoint(const fs::path&, ParameterStore<double>&, bool);

}  // namespace smokedet
