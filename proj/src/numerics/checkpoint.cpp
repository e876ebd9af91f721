/*
 * Copyright 2026 The CafeMed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cafemed/numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "cafemed/errors.hpp"

namespace cafemed::nn {

namespace {

static_assert(std::endian::native == std::endian::little,
              "params.bin is written in host byte order; big-endian hosts need a swap");

using ordered_json = nlohmann::ordered_json;

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "float32") return 4;
  if (dtype == "float64") return 8;
  throw ConfigError("checkpoint: unknown dtype '" + dtype + "'");
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("checkpoint: cannot open " + (dir / "manifest.json").string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed manifest.json: ") + e.what());
  }
  std::vector<ManifestEntry> out;
  try {
    if (!doc.is_array()) throw ConfigError("checkpoint: manifest.json must be an array");
    for (const auto& e : doc) {
      ManifestEntry m;
      m.name = e.at("name").get<std::string>();
      m.shape = e.at("shape").get<Shape>();
      m.dtype = e.at("dtype").get<std::string>();
      dtype_size(m.dtype);
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad manifest entry: ") + e.what());
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, std::span<const NamedTensor<T>> params) {
  std::filesystem::create_directories(dir);
  ordered_json manifest = ordered_json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw ConfigError("checkpoint: cannot write " + (dir / "params.bin").string());
  for (const auto& p : params) {
    ordered_json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape();
    e["dtype"] = dtype_name<T>();
    manifest.push_back(std::move(e));
    auto data = p.tensor.data();
    bin.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(T)));
  }
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

template <typename T>
void load_checkpoint(const std::filesystem::path& dir, std::span<NamedTensor<T>> params) {
  const auto manifest = read_manifest(dir);
  std::map<std::string, NamedTensor<T>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;
  if (manifest.size() != params.size()) {
    throw ConfigError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                      " tensors but the model has " + std::to_string(params.size()));
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw ConfigError("checkpoint: cannot open " + (dir / "params.bin").string());
  for (const auto& e : manifest) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw ConfigError("checkpoint: unexpected tensor " + e.name);
    auto& t = it->second->tensor;
    if (e.dtype != dtype_name<T>()) {
      throw ConfigError("checkpoint: tensor " + e.name + " stored as " + e.dtype +
                        ", model expects " + dtype_name<T>());
    }
    if (e.shape != t.shape()) {
      throw ConfigError("checkpoint: tensor " + e.name + " has shape " + shape_str(e.shape) +
                        ", model expects " + shape_str(t.shape()));
    }
    auto data = t.mutable_data();
    bin.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!bin) throw ConfigError("checkpoint: params.bin is truncated at " + e.name);
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw ConfigError("checkpoint: params.bin has trailing bytes");
  }
}

template void save_checkpoint(const std::filesystem::path&, std::span<const NamedTensor<float>>);
template void save_checkpoint(const std::filesystem::path&, std::span<const NamedTensor<double>>);
template void load_checkpoint(const std::filesystem::path&, std::span<NamedTensor<float>>);
template void load_checkpoint(const std::filesystem::path&, std::span<NamedTensor<double>>);

}  // namespace cafemed::nn
