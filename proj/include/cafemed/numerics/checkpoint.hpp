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

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cafemed/numerics/params.hpp"

namespace cafemed::nn {

// On-disk layout: <dir>/manifest.json lists {name, shape, dtype} in order;
// <dir>/params.bin holds the raw little-endian IEEE-754 values concatenated in
// the same order.
struct ManifestEntry {
  std::string name;
  Shape shape;
  std::string dtype;  // "float32" | "float64"
};

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "float32"; }
template <>
constexpr const char* dtype_name<double>() { return "float64"; }

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, std::span<const NamedTensor<T>> params);

// Overwrites the values of `params` by name. Every manifest entry must match
// a parameter in name, shape and dtype, and vice versa.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, std::span<NamedTensor<T>> params);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

}  // namespace cafemed::nn
