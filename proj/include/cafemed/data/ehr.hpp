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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cafemed::data {

using Id = std::int32_t;

// One encounter: diagnosis, procedure and medication code sets. Sets carry no
// duplicates; their stored order is kept.
struct Visit {
  std::vector<Id> diag;
  std::vector<Id> proc;
  std::vector<Id> med;

  bool operator==(const Visit&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<Visit> visits;  // temporal order

  bool operator==(const PatientRecord&) const = default;
};

struct Vocabularies {
  std::size_t n_diag = 0;
  std::size_t n_proc = 0;
  std::size_t n_med = 0;

  std::size_t n_entities() const { return n_diag + n_proc; }
  bool operator==(const Vocabularies&) const = default;
};

struct Dataset {
  Vocabularies vocab;
  std::vector<PatientRecord> records;
};

inline constexpr const char* kDatasetFormat = "cafemed-ehr-v1";

// Dense real matrix. For entity effects the rows are diagnoses followed by
// procedures and the columns are medications.
class CausalEffectMatrix {
 public:
  CausalEffectMatrix() = default;
  CausalEffectMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }
  std::span<const double> values() const { return values_; }

  bool operator==(const CausalEffectMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Symmetric drug-drug interaction adjacency with an empty diagonal.
class DdiMatrix {
 public:
  DdiMatrix() = default;
  explicit DdiMatrix(std::size_t n_med) : n_(n_med), adj_(n_med * n_med, 0) {}

  std::size_t n_med() const { return n_; }
  bool interacts(std::size_t i, std::size_t j) const { return adj_[i * n_ + j] != 0; }
  // Marks the unordered pair {i, j}; i == j is rejected.
  void add_pair(std::size_t i, std::size_t j);
  // Sorted list of (i, j) with i < j.
  std::vector<std::pair<Id, Id>> pairs() const;
  std::size_t n_pairs() const;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> adj_;
};

// Dataset file: JSON Lines. Line 1 is the header
// {"format":"cafemed-ehr-v1","n_diag":..,"n_proc":..,"n_med":..}; each further
// line is {"patient_id":..,"visits":[{"diag":[..],"proc":[..],"med":[..]},..]}.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::istream& in, const std::string& source);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
void write_dataset(std::ostream& out, const Dataset& dataset);

// Throws DataError if any ID is outside the vocabulary or a set repeats an ID.
void validate_record(const PatientRecord& record, const Vocabularies& vocab);

// Effect matrix file: headerless CSV of decimal reals.
CausalEffectMatrix load_effects_csv(const std::filesystem::path& path);
void save_effects_csv(const std::filesystem::path& path, const CausalEffectMatrix& tau);
// Throws ConfigError unless tau is (n_diag + n_proc) x n_med.
void check_effects_shape(const CausalEffectMatrix& tau, const Vocabularies& vocab);

// DDI file: {"n_med":int,"pairs":[[i,j],...]} with i < j.
DdiMatrix load_ddi(const std::filesystem::path& path);
void save_ddi(const std::filesystem::path& path, const DdiMatrix& ddi);

}  // namespace cafemed::data
