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

#include "cafemed/data/ehr.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cafemed/errors.hpp"

namespace cafemed::data {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void check_set(const std::vector<Id>& ids, std::size_t bound, const char* what,
               const std::string& where) {
  std::unordered_set<Id> seen;
  for (Id id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= bound) {
      throw DataError(where + ": " + what + " ID " + std::to_string(id) +
                      " outside vocabulary of size " + std::to_string(bound));
    }
    if (!seen.insert(id).second) {
      throw DataError(where + ": duplicate " + what + " ID " + std::to_string(id));
    }
  }
}

std::size_t header_size(const json& h, const char* key) {
  const auto& v = h.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) {
    throw DataError(std::string("header field ") + key + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void DdiMatrix::add_pair(std::size_t i, std::size_t j) {
  if (i >= n_ || j >= n_ || i == j) {
    throw DataError("invalid DDI pair (" + std::to_string(i) + ", " + std::to_string(j) +
                    ") for " + std::to_string(n_) + " medications");
  }
  adj_[i * n_ + j] = 1;
  adj_[j * n_ + i] = 1;
}

std::vector<std::pair<Id, Id>> DdiMatrix::pairs() const {
  std::vector<std::pair<Id, Id>> out;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j)
      if (interacts(i, j)) out.emplace_back(static_cast<Id>(i), static_cast<Id>(j));
  return out;
}

std::size_t DdiMatrix::n_pairs() const {
  std::size_t c = 0;
  for (auto v : adj_) c += v;
  return c / 2;
}

void validate_record(const PatientRecord& record, const Vocabularies& vocab) {
  const std::string where = "patient " + record.patient_id;
  if (record.visits.empty()) throw DataError(where + ": no visits");
  for (const auto& v : record.visits) {
    check_set(v.diag, vocab.n_diag, "diagnosis", where);
    check_set(v.proc, vocab.n_proc, "procedure", where);
    check_set(v.med, vocab.n_med, "medication", where);
  }
}

Dataset parse_dataset(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line)) throw DataError(source + ": empty dataset file");
  line_no = 1;
  try {
    const json h = json::parse(line);
    if (h.at("format") != kDatasetFormat) throw DataError("unsupported format tag");
    ds.vocab.n_diag = header_size(h, "n_diag");
    ds.vocab.n_proc = header_size(h, "n_proc");
    ds.vocab.n_med = header_size(h, "n_med");
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  } catch (const DataError& e) {
    throw fail(e.what());
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    PatientRecord rec;
    try {
      const json j = json::parse(line);
      rec.patient_id = j.at("patient_id").get<std::string>();
      for (const auto& v : j.at("visits")) {
        Visit visit;
        visit.diag = v.at("diag").get<std::vector<Id>>();
        visit.proc = v.at("proc").get<std::vector<Id>>();
        visit.med = v.at("med").get<std::vector<Id>>();
        rec.visits.push_back(std::move(visit));
      }
    } catch (const json::exception& e) {
      throw fail(std::string("parse error: ") + e.what());
    }
    try {
      validate_record(rec, ds.vocab);
    } catch (const DataError& e) {
      throw fail(e.what());
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_dataset(in, path.string());
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  ordered_json h;
  h["format"] = kDatasetFormat;
  h["n_diag"] = dataset.vocab.n_diag;
  h["n_proc"] = dataset.vocab.n_proc;
  h["n_med"] = dataset.vocab.n_med;
  out << h.dump() << '\n';
  for (const auto& r : dataset.records) {
    ordered_json j;
    j["patient_id"] = r.patient_id;
    j["visits"] = ordered_json::array();
    for (const auto& v : r.visits) {
      ordered_json vj;
      vj["diag"] = v.diag;
      vj["proc"] = v.proc;
      vj["med"] = v.med;
      j["visits"].push_back(std::move(vj));
    }
    out << j.dump() << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  auto out = open_out(path);
  write_dataset(out, dataset);
}

CausalEffectMatrix load_effects_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const char* b = cell.data();
      const char* e = b + cell.size();
      while (b < e && *b == ' ') ++b;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(rows) + ": bad value '" + cell + "'");
      }
      values.push_back(v);
      ++count;
    }
    if (cols == 0) cols = count;
    if (count != cols) {
      throw DataError(path.string() + ":" + std::to_string(rows) + ": expected " +
                      std::to_string(cols) + " columns, found " + std::to_string(count));
    }
  }
  if (rows == 0) throw DataError(path.string() + ": empty effect matrix");
  CausalEffectMatrix tau(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) tau.at(r, c) = values[r * cols + c];
  return tau;
}

void save_effects_csv(const std::filesystem::path& path, const CausalEffectMatrix& tau) {
  auto out = open_out(path);
  char buf[64];
  for (std::size_t r = 0; r < tau.rows(); ++r) {
    for (std::size_t c = 0; c < tau.cols(); ++c) {
      if (c) out << ',';
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), tau.at(r, c));
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

void check_effects_shape(const CausalEffectMatrix& tau, const Vocabularies& vocab) {
  if (tau.rows() != vocab.n_entities() || tau.cols() != vocab.n_med) {
    throw ConfigError("effect matrix is " + std::to_string(tau.rows()) + "x" +
                      std::to_string(tau.cols()) + " but the vocabulary needs " +
                      std::to_string(vocab.n_entities()) + "x" + std::to_string(vocab.n_med));
  }
}

DdiMatrix load_ddi(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    const json j = json::parse(in);
    const auto n = j.at("n_med").get<std::int64_t>();
    if (n <= 0) throw DataError(path.string() + ": n_med must be positive");
    DdiMatrix ddi(static_cast<std::size_t>(n));
    for (const auto& p : j.at("pairs")) {
      const auto a = p.at(0).get<std::int64_t>(), b = p.at(1).get<std::int64_t>();
      if (p.size() != 2 || a < 0 || b >= n || a >= b) {
        throw DataError(path.string() + ": invalid pair " + p.dump() + " (need 0 <= i < j < n_med)");
      }
      ddi.add_pair(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    }
    return ddi;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed DDI file: " + e.what());
  }
}

void save_ddi(const std::filesystem::path& path, const DdiMatrix& ddi) {
  ordered_json j;
  j["n_med"] = ddi.n_med();
  j["pairs"] = ordered_json::array();
  for (auto [a, b] : ddi.pairs()) j["pairs"].push_back({a, b});
  auto out = open_out(path);
  out << j.dump() << '\n';
}

}  // namespace cafemed::data
