#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trialbart/text.hpp"

namespace trialbart {

enum class ColumnType { kContinuous, kBinary };

// Rows of (outcome, arm, source, covariates). Source 0 is the current trial;
// sources 1..J are external datasets whose members all received the control.
struct TrialDataset {
  std::vector<double> outcome;
  std::vector<int> arm;     // 0 control, 1 treatment
  std::vector<int> source;  // 0..J
  std::vector<std::vector<double>> covariates;  // column-major
  std::vector<std::string> covariate_names;
  std::vector<ColumnType> covariate_types;

  std::size_t num_rows() const { return outcome.size(); }
  std::size_t num_covariates() const { return covariates.size(); }

  int num_sources() const {
    int top = -1;
    for (int s : source) top = std::max(top, s);
    return top + 1;
  }

  std::vector<std::size_t> rows_where(int want_arm, int want_source = -1) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < num_rows(); ++i) {
      if (arm[i] != want_arm) continue;
      if (want_source >= 0 && source[i] != want_source) continue;
      idx.push_back(i);
    }
    return idx;
  }

  std::vector<std::size_t> trial_rows() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < num_rows(); ++i)
      if (source[i] == 0) idx.push_back(i);
    return idx;
  }

  std::vector<double> covariate_row(std::size_t i) const {
    std::vector<double> x(num_covariates());
    for (std::size_t q = 0; q < num_covariates(); ++q) x[q] = covariates[q][i];
    return x;
  }

  std::vector<std::vector<double>> covariate_rows(std::span<const std::size_t> rows) const {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (std::size_t i : rows) out.push_back(covariate_row(i));
    return out;
  }

  void append_row(double y, int a, int s, std::span<const double> x) {
    if (x.size() != num_covariates()) {
      throw std::invalid_argument("append_row: covariate count mismatch");
    }
    outcome.push_back(y);
    arm.push_back(a);
    source.push_back(s);
    for (std::size_t q = 0; q < x.size(); ++q) covariates[q].push_back(x[q]);
  }

  // Checks the dataset invariants; throws with a description on violation.
  void validate() const {
    const std::size_t n = num_rows();
    if (n == 0) throw std::invalid_argument("dataset: no rows");
    if (arm.size() != n || source.size() != n) {
      throw std::invalid_argument("dataset: column length mismatch");
    }
    for (const auto& col : covariates) {
      if (col.size() != n) throw std::invalid_argument("dataset: covariate length mismatch");
    }
    bool trial_control = false;
    bool trial_treated = false;
    std::vector<bool> seen;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(outcome[i])) {
        throw std::invalid_argument("dataset: non-finite outcome at row " + std::to_string(i + 1));
      }
      if (arm[i] != 0 && arm[i] != 1) {
        throw std::invalid_argument("dataset: arm must be 0 or 1 at row " + std::to_string(i + 1));
      }
      if (source[i] < 0) {
        throw std::invalid_argument("dataset: negative source at row " + std::to_string(i + 1));
      }
      if (source[i] > 0 && arm[i] == 1) {
        throw std::invalid_argument("dataset: external row " + std::to_string(i + 1) +
                                    " is treated; external data must be control only");
      }
      if (source[i] == 0) (arm[i] == 1 ? trial_treated : trial_control) = true;
      if (static_cast<std::size_t>(source[i]) >= seen.size()) {
        seen.resize(static_cast<std::size_t>(source[i]) + 1, false);
      }
      seen[static_cast<std::size_t>(source[i])] = true;
    }
    for (std::size_t s = 0; s < seen.size(); ++s) {
      if (!seen[s]) {
        throw std::invalid_argument("dataset: source levels not contiguous; level " +
                                    std::to_string(s) + " missing");
      }
    }
    if (!trial_control || !trial_treated) {
      throw std::invalid_argument("dataset: the trial (source 0) needs rows in both arms");
    }
  }
};

inline ColumnType detect_column_type(std::span<const double> col) {
  for (double v : col) {
    if (v != 0.0 && v != 1.0) return ColumnType::kContinuous;
  }
  return ColumnType::kBinary;
}

// Which header names play the outcome/arm/source roles; every other column
// is a covariate.
struct SchemaMapping {
  std::string outcome = "outcome";
  std::string arm = "arm";
  std::string source = "source";
};

inline TrialDataset parse_dataset(std::istream& in, const SchemaMapping& schema,
                                  const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(origin + ": empty file");
  auto header = split_csv_line(trim(line));
  int outcome_col = -1, arm_col = -1, source_col = -1;
  std::vector<int> covariate_cols;
  TrialDataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string name(trim(header[c]));
    if (name == schema.outcome) {
      outcome_col = static_cast<int>(c);
    } else if (name == schema.arm) {
      arm_col = static_cast<int>(c);
    } else if (name == schema.source) {
      source_col = static_cast<int>(c);
    } else {
      covariate_cols.push_back(static_cast<int>(c));
      ds.covariate_names.push_back(name);
    }
  }
  if (outcome_col < 0) throw std::runtime_error(origin + ": missing column '" + schema.outcome + "'");
  if (arm_col < 0) throw std::runtime_error(origin + ": missing column '" + schema.arm + "'");
  if (source_col < 0) throw std::runtime_error(origin + ": missing column '" + schema.source + "'");
  ds.covariates.resize(covariate_cols.size());

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    auto t = trim(line);
    if (t.empty()) continue;
    auto cells = split_csv_line(t);
    if (cells.size() != header.size()) {
      throw std::runtime_error(origin + ": row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    }
    auto cell = [&](int c) -> std::string_view {
      auto v = trim(cells[static_cast<std::size_t>(c)]);
      if (v.empty()) {
        throw std::runtime_error(origin + ": missing value at row " + std::to_string(row) +
                                 ", column '" + std::string(trim(header[static_cast<std::size_t>(c)])) + "'");
      }
      return v;
    };
    auto where = [&](int c) {
      return origin + ": row " + std::to_string(row) + ", column '" +
             std::string(trim(header[static_cast<std::size_t>(c)])) + "'";
    };
    ds.outcome.push_back(parse_double(cell(outcome_col), where(outcome_col)));
    long a = parse_long(cell(arm_col), where(arm_col));
    if (a != 0 && a != 1) throw std::runtime_error(where(arm_col) + ": arm must be 0 or 1");
    ds.arm.push_back(static_cast<int>(a));
    long s = parse_long(cell(source_col), where(source_col));
    if (s < 0) throw std::runtime_error(where(source_col) + ": source must be >= 0");
    ds.source.push_back(static_cast<int>(s));
    for (std::size_t q = 0; q < covariate_cols.size(); ++q) {
      ds.covariates[q].push_back(parse_double(cell(covariate_cols[q]), where(covariate_cols[q])));
    }
  }
  for (const auto& col : ds.covariates) ds.covariate_types.push_back(detect_column_type(col));
  ds.validate();
  return ds;
}

inline TrialDataset load_dataset(const std::string& path, const SchemaMapping& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  return parse_dataset(in, schema, path);
}

inline void write_dataset(std::ostream& out, const TrialDataset& ds) {
  out << "outcome,arm,source";
  for (const auto& name : ds.covariate_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ds.num_rows(); ++i) {
    out << format_double(ds.outcome[i]) << ',' << ds.arm[i] << ',' << ds.source[i];
    for (const auto& col : ds.covariates) out << ',' << format_double(col[i]);
    out << '\n';
  }
}

inline void save_dataset(const std::string& path, const TrialDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  write_dataset(out, ds);
}

// Trial rows followed by the supplied external rows, renumbering nothing:
// the external dataset must already carry source levels >= 1.
inline TrialDataset with_external(const TrialDataset& trial, const TrialDataset& external) {
  if (external.num_covariates() != trial.num_covariates()) {
    throw std::invalid_argument("with_external: covariate count mismatch");
  }
  TrialDataset out = trial;
  for (std::size_t i = 0; i < external.num_rows(); ++i) {
    out.append_row(external.outcome[i], external.arm[i], external.source[i],
                   external.covariate_row(i));
  }
  for (std::size_t q = 0; q < out.num_covariates(); ++q) {
    out.covariate_types[q] = detect_column_type(out.covariates[q]);
  }
  out.validate();
  return out;
}

}  // namespace trialbart
