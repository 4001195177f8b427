#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bvcox {

/// Subject-level competing-risks data.
///
/// Row i carries stratum index, observed time, cause (0 = censored, 1..m =
/// failure type), the effect modifier, varying-effect covariates z (row of
/// `z`) and invariant-effect covariates w (row of `w`).
struct Dataset {
  std::vector<int> stratum;  // 0-based index into stratum_labels
  std::vector<std::string> stratum_labels;
  std::vector<double> time;
  std::vector<int> cause;
  std::vector<double> modifier;
  Eigen::MatrixXd z;  // n x p
  Eigen::MatrixXd w;  // n x q
  std::vector<std::string> z_names;
  std::vector<std::string> w_names;
  int num_causes = 1;
  std::vector<std::string> warnings;

  [[nodiscard]] std::size_t n() const noexcept { return time.size(); }
  [[nodiscard]] int p() const noexcept { return static_cast<int>(z.cols()); }
  [[nodiscard]] int q() const noexcept { return static_cast<int>(w.cols()); }
  [[nodiscard]] int num_strata() const noexcept { return static_cast<int>(stratum_labels.size()); }
  [[nodiscard]] std::size_t event_count(int cause_code) const;

  // Rows in the given order; stratum labels and cause count are kept.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;
  // Same data with every cause other than `cause_code` recoded as censoring.
  [[nodiscard]] Dataset single_cause(int cause_code) const;
};

/// Checks field ranges and drops rows with zero time that are censored
/// (they never enter a likelihood term). Dropped rows are noted in
/// `ds.warnings`.
void finalize_dataset(Dataset& ds);

struct DatasetSummary {
  std::size_t n = 0;
  int strata = 0;
  std::vector<std::size_t> events_per_cause;  // index j-1
  std::size_t censored = 0;
};
DatasetSummary summarize(const Dataset& ds);

/// Column mapping for CSV ingest. `stratum` may be absent from the file,
/// in which case every row lands in one stratum.
struct CsvSchema {
  std::vector<std::string> z_cols;
  std::vector<std::string> w_cols;
  std::string stratum_col = "stratum";
  std::string time_col = "time";
  std::string cause_col = "cause";
  std::string modifier_col = "modifier";
  int num_causes = 0;  // 0: infer as the largest cause code present
};

/// Reads a UTF-8 CSV with a header row. Lines starting with '#' are skipped.
Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_csv(const std::string& text, const CsvSchema& schema);

/// Writes the dataset with reserved columns first, then z and w columns.
/// `comment`, when non-empty, is emitted as a leading '#' line.
void write_csv(const std::filesystem::path& path, const Dataset& ds, const std::string& comment = {});
std::string format_csv(const Dataset& ds, const std::string& comment = {});

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// A run of tied failures of one cause inside one stratum.
struct FailureGroup {
  double time = 0.0;
  std::size_t at_risk = 0;                 // prefix length of the risk order
  std::vector<std::size_t> event_positions;  // positions in the risk order
};

struct StratumRisk {
  std::vector<std::size_t> order;  // subject rows, observed time descending
  std::vector<double> sorted_time;
  std::vector<std::vector<FailureGroup>> failures;  // [cause-1][b], times ascending
};

/// Per-stratum risk ordering. The risk set at time t is the prefix of
/// `order` holding every subject with observed time >= t.
struct RiskIndex {
  std::vector<StratumRisk> strata;
  int num_causes = 1;

  [[nodiscard]] std::size_t failure_time_count(int cause_code) const;
};

RiskIndex build_risk_index(const Dataset& ds);

}  // namespace bvcox
