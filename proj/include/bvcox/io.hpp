#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "bvcox/baseline_residuals.hpp"
#include "bvcox/cross_validation.hpp"
#include "bvcox/experiment.hpp"
#include "bvcox/inference.hpp"
#include "bvcox/solver.hpp"

namespace bvcox {

using Json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes);
std::string read_text(const std::filesystem::path& path);
// Writes through a temporary file so readers never see a partial file.
void write_text(const std::filesystem::path& path, const std::string& text);

Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);  // array of rows
Eigen::VectorXd vector_from_json(const Json& j);
Eigen::MatrixXd matrix_from_json(const Json& j);

Json to_json(const BasisSpec& spec);
BasisSpec basis_spec_from_json(const Json& j);
Json to_json(const PenaltyConfig& cfg);
PenaltyConfig penalty_from_json(const Json& j);
Json to_json(const SolverConfig& cfg);

/// A fit together with the covariate names it was fitted on.
struct FitArtifact {
  FitResult fit;
  std::vector<std::string> z_names;
  std::vector<std::string> w_names;
  std::vector<std::string> stratum_labels;
};

/// "fit" record: coefficients in canonical layout with an index legend,
/// log-likelihoods, convergence trace and every matrix inference needs.
Json fit_record(const FitArtifact& artifact);
FitArtifact fit_from_record(const Json& record);

Json test_record(const TestResult& result, const std::string& covariate_name);
std::vector<Json> cv_records(const CvReport& report);
std::vector<Json> metrics_records(const MetricsReport& report);

/// Line-delimited records; the first line carries the manifest hash.
std::string format_jsonl(const std::string& manifest_hash, const std::vector<Json>& records);
/// Records of the given type, skipping the manifest line.
std::vector<Json> read_jsonl(const std::filesystem::path& path, const std::string& record_type = {});

// CSV outputs start with "# manifest_sha256=<hash>".
std::string csv_preamble(const std::string& manifest_hash);
std::string format_surface_csv(const std::string& manifest_hash, const std::string& covariate,
                               const std::vector<SurfacePoint>& points);
std::string format_baseline_csv(const std::string& manifest_hash, const BaselineHazard& baseline);
std::string format_residuals_csv(const std::string& manifest_hash, const Residuals& residuals, const Dataset& ds);
std::string format_truth_csv(const std::string& manifest_hash, const TrueSurface& surface,
                             std::span<const double> t_grid, std::span<const double> x_grid);
std::string format_curves_csv(const std::string& manifest_hash, const MetricsReport& report);

}  // namespace bvcox
