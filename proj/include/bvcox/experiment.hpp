#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvcox/cross_validation.hpp"
#include "bvcox/inference.hpp"
#include "bvcox/penalty.hpp"
#include "bvcox/simulation.hpp"
#include "bvcox/solver.hpp"
#include "bvcox/spline_basis.hpp"

namespace bvcox {

enum class Metric { IMSE, Bias, Variance, Coverage, TypeI, Power, CvComparison };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);

/// A curve of the true surface along one timescale: event-time curves hold
/// the modifier fixed, calendar curves hold event time fixed.
enum class Timescale { Event, Calendar };

std::string to_string(Timescale scale);

struct CurveSpec {
  Timescale scale = Timescale::Event;
  double fixed = 0.0;        // modifier (event curves) or event time (calendar curves)
  std::vector<double> axis;  // evaluation points along the curve
};

/// Evaluation curves for estimation and coverage, plus the joint grid used
/// by the cross-validation comparison.
struct EvaluationGrid {
  std::vector<CurveSpec> curves;
  std::vector<double> joint_t;
  std::vector<double> joint_x;

  // `points` evenly spaced points per curve over the scenario ranges, event
  // curves at modifier slices {0, 2, 5, 10}, calendar curves at event times
  // {1, 5, 10, 20}; joint grid 101 x 101.
  static EvaluationGrid standard(const ScenarioConfig& scenario, int points = 100);
  [[nodiscard]] std::size_t point_count() const;
};

std::vector<double> linspace(double lo, double hi, int count);

/// One fitted configuration per replicate, sharing the replicate's data.
struct FitSetting {
  std::string label = "unpenalized";
  std::optional<PenaltyConfig> penalty;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  std::size_t replicates = 100;
  std::uint64_t seed = 1;
  int degree = 3;
  int degree_x = 3;
  int knots_t = 3;  // interior knots
  int knots_x = 3;
  // "quantile": distinct failure times and modifiers of each replicate;
  // "even": evenly spaced over the scenario ranges.
  std::string knot_rule = "quantile";
  std::vector<FitSetting> settings{FitSetting{}};
  std::vector<Metric> metrics{Metric::IMSE, Metric::Bias, Metric::Variance};
  SolverConfig solver;
  int threads = 1;  // replicates run in parallel; fits inside run single-threaded
  double level = 0.95;
  double alpha = 0.05;
  // Penalized settings are tested with each of these; unpenalized ones use
  // the unpenalized construction.
  std::vector<VarianceConstruction> constructions{VarianceConstruction::Sandwich, VarianceConstruction::Model,
                                                  VarianceConstruction::Gray};
  std::vector<ContrastKind> kinds{ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint};
  int cv_folds = 4;
  std::vector<CvMethod> cv_methods{std::begin(kAllCvMethods), std::end(kAllCvMethods)};
  std::vector<PenaltyConfig> cv_grid;  // empty: default grid for the scenario size
  std::optional<EvaluationGrid> grid;  // empty: EvaluationGrid::standard

  void validate() const;
  [[nodiscard]] bool wants(Metric metric) const;
  [[nodiscard]] EvaluationGrid evaluation_grid() const;
};

TensorBasis experiment_basis(const ExperimentConfig& cfg, const Dataset& ds);

struct TestOutcome {
  ContrastKind kind = ContrastKind::Joint;
  VarianceConstruction construction = VarianceConstruction::Unpenalized;
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Estimates of one setting on one replicate, flattened over the grid
/// curves in order.
struct SettingOutcome {
  bool ok = false;
  std::string error;
  int iterations = 0;
  std::vector<double> estimate;
  std::vector<double> lo;  // interval bounds, filled when coverage is requested
  std::vector<double> hi;
  std::vector<TestOutcome> tests;
};

struct CvOutcome {
  CvMethod method = CvMethod::GCV;
  bool ok = false;
  std::string error;
  PenaltyConfig selected;
  double train_m2ll = 0.0;  // -2 log partial likelihood of the selected fit
  double test_m2ll = 0.0;
  double imse = 0.0;  // joint-grid average squared error
};

struct ReplicateOutcome {
  std::size_t replicate = 0;
  bool ok = false;
  std::string error;
  std::size_t events = 0;
  std::vector<SettingOutcome> settings;
  std::vector<CvOutcome> cv;
};

ReplicateOutcome run_replicate(const ExperimentConfig& cfg, const EvaluationGrid& grid, std::size_t replicate);

struct CurveSummary {
  CurveSpec spec;
  std::vector<double> truth;
  std::vector<double> mean;
  std::vector<double> band_lo;  // 2.5% and 97.5% percentiles across replicates
  std::vector<double> band_hi;
  std::vector<double> bias;
  std::vector<double> variance;  // across replicates, divisor R
  std::vector<double> mse;       // bias^2 + variance
  std::vector<double> coverage;  // empty unless requested
  double imse = 0.0;
  double mean_sq_bias = 0.0;  // imse = mean_sq_bias + mean_variance
  double mean_variance = 0.0;
};

struct EstimationSummary {
  std::string label;
  std::size_t used = 0;
  std::size_t failed = 0;
  std::vector<CurveSummary> curves;
  // Averages over the curves of each timescale, with Monte Carlo standard
  // errors from the per-replicate integrated squared errors.
  double imse_event = 0.0;
  double imse_event_se = 0.0;
  double imse_calendar = 0.0;
  double imse_calendar_se = 0.0;
};

/// Summary of per-replicate estimates on `grid`; rows of `estimates` (and
/// of lo/hi when non-empty) are replicates.
EstimationSummary summarize_estimation(const EvaluationGrid& grid, const TrueSurface& truth,
                                       const std::vector<std::vector<double>>& estimates,
                                       const std::vector<std::vector<double>>& lo = {},
                                       const std::vector<std::vector<double>>& hi = {});

struct TestSummary {
  std::string label;
  ContrastKind kind = ContrastKind::Joint;
  VarianceConstruction construction = VarianceConstruction::Unpenalized;
  std::size_t used = 0;
  std::size_t rejections = 0;
  double rate = 0.0;
  double se = 0.0;
};

struct CvSummary {
  CvMethod method = CvMethod::GCV;
  std::size_t used = 0;
  std::size_t failed = 0;
  double train_m2ll_mean = 0.0;
  double train_m2ll_sd = 0.0;
  double test_m2ll_mean = 0.0;
  double test_m2ll_sd = 0.0;
  double imse_mean = 0.0;
  double imse_sd = 0.0;
};

struct MetricsReport {
  ExperimentConfig config;
  EvaluationGrid grid;
  std::size_t failed_replicates = 0;
  std::vector<EstimationSummary> estimation;  // per setting
  std::vector<TestSummary> tests;
  std::vector<CvSummary> cv;
  std::vector<ReplicateOutcome> outcomes;
};

MetricsReport summarize(const ExperimentConfig& cfg, const EvaluationGrid& grid, std::vector<ReplicateOutcome> outcomes);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Replicate r uses dataset stream 2r (and 2r+1 for the testing copy of the
/// cross-validation comparison) under cfg.seed.
MetricsReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

}  // namespace bvcox
