#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvcox/baseline_residuals.hpp"
#include "bvcox/data.hpp"
#include "bvcox/penalty.hpp"
#include "bvcox/solver.hpp"

namespace bvcox {

enum class CvMethod { FC, CFC, UC, DR, GCV };

std::string to_string(CvMethod method);
CvMethod parse_cv_method(const std::string& text);
inline constexpr CvMethod kAllCvMethods[] = {CvMethod::FC, CvMethod::CFC, CvMethod::UC, CvMethod::DR,
                                             CvMethod::GCV};

struct FoldAssignment {
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<int> fold;  // 0-based fold per dataset row

  [[nodiscard]] std::vector<std::size_t> members(int f) const;
  [[nodiscard]] std::vector<std::size_t> complement(int f) const;
  [[nodiscard]] std::vector<std::size_t> sizes() const;
};

/// Rows are grouped by cause code (0 = censored), each group shuffled, and
/// the concatenation dealt round-robin, so fold sizes differ by at most one
/// and every cause is spread evenly. Throws when some fold complement would
/// lose every event of a cause that has events.
FoldAssignment partition_folds(const Dataset& ds, int folds, std::uint64_t seed);

/// 5 x 5 grid with mu / sqrt(n) and mu_x / sqrt(n) in {1e-5, ..., 1e-1}.
std::vector<PenaltyConfig> default_grid(std::size_t n, int p);

struct CvSettings {
  SolverConfig solver;
  bool fold_specific_baseline = false;  // DR: Breslow on each fold complement
  bool warm_start = true;
};

struct FoldFit {
  int fold = 0;
  bool ok = false;
  std::string error;
  std::optional<FitResult> fit;
};

/// Fits at one grid point: one per fold complement plus the full-data fit.
struct GridFits {
  PenaltyConfig penalty;
  std::vector<FoldFit> folds;
  FoldFit full;
};

struct FoldCoverage {
  int fold = 0;
  std::size_t size = 0;
  std::size_t events = 0;
  double last_event_time = 0.0;
};

/// Shared state for one dataset, fold assignment, basis and cause.
class CvProblem {
 public:
  CvProblem(const Dataset& ds, const FoldAssignment& folds, const TensorBasis& basis, int cause,
            CvSettings settings = {});
  ~CvProblem();
  CvProblem(const CvProblem&) = delete;
  CvProblem& operator=(const CvProblem&) = delete;

  /// Fits every grid point, warm-starting along ascending total penalty.
  [[nodiscard]] std::vector<GridFits> compute_fits(std::span<const PenaltyConfig> grid) const;

  struct Evaluation {
    double cve = 0.0;
    bool valid = false;
    std::string note;
    std::size_t clipped = 0;  // DR: clipped deviance radicands
  };
  [[nodiscard]] Evaluation cve(CvMethod method, const GridFits& fits) const;

  [[nodiscard]] std::vector<FoldCoverage> coverage() const;
  [[nodiscard]] const Dataset& data() const noexcept;
  [[nodiscard]] int cause() const noexcept;
  [[nodiscard]] const TensorBasis& basis() const noexcept;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

struct CvPoint {
  PenaltyConfig penalty;
  double cve = 0.0;
  bool valid = false;
  std::string note;
  std::size_t clipped = 0;
};

struct CvReport {
  CvMethod method = CvMethod::GCV;
  int cause = 1;
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<CvPoint> points;  // grid order
  std::size_t selected = 0;
  std::vector<FoldCoverage> coverage;
};

/// Index of the smallest valid CVE; CVEs within 1e-10 relative count as tied
/// and the larger total penalty wins. Throws when no point is valid.
std::size_t select_point(std::span<const CvPoint> points);

CvReport make_report(const CvProblem& problem, CvMethod method, std::span<const GridFits> fits,
                     const FoldAssignment& folds);

CvReport tune(const CvProblem& problem, std::span<const PenaltyConfig> grid, CvMethod method,
              const FoldAssignment& folds);

/// All methods from one set of fits.
std::vector<CvReport> tune_all(const CvProblem& problem, std::span<const PenaltyConfig> grid,
                               std::span<const CvMethod> methods, const FoldAssignment& folds,
                               std::vector<GridFits>* fits_out = nullptr);

}  // namespace bvcox
