#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "simlens/error.hpp"
#include "simlens/model.hpp"

namespace simlens {

enum class Measure {
    Bias,
    EmpSE,
    ModSE,
    MSE,
    Coverage,
    BECoverage,
    Power,
    RelPrec,
    MeanEst,
    MedianEst,
    MeanSqErr,
    MedianSqErr,
};

// Canonical output order.
inline constexpr std::array<Measure, 12> kAllMeasures = {
    Measure::Bias,     Measure::EmpSE,   Measure::ModSE,     Measure::MSE,       Measure::Coverage,  Measure::BECoverage,
    Measure::Power,    Measure::RelPrec, Measure::MeanEst,   Measure::MedianEst, Measure::MeanSqErr, Measure::MedianSqErr,
};

std::string_view measure_name(Measure m);
std::optional<Measure> parse_measure(std::string_view name);
// Comma-separated names; throws Error(InvalidArgument) on an unknown name.
std::vector<Measure> parse_measure_list(std::string_view list);

// One stratum's aligned columns. NaN marks a missing entry; an empty vector
// means the role is not mapped at all.
struct PerformanceInput {
    std::vector<double> estimates;
    std::vector<double> ses;
    std::vector<double> truths;
    std::vector<double> lowers;
    std::vector<double> uppers;
    std::vector<double> dfs;
    std::vector<std::string> rep_ids;
    double alpha = 0.05;

    bool has_truth() const noexcept { return !truths.empty(); }
    bool has_ses() const noexcept { return !ses.empty(); }
    bool has_bounds() const noexcept { return !lowers.empty() && !uppers.empty(); }
    bool has_dfs() const noexcept { return !dfs.empty(); }

    static PerformanceInput from_stratum(const Dataset& dataset, const Stratum& stratum);
};

enum class CriticalValueKind { Normal, TPerRepetition, SuppliedBounds };

struct CriticalValueRule {
    CriticalValueKind kind = CriticalValueKind::Normal;

    // Supplied bounds win, then a df column, else normal theory.
    static CriticalValueRule from_mapping(const VariableMapping& mapping);
};

struct Interval {
    double lower = kMissing;
    double upper = kMissing;

    bool usable() const noexcept { return !is_missing(lower) && !is_missing(upper); }
    bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

// Per-repetition intervals; repetitions lacking an ingredient get an
// unusable interval. Throws Error(NoIntervals) when the rule cannot be
// satisfied by any repetition because a whole role is unmapped.
std::vector<Interval> build_intervals(const PerformanceInput& input, CriticalValueRule rule);

// Result of one measure on one stratum. value is empty when the measure is
// undefined for the data at hand (too few usable repetitions); mcse is also
// empty for the medians and whenever fewer than two repetitions contribute.
struct MeasureValue {
    Measure measure = Measure::Bias;
    std::optional<double> value;
    std::optional<double> mcse;
    std::size_t n_used = 0;
};

MeasureValue bias(const PerformanceInput& input);
MeasureValue empirical_se(const PerformanceInput& input);
MeasureValue model_se(const PerformanceInput& input);
MeasureValue mse(const PerformanceInput& input);
// mean_est and median_est, plus mean_sq_err and median_sq_err when truth is mapped.
std::vector<MeasureValue> mean_median_summaries(const PerformanceInput& input);
MeasureValue coverage(const PerformanceInput& input, CriticalValueRule rule);
MeasureValue bias_eliminated_coverage(const PerformanceInput& input, CriticalValueRule rule);
MeasureValue power(const PerformanceInput& input, CriticalValueRule rule);
// Percent gain in precision of `method` over `reference`, pairing repetitions by rep id.
MeasureValue relative_precision(const PerformanceInput& method, const PerformanceInput& reference);

struct PerformanceEstimate {
    Measure measure = Measure::Bias;
    StratumKey stratum;
    std::optional<double> value;
    std::optional<double> mcse;
    std::size_t n_used = 0;
};

struct ComputeOptions {
    std::vector<Measure> measures{kAllMeasures.begin(), kAllMeasures.end()};
    // Raise instead of silently omitting a requested measure whose
    // ingredients are not mapped.
    bool strict = false;
    // Restrict to one DGM combination.
    std::optional<std::vector<std::string>> dgm;
    std::function<void(std::string_view)> log;
};

// Why a measure cannot be computed for this mapping, if it cannot.
std::optional<ErrorCode> missing_ingredient(const VariableMapping& mapping, Measure measure);

// Stratum-major, measures in canonical order.
std::vector<PerformanceEstimate> compute_all(const Dataset& dataset, const ComputeOptions& options = {});

}  // namespace simlens
