#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simlens/measures.hpp"
#include "simlens/model.hpp"

namespace simlens {

enum class PlotKind { Scatter, BlandAltman, Ridgeline, DensityPairs, Forest, Lolly, Heat, Zip, NestedLoop };

std::string_view to_string(PlotKind k);
// Accepts the names above in kebab case ("bland-altman", "nested-loop", ...).
std::optional<PlotKind> parse_plot_kind(std::string_view s);

enum class Quantity { Estimate, SE };

struct PlotSpec {
    PlotKind kind = PlotKind::Forest;
    std::optional<Measure> measure;                // performance kinds
    std::optional<std::vector<std::string>> dgm;   // restrict to one DGM combination
    std::optional<std::string> method;             // restrict to one method
    std::optional<std::string> method_a, method_b; // pair kinds
    Quantity quantity = Quantity::Estimate;
    std::vector<std::string> factor_order;         // nested loop; empty = declared order
    double ci_level = 0.95;                        // forest / lolly
    std::string title, xlab, ylab;
    std::string theme = "default";                 // default | minimal | dark
    int width = 800;
    int height = 500;
    int dpi = 96;
};

// ---- estimate-level plots ----

struct EstimatePair {
    std::string rep_id;
    double a = 0.0;
    double b = 0.0;
};

struct EstimatePairs {
    std::vector<std::string> dgm;
    std::string method_a, method_b;
    std::vector<EstimatePair> points;  // in method_a's record order
    std::size_t dropped = 0;           // repetitions without a usable partner
};

// One group per DGM combination (or only `dgm`). Throws InvalidArgument for
// an unknown method, UnpairedRepetitions for duplicate ids and
// NoCommonRepetitions when nothing pairs.
std::vector<EstimatePairs> estimate_pairs(const Dataset& dataset, const std::string& method_a,
                                          const std::string& method_b, Quantity quantity,
                                          const std::optional<std::vector<std::string>>& dgm = std::nullopt);

struct BlandAltmanPoint {
    double mean = 0.0;
    double diff = 0.0;
};

struct BlandAltmanData {
    std::vector<std::string> dgm;
    std::vector<BlandAltmanPoint> points;
    double mean_diff = 0.0;
    // ±1.96·SD(diff) limits; absent with fewer than two pairs.
    std::optional<double> sd_diff, lower, upper;
};

BlandAltmanData bland_altman(const EstimatePairs& pairs);

struct RidgelineGroup {
    std::vector<std::string> dgm;
    std::string method;
    std::vector<double> sample;  // sorted
    bool raw_only = false;       // too few points (or no spread) for a density
    double bandwidth = 0.0;
    std::vector<double> grid, density;  // 128 points each
};

inline constexpr std::size_t kKdePoints = 128;

// Gaussian KDE per (DGM × method), Silverman bandwidth, grid spanning
// [min − 4h, max + 4h].
std::vector<RidgelineGroup> ridgeline_data(const Dataset& dataset, Quantity quantity,
                                           const std::optional<std::vector<std::string>>& dgm = std::nullopt);

// ---- performance plots ----

struct ForestRow {
    std::vector<std::string> dgm;
    std::string method;
    double value = 0.0;
    double mcse = 0.0;
    // z_{(1+level)/2} · mcse, rounded so that upper − value == value − lower
    // holds exactly in floating point.
    double half_width = 0.0;
    double lower = 0.0, upper = 0.0;
};

// Rows whose value and mcse are defined; MeasureUnavailable when none are
// (always the case for the medians).
std::vector<ForestRow> forest_lolly_data(const std::vector<PerformanceEstimate>& estimates, Measure measure,
                                         double ci_level = 0.95);

struct HeatTile {
    std::vector<std::string> dgm;
    std::string method;
    double value = 0.0;
};

std::vector<HeatTile> heat_data(const std::vector<PerformanceEstimate>& estimates, Measure measure);

struct ZipStripe {
    std::string method;
    std::vector<std::string> dgm;
    std::string rep_id;
    double estimate = 0.0;
    double truth = 0.0;
    double lower = 0.0, upper = 0.0;
    double z = 0.0;               // |θ̂ − θ| / SE
    double rank_percentile = 0.0; // (0, 100]; the most significant stripe gets 100
    bool covers = false;
};

struct ZipStratum {
    StratumKey key;
    double coverage = 0.0;  // mean of covers, identical to the coverage measure
    std::vector<ZipStripe> stripes;  // ascending percentile
};

// Stripes ranked by z descending (ties in repetition order). With supplied
// bounds and no SE, SE is recovered as (upper − lower)/(2·z_{1−α/2}).
// Throws NoTruth or NoIntervals.
std::vector<ZipStratum> zip_data(const Dataset& dataset, CriticalValueRule rule,
                                 const std::optional<std::vector<std::string>>& dgm = std::nullopt,
                                 const std::optional<std::string>& method = std::nullopt);

struct NestedLoopRibbon {
    std::string factor;
    std::vector<std::string> levels;  // distinct, sorted
    std::vector<double> y;            // per position
};

struct NestedLoopSeries {
    std::vector<std::string> factor_order;
    std::vector<std::vector<std::string>> dgm_order;  // per position, levels in factor_order
    std::vector<std::string> methods;
    std::vector<std::vector<std::optional<double>>> value_steps;  // [method][position]
    std::vector<NestedLoopRibbon> factor_ribbons;                  // outermost factor first
    double band_lower = 0.0, band_upper = 0.0;
};

// Throws MeasureUnavailable, or InvalidArgument when there is no DGM factor
// or factor_order is not a permutation of dgm_names.
NestedLoopSeries nested_loop_data(const std::vector<PerformanceEstimate>& estimates,
                                  const std::vector<std::string>& dgm_names, Measure measure,
                                  std::vector<std::string> factor_order = {});

// ---- dispatch and rendering ----

using PlotData = std::variant<std::vector<EstimatePairs>, std::vector<BlandAltmanData>, std::vector<RidgelineGroup>,
                              std::vector<ForestRow>, std::vector<HeatTile>, std::vector<ZipStratum>,
                              NestedLoopSeries>;

// Builds the data for spec.kind. Performance kinds compute the estimates
// they need; spec.measure defaults to bias.
PlotData build_plot(const Dataset& dataset, const PlotSpec& spec);

bool is_known_theme(std::string_view theme);

// SVG 1.1; identical input gives identical bytes. Throws EmptyPlot.
std::string render_svg(const PlotSpec& spec, const PlotData& data);

// Pipes the svg through `command` (run by /bin/sh) and returns its stdout.
// The target format, dpi, width and height are passed in the environment as
// SIMLENS_FORMAT, SIMLENS_DPI, SIMLENS_WIDTH and SIMLENS_HEIGHT. Throws
// ConverterFailed on a non-zero exit or empty output.
std::string convert_svg(const std::string& svg, const std::string& command, const std::string& format,
                        const PlotSpec& spec);

}  // namespace simlens
