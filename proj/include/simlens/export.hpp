#pragma once

#include <optional>
#include <string>
#include <vector>

#include "simlens/ingest.hpp"
#include "simlens/measures.hpp"
#include "simlens/model.hpp"

namespace simlens {

enum class Orientation { Wide, Tidy };

struct TableStyle {
    int sig_digits = 4;
    bool include_mcse = true;
    std::string caption;
    Orientation orientation = Orientation::Tidy;
    // Nominal level used in the coverage / power row labels.
    double alpha = 0.05;
};

// Fixed-point text with sig_digits significant figures for |value| in
// [0.1, 10^sig_digits), and sig_digits decimals below 0.1 (so 0.0494 keeps
// the look of a 4-decimal column); trailing zeros are kept. The mcse, when
// present and requested, uses the value's decimals: "0.0494 (0.0035)".
// Throws NonFinite.
std::string format_cell(double value, std::optional<double> mcse, const TableStyle& style);

// Performance estimates plus the names needed to label them.
struct EstimateTable {
    std::vector<std::string> dgm_names;
    std::string method_name = "method";
    std::vector<PerformanceEstimate> estimates;
};

EstimateTable make_estimate_table(const Dataset& dataset, std::vector<PerformanceEstimate> estimates);

std::string measure_label(Measure m, double alpha);

// booktabs table per DGM combination (only `dgm` when given), measures as
// rows and methods as columns. Throws EmptySelection.
std::string to_latex(const EstimateTable& table, const std::optional<std::vector<std::string>>& dgm,
                     const TableStyle& style);

// Tidy: one row per (stratum, measure) with full-precision value, mcse and
// n_used. Wide: formatted cells, one row per measure and one column per
// method (DGM columns first when the table spans several combinations).
// Throws EmptySelection.
std::string to_delimited(const EstimateTable& table, TextFormat format, const TableStyle& style);

// Inverse of the tidy export.
EstimateTable estimates_from_table(const RawTable& tidy);

// Dataset rows as parsed, csv/tsv with RFC 4180 quoting or json records of
// strings (missing markers become null).
std::string to_delimited(const RawTable& table, TextFormat format);

std::string_view content_type(TextFormat format);

}  // namespace simlens
