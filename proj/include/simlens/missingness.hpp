#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "simlens/model.hpp"

namespace simlens {

// Variables inspected for missingness: every column except the method and
// DGM columns (missing values there are an ingest error, not a statistic).
std::vector<std::string> missingness_variables(const Dataset& dataset);

// A cell is missing when it holds a missing marker, or when its column
// feeds a numeric role and the text does not parse as a number.
bool cell_missing(const Dataset& dataset, std::size_t row, std::size_t column);

struct MissingSummary {
    std::string variable;
    StratumKey stratum;
    std::size_t stratum_size = 0;
    std::size_t n_missing = 0;
    double prop_missing = 0.0;
    std::size_t n_cumulative = 0;  // running total for this variable in stratum order
};

// Variable-major (column order), then stratum order.
std::vector<MissingSummary> missing_table(const Dataset& dataset);

enum class MissingGroupBy { Method, Dgm };

struct MissingBar {
    std::string variable;
    std::string group;  // method label, or DGM levels joined by ", "
    std::size_t n_missing = 0;
    std::size_t n_total = 0;
    double prop_missing = 0.0;
};

std::vector<MissingBar> missing_bar_data(const Dataset& dataset, MissingGroupBy by);

struct MissingTile {
    std::string method;
    std::vector<std::string> dgm;
    std::size_t n_missing = 0;
    std::size_t n_total = 0;
    double percent = 0.0;
};

// One tile per stratum for `variable` (defaults to the estimate column).
std::vector<MissingTile> missing_heat_data(const Dataset& dataset, std::string variable = {});

struct ShadowPoint {
    double x = 0.0;
    double y = 0.0;
    bool x_missing = false;
    bool y_missing = false;
};

struct ShadowData {
    std::string xvar, yvar;
    double x_imputed = 0.0;  // display value substituted for missing x
    double y_imputed = 0.0;
    std::vector<ShadowPoint> points;  // one per row, in row order
};

// Missing coordinates are drawn at min − 0.10·range of the observed values
// (min − 1 when the range is 0, and 0 when nothing is observed). Throws
// UnknownColumn or NonNumericVariable.
ShadowData shadow_scatter_data(const Dataset& dataset, const std::string& xvar, const std::string& yvar);

// Dataset-wide view: rows are cut into consecutive blocks and each
// (variable, block) cell holds the proportion of missing cells.
struct MissingMatrix {
    std::vector<std::string> variables;
    std::size_t block_size = 1;
    std::vector<std::size_t> block_starts;
    std::vector<std::vector<double>> proportions;  // [variable][block]
};

MissingMatrix missing_matrix(const Dataset& dataset, std::size_t max_blocks = 100);

}  // namespace simlens
