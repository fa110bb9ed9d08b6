#pragma once

// Request-level glue shared by the CLI and the HTTP service: parameter
// parsing, JSON views of engine results and table rendering. Keeping both
// front ends on these functions is what makes their outputs byte-identical.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "simlens/export.hpp"
#include "simlens/measures.hpp"
#include "simlens/missingness.hpp"
#include "simlens/model.hpp"
#include "simlens/plotdata.hpp"

namespace simlens::report {

using Json = nlohmann::ordered_json;
using Params = std::map<std::string, std::string, std::less<>>;

enum class TableFormat { Csv, Tsv, Json, Latex };

std::optional<TableFormat> parse_table_format(std::string_view s);
std::string_view content_type(TableFormat f);
std::string_view file_extension(TableFormat f);

// "2" or "a,b": one level per DGM factor in declared order. Throws
// InvalidArgument when the combination does not occur in the dataset.
std::vector<std::string> resolve_dgm(const Dataset& dataset, std::string_view text);

// "true"/"false"/"1"/"0"/"yes"/"no". Throws InvalidArgument.
bool parse_flag(std::string_view name, std::string_view value);

struct PerformanceQuery {
    std::optional<std::vector<std::string>> dgm;
    // Explicit selection: a measure the mapping cannot support is an error.
    // Absent: every measure the mapping supports.
    std::optional<std::vector<Measure>> measures;
    TableFormat format = TableFormat::Json;
    TableStyle style;
};

// Recognised keys: dgm, measures, format, sig_digits, mcse, caption,
// orientation. Others are ignored. Throws InvalidArgument.
PerformanceQuery parse_performance_query(const Dataset& dataset, const Params& params,
                                         const PerformanceQuery& defaults = {});

std::vector<PerformanceEstimate> compute(const Dataset& dataset, const PerformanceQuery& query);

// Tidy records (csv/tsv/json, or wide when requested) or one LaTeX table per
// DGM combination.
std::string render_performance(const Dataset& dataset, const PerformanceQuery& query);

// Missingness summary as csv/tsv rows (variable, DGM columns, method,
// stratum_size, n_missing, prop_missing, n_cumulative) or the JSON view.
// Throws InvalidArgument for latex.
std::string render_missing(const Dataset& dataset, TableFormat format);

// Recognised keys: measure, dgm, method, method_a, method_b, quantity,
// factor_order, ci_level, title, xlab, ylab, theme, width, height, dpi.
PlotSpec parse_plot_spec(const Dataset& dataset, PlotKind kind, const Params& params);

// ---- JSON views ----

Json columns_json(const std::vector<Column>& columns);
Json mapping_to_json(const VariableMapping& mapping);
// Keys: estimate (required), se, true (number) or true_col, method,
// reference, by (array), ci_lower + ci_upper, df, rep, alpha. Throws
// InvalidMapping on malformed input.
VariableMapping mapping_from_json(const Json& j);
Json strata_json(const Dataset& dataset);
Json style_json(const TableStyle& style);

Json missing_table_json(const Dataset& dataset);
Json missing_bar_json(const std::vector<MissingBar>& bars);
Json missing_heat_json(const std::vector<MissingTile>& tiles);
Json shadow_json(const ShadowData& data);
Json missing_matrix_json(const MissingMatrix& m);

// {"kind": ..., "data": ...}; non-finite numbers become null.
Json plot_json(const PlotSpec& spec, const PlotData& data);

// {code, message, detail}; ragged-row errors add "row".
Json error_json(const std::exception& e);

}  // namespace simlens::report
