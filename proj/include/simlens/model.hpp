#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace simlens {

// Missing numeric values are carried as quiet NaN throughout the engine.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return v != v; }

// Header plus row-major cells, text preserved verbatim.
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> find_column(std::string_view name) const;
    // Throws Error(UnknownColumn).
    std::size_t column_index(std::string_view name) const;
};

enum class ColumnKind { Numeric, String };

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::String;
};

// Empty, "NA", "NaN" or "." (case-insensitive, surrounding blanks ignored).
bool is_missing_marker(std::string_view cell) noexcept;

// Finite decimal value of a cell; nullopt for missing markers and anything
// that is not a complete numeric literal.
std::optional<double> parse_number(std::string_view cell) noexcept;

// Factor-level order: numeric levels compare numerically and sort before
// non-numeric ones, which compare lexicographically.
bool level_less(std::string_view a, std::string_view b);

struct FixedTruth {
    double value = 0.0;
};
struct TruthColumn {
    std::string name;
};
using TruthSource = std::variant<std::monostate, FixedTruth, TruthColumn>;

struct VariableMapping {
    std::string estimate_col;
    std::optional<std::string> se_col;
    TruthSource truth;
    std::optional<std::string> method_col;
    std::optional<std::string> reference_method;
    std::vector<std::string> dgm_cols;
    std::optional<std::pair<std::string, std::string>> ci_cols;
    std::optional<std::string> df_col;
    // Repetition identifier used to pair methods; when absent the ordinal
    // position within the stratum is used.
    std::optional<std::string> rep_col;
    double alpha = 0.05;

    bool has_truth() const noexcept { return !std::holds_alternative<std::monostate>(truth); }
};

struct RepetitionRecord {
    std::string rep_id;
    std::vector<std::string> dgm_values;
    std::string method;
    double estimate = kMissing;
    double se = kMissing;
    double truth = kMissing;
    double lower = kMissing;
    double upper = kMissing;
    double df = kMissing;
};

struct StratumKey {
    std::vector<std::string> dgm;
    std::string method;

    friend bool operator==(const StratumKey&, const StratumKey&) = default;
};

// DGM factors in declared order, then method; each compared with level_less.
bool stratum_less(const StratumKey& a, const StratumKey& b);
bool dgm_less(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct Stratum {
    StratumKey key;
    std::vector<std::size_t> records;  // indices into Dataset::records()
};

struct StratumCount {
    StratumKey key;
    std::size_t count = 0;
};

// Label of the synthetic method used when no method column is mapped.
inline constexpr std::string_view kImplicitMethod = "all";

// Immutable once built; share freely between readers.
class Dataset {
public:
    const RawTable& raw() const noexcept { return raw_; }
    const std::vector<Column>& columns() const noexcept { return columns_; }
    const std::vector<RepetitionRecord>& records() const noexcept { return records_; }
    const VariableMapping& mapping() const noexcept { return mapping_; }
    const std::vector<Stratum>& strata() const noexcept { return strata_; }

    // Distinct DGM combinations / methods in stratum order.
    std::vector<std::vector<std::string>> dgm_combinations() const;
    std::vector<std::string> methods() const;

    const Stratum* find_stratum(const StratumKey& key) const;
    std::optional<std::size_t> column_of(std::string_view name) const { return raw_.find_column(name); }

    // True when the column feeds a numeric role (estimate, se, truth, bounds, df).
    bool is_numeric_role(std::size_t column) const;

private:
    friend Dataset apply_mapping(RawTable raw, const VariableMapping& mapping);

    RawTable raw_;
    std::vector<Column> columns_;
    std::vector<RepetitionRecord> records_;
    VariableMapping mapping_;
    std::vector<Stratum> strata_;
    std::vector<std::size_t> numeric_role_columns_;
};

// Numeric when every non-missing cell parses as a number.
std::vector<Column> infer_columns(const RawTable& raw);

// Throws Error with UnknownColumn, ArityMismatch, DuplicateColumn,
// InvalidMapping or UnassignableRecord.
Dataset apply_mapping(RawTable raw, const VariableMapping& mapping);

std::vector<StratumCount> enumerate_strata(const Dataset& dataset);

std::string describe(const StratumKey& key);

}  // namespace simlens
