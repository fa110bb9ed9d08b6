#include "simlens/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "simlens/error.hpp"

namespace simlens {

namespace {

std::string_view trim(std::string_view s) noexcept {
    const auto is_blank = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_blank(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_blank(s.back())) s.remove_suffix(1);
    return s;
}

bool iequals(std::string_view a, std::string_view b) noexcept {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
        if (lower(a[i]) != lower(b[i])) return false;
    }
    return true;
}

int compare_levels(std::string_view a, std::string_view b) {
    const auto na = parse_number(a);
    const auto nb = parse_number(b);
    if (na && nb) {
        if (*na < *nb) return -1;
        if (*nb < *na) return 1;
    } else if (na) {
        return -1;
    } else if (nb) {
        return 1;
    }
    return a.compare(b) < 0 ? -1 : (a == b ? 0 : 1);
}

}  // namespace

std::optional<std::size_t> RawTable::find_column(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
}

std::size_t RawTable::column_index(std::string_view name) const {
    if (const auto idx = find_column(name)) return *idx;
    throw Error(ErrorCode::UnknownColumn, "unknown column '" + std::string(name) + "'",
                "column=" + std::string(name));
}

bool is_missing_marker(std::string_view cell) noexcept {
    cell = trim(cell);
    return cell.empty() || cell == "." || iequals(cell, "na") || iequals(cell, "nan");
}

std::optional<double> parse_number(std::string_view cell) noexcept {
    cell = trim(cell);
    if (is_missing_marker(cell)) return std::nullopt;
    if (cell.front() == '+') cell.remove_prefix(1);
    if (cell.empty()) return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) return std::nullopt;
    if (!std::isfinite(value)) return std::nullopt;
    return value;
}

bool level_less(std::string_view a, std::string_view b) { return compare_levels(a, b) < 0; }

bool dgm_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (const int c = compare_levels(a[i], b[i]); c != 0) return c < 0;
    }
    return a.size() < b.size();
}

bool stratum_less(const StratumKey& a, const StratumKey& b) {
    if (dgm_less(a.dgm, b.dgm)) return true;
    if (dgm_less(b.dgm, a.dgm)) return false;
    return compare_levels(a.method, b.method) < 0;
}

std::string describe(const StratumKey& key) {
    std::string out = "dgm=(";
    for (std::size_t i = 0; i < key.dgm.size(); ++i) {
        if (i) out += ",";
        out += key.dgm[i];
    }
    out += ") method=" + key.method;
    return out;
}

std::vector<std::vector<std::string>> Dataset::dgm_combinations() const {
    std::vector<std::vector<std::string>> out;
    for (const auto& s : strata_) {
        if (out.empty() || out.back() != s.key.dgm) out.push_back(s.key.dgm);
    }
    return out;
}

std::vector<std::string> Dataset::methods() const {
    std::vector<std::string> out;
    for (const auto& s : strata_) {
        if (std::find(out.begin(), out.end(), s.key.method) == out.end()) out.push_back(s.key.method);
    }
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) { return level_less(a, b); });
    return out;
}

const Stratum* Dataset::find_stratum(const StratumKey& key) const {
    const auto it = std::lower_bound(strata_.begin(), strata_.end(), key,
                                     [](const Stratum& s, const StratumKey& k) { return stratum_less(s.key, k); });
    if (it == strata_.end() || !(it->key == key)) return nullptr;
    return &*it;
}

bool Dataset::is_numeric_role(std::size_t column) const {
    return std::find(numeric_role_columns_.begin(), numeric_role_columns_.end(), column) !=
           numeric_role_columns_.end();
}

std::vector<Column> infer_columns(const RawTable& raw) {
    std::vector<Column> columns;
    columns.reserve(raw.header.size());
    for (std::size_t c = 0; c < raw.header.size(); ++c) {
        bool numeric = true;
        for (const auto& row : raw.rows) {
            if (c >= row.size()) continue;
            if (!is_missing_marker(row[c]) && !parse_number(row[c])) {
                numeric = false;
                break;
            }
        }
        columns.push_back({raw.header[c], numeric ? ColumnKind::Numeric : ColumnKind::String});
    }
    return columns;
}

Dataset apply_mapping(RawTable raw, const VariableMapping& mapping) {
    {
        std::set<std::string_view> seen;
        for (const auto& name : raw.header) {
            if (!seen.insert(name).second) {
                throw Error(ErrorCode::DuplicateColumn, "duplicate column '" + name + "'", "column=" + name);
            }
        }
    }
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        if (raw.rows[r].size() != raw.header.size()) {
            throw Error(ErrorCode::ArityMismatch,
                        "row " + std::to_string(r + 1) + " has " + std::to_string(raw.rows[r].size()) +
                            " cells, expected " + std::to_string(raw.header.size()),
                        "row=" + std::to_string(r + 1));
        }
    }
    if (!(mapping.alpha > 0.0 && mapping.alpha < 1.0)) {
        throw Error(ErrorCode::InvalidMapping, "alpha must lie strictly between 0 and 1");
    }
    if (mapping.ci_cols && mapping.df_col) {
        throw Error(ErrorCode::InvalidMapping,
                    "confidence-bound columns and a degrees-of-freedom column are mutually exclusive");
    }
    if (mapping.reference_method && !mapping.method_col) {
        throw Error(ErrorCode::InvalidMapping, "a reference method requires a method column");
    }
    if (mapping.method_col &&
        std::find(mapping.dgm_cols.begin(), mapping.dgm_cols.end(), *mapping.method_col) != mapping.dgm_cols.end()) {
        throw Error(ErrorCode::InvalidMapping, "the method column cannot also be a DGM column");
    }

    const auto idx = [&](const std::string& name) { return raw.column_index(name); };
    const auto opt_idx = [&](const std::optional<std::string>& name) -> std::optional<std::size_t> {
        if (!name) return std::nullopt;
        return idx(*name);
    };

    const std::size_t est = idx(mapping.estimate_col);
    const auto se = opt_idx(mapping.se_col);
    const auto method = opt_idx(mapping.method_col);
    const auto df = opt_idx(mapping.df_col);
    const auto rep = opt_idx(mapping.rep_col);
    std::optional<std::size_t> truth_col;
    if (const auto* tc = std::get_if<TruthColumn>(&mapping.truth)) truth_col = idx(tc->name);
    std::optional<std::pair<std::size_t, std::size_t>> ci;
    if (mapping.ci_cols) ci = std::pair{idx(mapping.ci_cols->first), idx(mapping.ci_cols->second)};
    std::vector<std::size_t> dgm;
    for (const auto& name : mapping.dgm_cols) dgm.push_back(idx(name));

    Dataset ds;
    ds.mapping_ = mapping;
    ds.columns_ = infer_columns(raw);
    ds.numeric_role_columns_.push_back(est);
    for (const auto& c : {se, df, truth_col}) {
        if (c) ds.numeric_role_columns_.push_back(*c);
    }
    if (ci) {
        ds.numeric_role_columns_.push_back(ci->first);
        ds.numeric_role_columns_.push_back(ci->second);
    }

    const auto number = [](const std::string& cell) { return parse_number(cell).value_or(kMissing); };
    const double fixed_truth = std::holds_alternative<FixedTruth>(mapping.truth)
                                   ? std::get<FixedTruth>(mapping.truth).value
                                   : kMissing;

    ds.records_.reserve(raw.rows.size());
    std::map<StratumKey, std::size_t, decltype(&stratum_less)> stratum_of(&stratum_less);
    std::vector<std::vector<std::size_t>> members;

    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& row = raw.rows[r];
        RepetitionRecord rec;
        const auto level = [&](std::size_t c) -> const std::string& {
            if (is_missing_marker(row[c])) {
                throw Error(ErrorCode::UnassignableRecord,
                            "row " + std::to_string(r + 1) + " has no level for grouping column '" + raw.header[c] +
                                "'",
                            "row=" + std::to_string(r + 1) + ";column=" + raw.header[c]);
            }
            return row[c];
        };
        for (const auto c : dgm) rec.dgm_values.push_back(level(c));
        rec.method = method ? level(*method) : std::string(kImplicitMethod);
        rec.estimate = number(row[est]);
        if (se) {
            rec.se = number(row[*se]);
            if (!is_missing(rec.se) && rec.se < 0.0) rec.se = kMissing;
        }
        rec.truth = truth_col ? number(row[*truth_col]) : fixed_truth;
        if (ci) {
            rec.lower = number(row[ci->first]);
            rec.upper = number(row[ci->second]);
            if (!is_missing(rec.lower) && !is_missing(rec.upper) && rec.lower > rec.upper) {
                rec.lower = kMissing;
                rec.upper = kMissing;
            }
        }
        if (df) {
            rec.df = number(row[*df]);
            if (!is_missing(rec.df) && rec.df <= 0.0) rec.df = kMissing;
        }

        StratumKey key{rec.dgm_values, rec.method};
        auto [it, inserted] = stratum_of.try_emplace(std::move(key), members.size());
        if (inserted) members.emplace_back();
        auto& bucket = members[it->second];
        rec.rep_id = rep ? row[*rep] : std::to_string(bucket.size() + 1);
        bucket.push_back(ds.records_.size());
        ds.records_.push_back(std::move(rec));
    }

    if (mapping.reference_method) {
        const bool known = std::any_of(ds.records_.begin(), ds.records_.end(),
                                       [&](const RepetitionRecord& r) { return r.method == *mapping.reference_method; });
        if (!known) {
            throw Error(ErrorCode::InvalidMapping,
                        "reference method '" + *mapping.reference_method + "' is not a level of '" +
                            *mapping.method_col + "'");
        }
    }

    ds.strata_.reserve(stratum_of.size());
    for (auto& [key, slot] : stratum_of) ds.strata_.push_back({key, std::move(members[slot])});
    ds.raw_ = std::move(raw);
    return ds;
}

std::vector<StratumCount> enumerate_strata(const Dataset& dataset) {
    std::vector<StratumCount> out;
    out.reserve(dataset.strata().size());
    for (const auto& s : dataset.strata()) out.push_back({s.key, s.records.size()});
    return out;
}

}  // namespace simlens
