#include "simlens/missingness.hpp"

#include <algorithm>
#include <map>

#include "simlens/error.hpp"

namespace simlens {

namespace {

std::vector<std::size_t> variable_columns(const Dataset& ds) {
    const auto& m = ds.mapping();
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < ds.raw().header.size(); ++c) {
        const auto& name = ds.raw().header[c];
        if (m.method_col && name == *m.method_col) continue;
        if (std::find(m.dgm_cols.begin(), m.dgm_cols.end(), name) != m.dgm_cols.end()) continue;
        out.push_back(c);
    }
    return out;
}

std::size_t count_missing(const Dataset& ds, const std::vector<std::size_t>& rows, std::size_t col) {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return cell_missing(ds, r, col); }));
}

double ratio(std::size_t k, std::size_t n) { return n ? static_cast<double>(k) / static_cast<double>(n) : 0.0; }

std::string join(const std::vector<std::string>& levels) {
    std::string s;
    for (std::size_t i = 0; i < levels.size(); ++i) s += (i ? ", " : "") + levels[i];
    return s;
}

}  // namespace

std::vector<std::string> missingness_variables(const Dataset& ds) {
    std::vector<std::string> out;
    for (auto c : variable_columns(ds)) out.push_back(ds.raw().header[c]);
    return out;
}

bool cell_missing(const Dataset& ds, std::size_t row, std::size_t column) {
    const auto& cell = ds.raw().rows[row][column];
    if (is_missing_marker(cell)) return true;
    return ds.is_numeric_role(column) && !parse_number(cell);
}

std::vector<MissingSummary> missing_table(const Dataset& ds) {
    std::vector<MissingSummary> out;
    for (auto c : variable_columns(ds)) {
        std::size_t cumulative = 0;
        for (const auto& s : ds.strata()) {
            MissingSummary m;
            m.variable = ds.raw().header[c];
            m.stratum = s.key;
            m.stratum_size = s.records.size();
            m.n_missing = count_missing(ds, s.records, c);
            m.prop_missing = ratio(m.n_missing, m.stratum_size);
            cumulative += m.n_missing;
            m.n_cumulative = cumulative;
            out.push_back(std::move(m));
        }
    }
    return out;
}

std::vector<MissingBar> missing_bar_data(const Dataset& ds, MissingGroupBy by) {
    // Group strata by method or by DGM combination, keeping first-seen order
    // (which is stratum order, hence deterministic).
    std::vector<std::string> groups;
    std::vector<std::vector<std::size_t>> rows;
    std::map<std::string, std::size_t> index;
    for (const auto& s : ds.strata()) {
        const std::string g = by == MissingGroupBy::Method ? s.key.method : join(s.key.dgm);
        auto [it, fresh] = index.try_emplace(g, groups.size());
        if (fresh) {
            groups.push_back(g);
            rows.emplace_back();
        }
        auto& bucket = rows[it->second];
        bucket.insert(bucket.end(), s.records.begin(), s.records.end());
    }
    // Stratum order is DGM-major, so DGM groups arrive sorted; methods do not.
    if (by == MissingGroupBy::Method) {
        std::vector<std::size_t> order(groups.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return level_less(groups[a], groups[b]); });
        std::vector<std::string> g2;
        std::vector<std::vector<std::size_t>> r2;
        for (auto i : order) {
            g2.push_back(groups[i]);
            r2.push_back(std::move(rows[i]));
        }
        groups = std::move(g2);
        rows = std::move(r2);
    }

    std::vector<MissingBar> out;
    for (auto c : variable_columns(ds))
        for (std::size_t g = 0; g < groups.size(); ++g) {
            MissingBar b;
            b.variable = ds.raw().header[c];
            b.group = groups[g];
            b.n_total = rows[g].size();
            b.n_missing = count_missing(ds, rows[g], c);
            b.prop_missing = ratio(b.n_missing, b.n_total);
            out.push_back(std::move(b));
        }
    return out;
}

std::vector<MissingTile> missing_heat_data(const Dataset& ds, std::string variable) {
    if (variable.empty()) variable = ds.mapping().estimate_col;
    const auto cols = variable_columns(ds);
    const std::size_t col = ds.raw().column_index(variable);
    if (std::find(cols.begin(), cols.end(), col) == cols.end())
        throw Error(ErrorCode::InvalidArgument, "grouping columns have no missingness statistic", variable);
    std::vector<MissingTile> out;
    for (const auto& s : ds.strata()) {
        MissingTile t;
        t.method = s.key.method;
        t.dgm = s.key.dgm;
        t.n_total = s.records.size();
        t.n_missing = count_missing(ds, s.records, col);
        t.percent = 100.0 * ratio(t.n_missing, t.n_total);
        out.push_back(std::move(t));
    }
    return out;
}

ShadowData shadow_scatter_data(const Dataset& ds, const std::string& xvar, const std::string& yvar) {
    const std::size_t cx = ds.raw().column_index(xvar);
    const std::size_t cy = ds.raw().column_index(yvar);
    for (auto c : {cx, cy})
        if (ds.columns()[c].kind != ColumnKind::Numeric)
            throw Error(ErrorCode::NonNumericVariable, "shadow scatter needs numeric variables", ds.raw().header[c]);

    const std::size_t n = ds.raw().rows.size();
    auto values = [&](std::size_t c, double& imputed) {
        std::vector<double> v(n, kMissing);
        double lo = 0, hi = 0;
        bool any = false;
        for (std::size_t r = 0; r < n; ++r) {
            if (cell_missing(ds, r, c)) continue;
            v[r] = *parse_number(ds.raw().rows[r][c]);
            lo = any ? std::min(lo, v[r]) : v[r];
            hi = any ? std::max(hi, v[r]) : v[r];
            any = true;
        }
        const double range = hi - lo;
        imputed = !any ? 0.0 : range > 0 ? lo - 0.10 * range : lo - 1.0;
        return v;
    };

    ShadowData d;
    d.xvar = xvar;
    d.yvar = yvar;
    const auto xs = values(cx, d.x_imputed);
    const auto ys = values(cy, d.y_imputed);
    d.points.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        ShadowPoint p;
        p.x_missing = is_missing(xs[r]);
        p.y_missing = is_missing(ys[r]);
        p.x = p.x_missing ? d.x_imputed : xs[r];
        p.y = p.y_missing ? d.y_imputed : ys[r];
        d.points.push_back(p);
    }
    return d;
}

MissingMatrix missing_matrix(const Dataset& ds, std::size_t max_blocks) {
    if (max_blocks == 0) throw Error(ErrorCode::InvalidArgument, "max_blocks must be positive");
    MissingMatrix m;
    const auto cols = variable_columns(ds);
    const std::size_t n = ds.raw().rows.size();
    m.block_size = std::max<std::size_t>(1, (n + max_blocks - 1) / max_blocks);
    for (std::size_t s = 0; s < n; s += m.block_size) m.block_starts.push_back(s);
    for (auto c : cols) {
        m.variables.push_back(ds.raw().header[c]);
        std::vector<double> row;
        for (auto start : m.block_starts) {
            const std::size_t end = std::min(n, start + m.block_size);
            std::size_t k = 0;
            for (std::size_t r = start; r < end; ++r) k += cell_missing(ds, r, c);
            row.push_back(ratio(k, end - start));
        }
        m.proportions.push_back(std::move(row));
    }
    return m;
}

}  // namespace simlens
