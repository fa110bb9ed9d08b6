#include "simlens/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>

#include "simlens/error.hpp"

namespace simlens {

namespace {

std::string fixed(double v, int decimals) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    // Never print a negative zero.
    if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

int decimals_for(double v, int sig) {
    const double a = std::fabs(v);
    if (a == 0.0) return sig;
    int e = static_cast<int>(std::floor(std::log10(a)));
    int d = std::max(0, sig - 1 - std::max(e, -1));
    // Rounding can carry into the next decade (9.9996 -> 10.00).
    if (std::fabs(std::stod(fixed(v, d))) >= std::pow(10.0, e + 1)) d = std::max(0, sig - 1 - std::max(e + 1, -1));
    return d;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string latex_escape(std::string_view s) {
    std::string out;
    for (char c : s) switch (c) {
            case '&': case '%': case '$': case '#': case '_': case '{': case '}':
                out += '\\';
                out += c;
                break;
            case '~': out += "\\textasciitilde{}"; break;
            case '^': out += "\\textasciicircum{}"; break;
            case '\\': out += "\\textbackslash{}"; break;
            default: out += c;
        }
    return out;
}

std::string percent(double level) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", level * 100.0);
    return buf;
}

std::string csv_quote(const std::string& cell, char delim) {
    if (cell.find_first_of(std::string("\"\r\n") + delim) == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string write_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                       char delim) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        // A lone empty cell would read back as a blank line, which is skipped.
        if (cells.size() == 1 && cells[0].empty()) {
            out += "\"\"\n";
            return;
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += delim;
            out += csv_quote(cells[i], delim);
        }
        out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
}

// Distinct DGM combinations and methods present, each in level order.
struct Layout {
    std::vector<std::vector<std::string>> dgms;
    std::vector<std::string> methods;
    std::vector<Measure> measures;
};

Layout layout_of(const std::vector<const PerformanceEstimate*>& rows) {
    Layout l;
    for (const auto* e : rows) {
        if (std::find(l.dgms.begin(), l.dgms.end(), e->stratum.dgm) == l.dgms.end()) l.dgms.push_back(e->stratum.dgm);
        if (std::find(l.methods.begin(), l.methods.end(), e->stratum.method) == l.methods.end())
            l.methods.push_back(e->stratum.method);
    }
    std::sort(l.dgms.begin(), l.dgms.end(), dgm_less);
    std::sort(l.methods.begin(), l.methods.end(), [](const auto& a, const auto& b) { return level_less(a, b); });
    for (Measure m : kAllMeasures)
        if (std::any_of(rows.begin(), rows.end(), [&](const auto* e) { return e->measure == m; }))
            l.measures.push_back(m);
    return l;
}

const PerformanceEstimate* find(const std::vector<const PerformanceEstimate*>& rows, const std::vector<std::string>& dgm,
                                const std::string& method, Measure m) {
    for (const auto* e : rows)
        if (e->measure == m && e->stratum.method == method && e->stratum.dgm == dgm) return e;
    return nullptr;
}

std::string cell_text(const PerformanceEstimate* e, const TableStyle& style) {
    if (!e || !e->value) return "";
    return format_cell(*e->value, e->mcse, style);
}

std::vector<const PerformanceEstimate*> select(const EstimateTable& t, const std::optional<std::vector<std::string>>& dgm) {
    std::vector<const PerformanceEstimate*> rows;
    for (const auto& e : t.estimates)
        if (!dgm || e.stratum.dgm == *dgm) rows.push_back(&e);
    if (rows.empty()) throw Error(ErrorCode::EmptySelection, "no performance estimates to export");
    return rows;
}

}  // namespace

std::string format_cell(double value, std::optional<double> mcse, const TableStyle& style) {
    if (!std::isfinite(value) || (mcse && !std::isfinite(*mcse)))
        throw Error(ErrorCode::NonFinite, "cannot format a non-finite value");
    if (style.sig_digits < 1) throw Error(ErrorCode::InvalidArgument, "sig_digits must be at least 1");
    const int d = decimals_for(value, style.sig_digits);
    std::string s = fixed(value, d);
    if (mcse && style.include_mcse) s += " (" + fixed(*mcse, d) + ")";
    return s;
}

EstimateTable make_estimate_table(const Dataset& dataset, std::vector<PerformanceEstimate> estimates) {
    EstimateTable t;
    t.dgm_names = dataset.mapping().dgm_cols;
    t.method_name = dataset.mapping().method_col.value_or("method");
    t.estimates = std::move(estimates);
    return t;
}

std::string measure_label(Measure m, double alpha) {
    const std::string level = percent(1.0 - alpha);
    switch (m) {
        case Measure::Bias: return "Bias in point estimate";
        case Measure::EmpSE: return "Empirical standard error";
        case Measure::ModSE: return "Model-based standard error";
        case Measure::MSE: return "Mean squared error";
        case Measure::Coverage: return "Coverage of nominal " + level + "% confidence interval";
        case Measure::BECoverage: return "Bias-eliminated coverage of nominal " + level + "% confidence interval";
        case Measure::Power: return "Power of " + percent(alpha) + "% level test";
        case Measure::RelPrec: return "Relative % increase in precision";
        case Measure::MeanEst: return "Mean of point estimates";
        case Measure::MedianEst: return "Median of point estimates";
        case Measure::MeanSqErr: return "Mean of squared errors";
        case Measure::MedianSqErr: return "Median of squared errors";
    }
    return "";
}

std::string to_latex(const EstimateTable& table, const std::optional<std::vector<std::string>>& dgm,
                     const TableStyle& style) {
    const auto rows = select(table, dgm);
    const Layout l = layout_of(rows);
    std::string out;
    for (std::size_t k = 0; k < l.dgms.size(); ++k) {
        if (k) out += '\n';
        out += "\\begin{table}\n\\centering\n";
        if (!style.caption.empty()) out += "\\caption{" + latex_escape(style.caption) + "}\n";
        out += "\\begin{tabular}[t]{l" + std::string(l.methods.size(), 'l') + "}\n\\toprule\n";
        out += "Performance Measure";
        for (const auto& m : l.methods) out += " & " + latex_escape(m);
        out += "\\\\\n\\midrule\n";
        for (Measure m : l.measures) {
            std::string line = latex_escape(measure_label(m, style.alpha));
            bool any = false;
            for (const auto& method : l.methods) {
                const auto* e = find(rows, l.dgms[k], method, m);
                any = any || e;
                line += " & " + cell_text(e, style);
            }
            if (any) out += line + "\\\\\n";
        }
        out += "\\bottomrule\n\\end{tabular}\n\\end{table}\n";
    }
    return out;
}

std::string to_delimited(const EstimateTable& table, TextFormat format, const TableStyle& style) {
    const auto rows = select(table, std::nullopt);

    if (style.orientation == Orientation::Tidy) {
        if (format == TextFormat::JsonRecords) {
            nlohmann::ordered_json arr = nlohmann::ordered_json::array();
            for (const auto* e : rows) {
                nlohmann::ordered_json o;
                for (std::size_t i = 0; i < table.dgm_names.size() && i < e->stratum.dgm.size(); ++i)
                    o[table.dgm_names[i]] = e->stratum.dgm[i];
                o[table.method_name] = e->stratum.method;
                o["measure"] = measure_name(e->measure);
                o["value"] = e->value ? nlohmann::ordered_json(*e->value) : nlohmann::ordered_json(nullptr);
                o["mcse"] = e->mcse ? nlohmann::ordered_json(*e->mcse) : nlohmann::ordered_json(nullptr);
                o["n_used"] = e->n_used;
                arr.push_back(std::move(o));
            }
            return arr.dump(2) + "\n";
        }
        std::vector<std::string> header = table.dgm_names;
        header.insert(header.end(), {table.method_name, "measure", "value", "mcse", "n_used"});
        std::vector<std::vector<std::string>> out;
        for (const auto* e : rows) {
            std::vector<std::string> r = e->stratum.dgm;
            r.push_back(e->stratum.method);
            r.emplace_back(measure_name(e->measure));
            r.push_back(e->value ? fmt17(*e->value) : "");
            r.push_back(e->mcse ? fmt17(*e->mcse) : "");
            r.push_back(std::to_string(e->n_used));
            out.push_back(std::move(r));
        }
        return write_rows(header, out, format == TextFormat::Tsv ? '\t' : ',');
    }

    const Layout l = layout_of(rows);
    const bool with_dgm = l.dgms.size() > 1;
    std::vector<std::string> header;
    if (with_dgm) header = table.dgm_names;
    header.emplace_back("Performance Measure");
    header.insert(header.end(), l.methods.begin(), l.methods.end());
    std::vector<std::vector<std::string>> out;
    for (const auto& dgm : l.dgms)
        for (Measure m : l.measures) {
            std::vector<std::string> r;
            if (with_dgm) r = dgm;
            r.push_back(measure_label(m, style.alpha));
            for (const auto& method : l.methods) r.push_back(cell_text(find(rows, dgm, method, m), style));
            out.push_back(std::move(r));
        }
    if (format == TextFormat::JsonRecords) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& r : out) {
            nlohmann::ordered_json o;
            for (std::size_t i = 0; i < header.size(); ++i) o[header[i]] = r[i];
            arr.push_back(std::move(o));
        }
        return arr.dump(2) + "\n";
    }
    return write_rows(header, out, format == TextFormat::Tsv ? '\t' : ',');
}

EstimateTable estimates_from_table(const RawTable& tidy) {
    const auto& h = tidy.header;
    const std::size_t n = h.size();
    if (n < 5 || h[n - 4] != "measure" || h[n - 3] != "value" || h[n - 2] != "mcse" || h[n - 1] != "n_used")
        throw Error(ErrorCode::InvalidArgument, "not a tidy performance table",
                    "expected trailing columns measure,value,mcse,n_used");
    EstimateTable t;
    t.dgm_names.assign(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(n - 5));
    t.method_name = h[n - 5];
    for (const auto& r : tidy.rows) {
        PerformanceEstimate e;
        e.stratum.dgm.assign(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(n - 5));
        e.stratum.method = r[n - 5];
        const auto m = parse_measure(r[n - 4]);
        if (!m) throw Error(ErrorCode::InvalidArgument, "unknown measure", r[n - 4]);
        e.measure = *m;
        if (auto v = parse_number(r[n - 3])) e.value = *v;
        if (auto v = parse_number(r[n - 2])) e.mcse = *v;
        const auto used = parse_number(r[n - 1]);
        if (!used || *used < 0) throw Error(ErrorCode::InvalidArgument, "bad n_used", r[n - 1]);
        e.n_used = static_cast<std::size_t>(*used);
        t.estimates.push_back(std::move(e));
    }
    return t;
}

std::string to_delimited(const RawTable& table, TextFormat format) {
    if (format != TextFormat::JsonRecords)
        return write_rows(table.header, table.rows, format == TextFormat::Tsv ? '\t' : ',');
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
        nlohmann::ordered_json o;
        for (std::size_t i = 0; i < table.header.size(); ++i)
            o[table.header[i]] = is_missing_marker(r[i]) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r[i]);
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

std::string_view content_type(TextFormat format) {
    switch (format) {
        case TextFormat::Csv: return "text/csv; charset=utf-8";
        case TextFormat::Tsv: return "text/tab-separated-values; charset=utf-8";
        case TextFormat::JsonRecords: return "application/json";
    }
    return "application/octet-stream";
}

}  // namespace simlens
