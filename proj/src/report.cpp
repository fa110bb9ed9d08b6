#include "simlens/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "simlens/error.hpp"

namespace simlens::report {

namespace {

std::vector<std::string> split_commas(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        auto token = s.substr(start, end - start);
        while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
        while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
        out.emplace_back(token);
        start = end + 1;
    }
    return out;
}

const std::string* find(const Params& p, std::string_view key) {
    const auto it = p.find(key);
    return it == p.end() ? nullptr : &it->second;
}

int parse_int(std::string_view name, const std::string& v, int lo, int hi) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || out < lo || out > hi)
        throw Error(ErrorCode::InvalidArgument,
                    std::string(name) + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
                    v);
    return out;
}

double parse_double(std::string_view name, const std::string& v) {
    const auto d = parse_number(v);
    if (!d || !std::isfinite(*d)) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be a number", v);
    return *d;
}

Measure parse_one_measure(const std::string& v) {
    const auto m = parse_measure(v);
    if (!m) throw Error(ErrorCode::InvalidArgument, "unknown measure '" + v + "'");
    return *m;
}

Json opt_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

template <class T>
Json opt_string(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

Json key_json(const StratumKey& k) { return Json{{"dgm", k.dgm}, {"method", k.method}}; }

}  // namespace

std::optional<TableFormat> parse_table_format(std::string_view s) {
    if (s == "csv") return TableFormat::Csv;
    if (s == "tsv") return TableFormat::Tsv;
    if (s == "json") return TableFormat::Json;
    if (s == "latex" || s == "tex") return TableFormat::Latex;
    return std::nullopt;
}

std::string_view content_type(TableFormat f) {
    switch (f) {
        case TableFormat::Csv: return simlens::content_type(TextFormat::Csv);
        case TableFormat::Tsv: return simlens::content_type(TextFormat::Tsv);
        case TableFormat::Json: return simlens::content_type(TextFormat::JsonRecords);
        case TableFormat::Latex: return "application/x-latex; charset=utf-8";
    }
    return "application/octet-stream";
}

std::string_view file_extension(TableFormat f) {
    switch (f) {
        case TableFormat::Csv: return "csv";
        case TableFormat::Tsv: return "tsv";
        case TableFormat::Json: return "json";
        case TableFormat::Latex: return "tex";
    }
    return "txt";
}

std::vector<std::string> resolve_dgm(const Dataset& ds, std::string_view text) {
    const auto& names = ds.mapping().dgm_cols;
    if (names.empty()) throw Error(ErrorCode::InvalidArgument, "the mapping declares no DGM columns", std::string(text));
    auto levels = names.size() == 1 ? std::vector<std::string>{std::string(text)} : split_commas(text);
    if (levels.size() != names.size())
        throw Error(ErrorCode::InvalidArgument,
                    "a DGM needs " + std::to_string(names.size()) + " comma-separated levels", std::string(text));
    const auto combos = ds.dgm_combinations();
    if (std::find(combos.begin(), combos.end(), levels) == combos.end())
        throw Error(ErrorCode::InvalidArgument, "unknown DGM", std::string(text));
    return levels;
}

bool parse_flag(std::string_view name, std::string_view v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be true or false", std::string(v));
}

PerformanceQuery parse_performance_query(const Dataset& ds, const Params& p, const PerformanceQuery& defaults) {
    PerformanceQuery q = defaults;
    if (const auto* v = find(p, "dgm"); v && !v->empty()) q.dgm = resolve_dgm(ds, *v);
    if (const auto* v = find(p, "measures"); v && !v->empty()) {
        q.measures = parse_measure_list(*v);
        if (q.measures->empty()) q.measures.reset();
    }
    if (const auto* v = find(p, "format"); v && !v->empty()) {
        const auto f = parse_table_format(*v);
        if (!f) throw Error(ErrorCode::InvalidArgument, "format must be csv, tsv, json or latex", *v);
        q.format = *f;
    }
    if (const auto* v = find(p, "sig_digits")) q.style.sig_digits = parse_int("sig_digits", *v, 1, 15);
    if (const auto* v = find(p, "mcse")) q.style.include_mcse = parse_flag("mcse", *v);
    if (const auto* v = find(p, "caption")) q.style.caption = *v;
    if (const auto* v = find(p, "orientation")) {
        if (*v == "tidy")
            q.style.orientation = Orientation::Tidy;
        else if (*v == "wide")
            q.style.orientation = Orientation::Wide;
        else
            throw Error(ErrorCode::InvalidArgument, "orientation must be tidy or wide", *v);
    }
    q.style.alpha = ds.mapping().alpha;
    return q;
}

std::vector<PerformanceEstimate> compute(const Dataset& ds, const PerformanceQuery& q) {
    ComputeOptions opt;
    if (q.measures) {
        opt.measures = *q.measures;
        opt.strict = true;
    }
    opt.dgm = q.dgm;
    return compute_all(ds, opt);
}

std::string render_performance(const Dataset& ds, const PerformanceQuery& q) {
    const auto table = make_estimate_table(ds, compute(ds, q));
    switch (q.format) {
        case TableFormat::Latex: return to_latex(table, q.dgm, q.style);
        case TableFormat::Csv: return to_delimited(table, TextFormat::Csv, q.style);
        case TableFormat::Tsv: return to_delimited(table, TextFormat::Tsv, q.style);
        case TableFormat::Json: return to_delimited(table, TextFormat::JsonRecords, q.style);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown table format");
}

std::string render_missing(const Dataset& ds, TableFormat format) {
    if (format == TableFormat::Json) return missing_table_json(ds).dump(2) + "\n";
    if (format == TableFormat::Latex) throw Error(ErrorCode::InvalidArgument, "missingness tables export as csv, tsv or json");
    RawTable t;
    t.header = {"variable"};
    for (const auto& d : ds.mapping().dgm_cols) t.header.push_back(d);
    t.header.push_back(ds.mapping().method_col.value_or("method"));
    t.header.insert(t.header.end(), {"stratum_size", "n_missing", "prop_missing", "n_cumulative"});
    char buf[32];
    for (const auto& m : missing_table(ds)) {
        std::vector<std::string> row{m.variable};
        row.insert(row.end(), m.stratum.dgm.begin(), m.stratum.dgm.end());
        row.push_back(m.stratum.method);
        row.push_back(std::to_string(m.stratum_size));
        row.push_back(std::to_string(m.n_missing));
        std::snprintf(buf, sizeof buf, "%.17g", m.prop_missing);
        row.emplace_back(buf);
        row.push_back(std::to_string(m.n_cumulative));
        t.rows.push_back(std::move(row));
    }
    return to_delimited(t, format == TableFormat::Csv ? TextFormat::Csv : TextFormat::Tsv);
}

PlotSpec parse_plot_spec(const Dataset& ds, PlotKind kind, const Params& p) {
    PlotSpec s;
    s.kind = kind;
    if (const auto* v = find(p, "measure"); v && !v->empty()) s.measure = parse_one_measure(*v);
    if (const auto* v = find(p, "dgm"); v && !v->empty()) s.dgm = resolve_dgm(ds, *v);
    const auto methods = ds.methods();
    auto method = [&](const char* key) -> std::optional<std::string> {
        const auto* v = find(p, key);
        if (!v || v->empty()) return std::nullopt;
        if (std::find(methods.begin(), methods.end(), *v) == methods.end())
            throw Error(ErrorCode::InvalidArgument, "unknown method", *v);
        return *v;
    };
    s.method = method("method");
    s.method_a = method("method_a");
    s.method_b = method("method_b");
    if (const auto* v = find(p, "quantity"); v && !v->empty()) {
        if (*v == "estimate")
            s.quantity = Quantity::Estimate;
        else if (*v == "se")
            s.quantity = Quantity::SE;
        else
            throw Error(ErrorCode::InvalidArgument, "quantity must be estimate or se", *v);
    }
    if (const auto* v = find(p, "factor_order"); v && !v->empty()) s.factor_order = split_commas(*v);
    if (const auto* v = find(p, "ci_level")) s.ci_level = parse_double("ci_level", *v);
    if (const auto* v = find(p, "title")) s.title = *v;
    if (const auto* v = find(p, "xlab")) s.xlab = *v;
    if (const auto* v = find(p, "ylab")) s.ylab = *v;
    if (const auto* v = find(p, "theme"); v && !v->empty()) {
        if (!is_known_theme(*v)) throw Error(ErrorCode::InvalidArgument, "unknown theme", *v);
        s.theme = *v;
    }
    if (const auto* v = find(p, "width")) s.width = parse_int("width", *v, 100, 10000);
    if (const auto* v = find(p, "height")) s.height = parse_int("height", *v, 100, 10000);
    if (const auto* v = find(p, "dpi")) s.dpi = parse_int("dpi", *v, 10, 2400);
    return s;
}

Json columns_json(const std::vector<Column>& columns) {
    Json out = Json::array();
    for (const auto& c : columns)
        out.push_back({{"name", c.name}, {"kind", c.kind == ColumnKind::Numeric ? "numeric" : "string"}});
    return out;
}

Json mapping_to_json(const VariableMapping& m) {
    Json j;
    j["estimate"] = m.estimate_col;
    j["se"] = opt_string(m.se_col);
    if (const auto* f = std::get_if<FixedTruth>(&m.truth))
        j["true"] = f->value;
    else
        j["true"] = nullptr;
    if (const auto* c = std::get_if<TruthColumn>(&m.truth))
        j["true_col"] = c->name;
    else
        j["true_col"] = nullptr;
    j["method"] = opt_string(m.method_col);
    j["reference"] = opt_string(m.reference_method);
    j["by"] = m.dgm_cols;
    j["ci_lower"] = m.ci_cols ? Json(m.ci_cols->first) : Json(nullptr);
    j["ci_upper"] = m.ci_cols ? Json(m.ci_cols->second) : Json(nullptr);
    j["df"] = opt_string(m.df_col);
    j["rep"] = opt_string(m.rep_col);
    j["alpha"] = m.alpha;
    return j;
}

VariableMapping mapping_from_json(const Json& j) {
    auto bad = [](const std::string& what) { return Error(ErrorCode::InvalidMapping, "malformed mapping", what); };
    if (!j.is_object()) throw bad("expected a JSON object");
    static const std::vector<std::string> known = {"estimate", "se",       "true", "true_col", "method", "reference",
                                                   "by",       "ci_lower", "ci_upper", "df", "rep", "alpha"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw bad("unknown key '" + k + "'");

    auto str = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        if (!j[key].is_string()) throw bad(std::string(key) + " must be a string");
        auto s = j[key].get<std::string>();
        if (s.empty()) return std::nullopt;
        return s;
    };
    VariableMapping m;
    const auto est = str("estimate");
    if (!est) throw bad("estimate is required");
    m.estimate_col = *est;
    m.se_col = str("se");
    if (j.contains("true") && !j["true"].is_null()) {
        if (!j["true"].is_number()) throw bad("true must be a number");
        m.truth = FixedTruth{j["true"].get<double>()};
    }
    if (const auto c = str("true_col")) {
        if (m.has_truth()) throw bad("give either true or true_col, not both");
        m.truth = TruthColumn{*c};
    }
    m.method_col = str("method");
    m.reference_method = str("reference");
    if (j.contains("by") && !j["by"].is_null()) {
        if (j["by"].is_string()) {
            for (auto& s : split_commas(j["by"].get<std::string>()))
                if (!s.empty()) m.dgm_cols.push_back(std::move(s));
        } else if (j["by"].is_array()) {
            for (const auto& v : j["by"]) {
                if (!v.is_string()) throw bad("by must list column names");
                m.dgm_cols.push_back(v.get<std::string>());
            }
        } else {
            throw bad("by must list column names");
        }
    }
    const auto lo = str("ci_lower"), hi = str("ci_upper");
    if (lo.has_value() != hi.has_value()) throw bad("ci_lower and ci_upper go together");
    if (lo) m.ci_cols = std::pair{*lo, *hi};
    m.df_col = str("df");
    m.rep_col = str("rep");
    if (j.contains("alpha") && !j["alpha"].is_null()) {
        if (!j["alpha"].is_number()) throw bad("alpha must be a number");
        m.alpha = j["alpha"].get<double>();
    }
    return m;
}

Json strata_json(const Dataset& ds) {
    Json j;
    j["dgm_names"] = ds.mapping().dgm_cols;
    j["methods"] = ds.methods();
    j["dgm_combinations"] = ds.dgm_combinations();
    Json strata = Json::array();
    for (const auto& c : enumerate_strata(ds))
        strata.push_back({{"dgm", c.key.dgm}, {"method", c.key.method}, {"n", c.count}});
    j["strata"] = std::move(strata);
    j["n_records"] = ds.records().size();
    return j;
}

Json style_json(const TableStyle& s) {
    return Json{{"sig_digits", s.sig_digits},
                {"include_mcse", s.include_mcse},
                {"caption", s.caption},
                {"orientation", s.orientation == Orientation::Tidy ? "tidy" : "wide"}};
}

Json missing_table_json(const Dataset& ds) {
    Json rows = Json::array();
    std::size_t total = 0;
    for (const auto& m : missing_table(ds)) {
        total += m.n_missing;
        Json r = key_json(m.stratum);
        r["variable"] = m.variable;
        r["stratum_size"] = m.stratum_size;
        r["n_missing"] = m.n_missing;
        r["prop_missing"] = m.prop_missing;
        r["n_cumulative"] = m.n_cumulative;
        rows.push_back(std::move(r));
    }
    return Json{{"variables", missingness_variables(ds)}, {"total_missing", total}, {"rows", std::move(rows)}};
}

Json missing_bar_json(const std::vector<MissingBar>& bars) {
    Json out = Json::array();
    for (const auto& b : bars)
        out.push_back({{"variable", b.variable},
                       {"group", b.group},
                       {"n_missing", b.n_missing},
                       {"n_total", b.n_total},
                       {"prop_missing", b.prop_missing}});
    return out;
}

Json missing_heat_json(const std::vector<MissingTile>& tiles) {
    Json out = Json::array();
    for (const auto& t : tiles)
        out.push_back({{"dgm", t.dgm},
                       {"method", t.method},
                       {"n_missing", t.n_missing},
                       {"n_total", t.n_total},
                       {"percent", t.percent}});
    return out;
}

Json shadow_json(const ShadowData& d) {
    Json pts = Json::array();
    for (const auto& p : d.points)
        pts.push_back({{"x", p.x}, {"y", p.y}, {"x_missing", p.x_missing}, {"y_missing", p.y_missing}});
    return Json{{"xvar", d.xvar},
                {"yvar", d.yvar},
                {"x_imputed", d.x_imputed},
                {"y_imputed", d.y_imputed},
                {"points", std::move(pts)}};
}

Json missing_matrix_json(const MissingMatrix& m) {
    return Json{{"variables", m.variables},
                {"block_size", m.block_size},
                {"block_starts", m.block_starts},
                {"proportions", m.proportions}};
}

namespace {

Json data_json(const std::vector<EstimatePairs>& groups) {
    Json out = Json::array();
    for (const auto& g : groups) {
        Json pts = Json::array();
        for (const auto& p : g.points) pts.push_back({{"rep", p.rep_id}, {"a", p.a}, {"b", p.b}});
        out.push_back({{"dgm", g.dgm},
                       {"method_a", g.method_a},
                       {"method_b", g.method_b},
                       {"dropped", g.dropped},
                       {"points", std::move(pts)}});
    }
    return out;
}

Json data_json(const std::vector<BlandAltmanData>& groups) {
    Json out = Json::array();
    for (const auto& g : groups) {
        Json pts = Json::array();
        for (const auto& p : g.points) pts.push_back({{"mean", p.mean}, {"diff", p.diff}});
        out.push_back({{"dgm", g.dgm},
                       {"mean_diff", g.mean_diff},
                       {"sd_diff", opt_number(g.sd_diff)},
                       {"lower", opt_number(g.lower)},
                       {"upper", opt_number(g.upper)},
                       {"points", std::move(pts)}});
    }
    return out;
}

Json data_json(const std::vector<RidgelineGroup>& groups) {
    Json out = Json::array();
    for (const auto& g : groups)
        out.push_back({{"dgm", g.dgm},
                       {"method", g.method},
                       {"raw_only", g.raw_only},
                       {"bandwidth", g.bandwidth},
                       {"sample", g.sample},
                       {"grid", g.grid},
                       {"density", g.density}});
    return out;
}

Json data_json(const std::vector<ForestRow>& rows) {
    Json out = Json::array();
    for (const auto& r : rows)
        out.push_back({{"dgm", r.dgm},
                       {"method", r.method},
                       {"value", r.value},
                       {"mcse", r.mcse},
                       {"half_width", r.half_width},
                       {"lower", r.lower},
                       {"upper", r.upper}});
    return out;
}

Json data_json(const std::vector<HeatTile>& tiles) {
    Json out = Json::array();
    for (const auto& t : tiles) out.push_back({{"dgm", t.dgm}, {"method", t.method}, {"value", t.value}});
    return out;
}

Json data_json(const std::vector<ZipStratum>& strata) {
    Json out = Json::array();
    for (const auto& s : strata) {
        Json stripes = Json::array();
        for (const auto& st : s.stripes)
            stripes.push_back({{"rep", st.rep_id},
                               {"estimate", st.estimate},
                               {"truth", st.truth},
                               {"lower", st.lower},
                               {"upper", st.upper},
                               {"z", st.z},
                               {"rank_percentile", st.rank_percentile},
                               {"covers", st.covers}});
        out.push_back({{"dgm", s.key.dgm},
                       {"method", s.key.method},
                       {"coverage", s.coverage},
                       {"stripes", std::move(stripes)}});
    }
    return out;
}

Json data_json(const NestedLoopSeries& s) {
    Json ribbons = Json::array();
    for (const auto& r : s.factor_ribbons) ribbons.push_back({{"factor", r.factor}, {"levels", r.levels}, {"y", r.y}});
    Json steps = Json::array();
    for (std::size_t m = 0; m < s.methods.size(); ++m) {
        Json ys = Json::array();
        for (const auto& v : s.value_steps[m]) ys.push_back(opt_number(v));
        steps.push_back({{"method", s.methods[m]}, {"values", std::move(ys)}});
    }
    return Json{{"factor_order", s.factor_order},
                {"dgm_order", s.dgm_order},
                {"series", std::move(steps)},
                {"factor_ribbons", std::move(ribbons)},
                {"band_lower", s.band_lower},
                {"band_upper", s.band_upper}};
}

}  // namespace

Json plot_json(const PlotSpec& spec, const PlotData& data) {
    Json j;
    j["kind"] = to_string(spec.kind);
    if (spec.measure) j["measure"] = measure_name(*spec.measure);
    j["data"] = std::visit([](const auto& d) { return data_json(d); }, data);
    return j;
}

Json error_json(const std::exception& e) {
    Json j;
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        j["code"] = to_string(err->code());
        j["message"] = err->what();
        j["detail"] = err->detail();
        if (const auto* rr = dynamic_cast<const RaggedRowsError*>(&e)) j["row"] = rr->row();
    } else {
        j["code"] = "Internal";
        j["message"] = e.what();
        j["detail"] = "";
    }
    return j;
}

}  // namespace simlens::report
