#include "simlens/plotdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <unordered_map>

#include "simlens/distributions.hpp"
#include "simlens/error.hpp"

namespace simlens {

namespace {

constexpr std::pair<PlotKind, std::string_view> kKindNames[] = {
    {PlotKind::Scatter, "scatter"}, {PlotKind::BlandAltman, "bland-altman"}, {PlotKind::Ridgeline, "ridgeline"},
    {PlotKind::DensityPairs, "density-pairs"}, {PlotKind::Forest, "forest"}, {PlotKind::Lolly, "lolly"},
    {PlotKind::Heat, "heat"}, {PlotKind::Zip, "zip"}, {PlotKind::NestedLoop, "nested-loop"},
};

double quantity_of(const RepetitionRecord& r, Quantity q) { return q == Quantity::Estimate ? r.estimate : r.se; }

bool dgm_selected(const std::vector<std::string>& dgm, const std::optional<std::vector<std::string>>& filter) {
    return !filter || dgm == *filter;
}

void require_method(const Dataset& ds, const std::string& m) {
    const auto methods = ds.methods();
    if (std::find(methods.begin(), methods.end(), m) == methods.end())
        throw Error(ErrorCode::InvalidArgument, "unknown method", m);
}

// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double>& s, double p) {
    const double h = (static_cast<double>(s.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::vector<const PerformanceEstimate*> of_measure(const std::vector<PerformanceEstimate>& est, Measure m) {
    std::vector<const PerformanceEstimate*> out;
    for (const auto& e : est)
        if (e.measure == m) out.push_back(&e);
    return out;
}

[[noreturn]] void unavailable(Measure m, const char* why) {
    throw Error(ErrorCode::MeasureUnavailable, std::string("measure '") + std::string(measure_name(m)) + "' " + why);
}

}  // namespace

std::string_view to_string(PlotKind k) {
    for (const auto& [kind, name] : kKindNames)
        if (kind == k) return name;
    return "?";
}

std::optional<PlotKind> parse_plot_kind(std::string_view s) {
    for (const auto& [kind, name] : kKindNames)
        if (name == s) return kind;
    return std::nullopt;
}

std::vector<EstimatePairs> estimate_pairs(const Dataset& ds, const std::string& method_a, const std::string& method_b,
                                          Quantity quantity, const std::optional<std::vector<std::string>>& dgm) {
    require_method(ds, method_a);
    require_method(ds, method_b);
    std::vector<EstimatePairs> out;
    std::size_t total = 0;
    for (const auto& combo : ds.dgm_combinations()) {
        if (!dgm_selected(combo, dgm)) continue;
        const Stratum* sa = ds.find_stratum({combo, method_a});
        const Stratum* sb = ds.find_stratum({combo, method_b});
        if (!sa || !sb) continue;
        std::unordered_map<std::string, double> by_rep;
        for (auto i : sb->records) {
            const auto& r = ds.records()[i];
            if (!by_rep.emplace(r.rep_id, quantity_of(r, quantity)).second)
                throw Error(ErrorCode::UnpairedRepetitions, "duplicate repetition id", r.rep_id);
        }
        EstimatePairs g;
        g.dgm = combo;
        g.method_a = method_a;
        g.method_b = method_b;
        std::unordered_map<std::string, int> seen;
        for (auto i : sa->records) {
            const auto& r = ds.records()[i];
            if (++seen[r.rep_id] > 1) throw Error(ErrorCode::UnpairedRepetitions, "duplicate repetition id", r.rep_id);
            const auto it = by_rep.find(r.rep_id);
            const double a = quantity_of(r, quantity);
            if (it == by_rep.end() || is_missing(a) || is_missing(it->second)) {
                ++g.dropped;
                continue;
            }
            g.points.push_back({r.rep_id, a, it->second});
        }
        total += g.points.size();
        out.push_back(std::move(g));
    }
    if (total == 0)
        throw Error(ErrorCode::NoCommonRepetitions, "methods share no usable repetitions", method_a + " vs " + method_b);
    return out;
}

BlandAltmanData bland_altman(const EstimatePairs& pairs) {
    BlandAltmanData d;
    d.dgm = pairs.dgm;
    double sum = 0.0;
    for (const auto& p : pairs.points) {
        d.points.push_back({(p.a + p.b) / 2.0, p.a - p.b});
        sum += p.a - p.b;
    }
    const auto n = static_cast<double>(d.points.size());
    if (d.points.empty()) return d;
    d.mean_diff = sum / n;
    if (d.points.size() >= 2) {
        double ss = 0.0;
        for (const auto& p : d.points) ss += (p.diff - d.mean_diff) * (p.diff - d.mean_diff);
        d.sd_diff = std::sqrt(ss / (n - 1.0));
        d.lower = d.mean_diff - 1.96 * *d.sd_diff;
        d.upper = d.mean_diff + 1.96 * *d.sd_diff;
    }
    return d;
}

std::vector<RidgelineGroup> ridgeline_data(const Dataset& ds, Quantity quantity,
                                           const std::optional<std::vector<std::string>>& dgm) {
    std::vector<RidgelineGroup> out;
    for (const auto& s : ds.strata()) {
        if (!dgm_selected(s.key.dgm, dgm)) continue;
        RidgelineGroup g;
        g.dgm = s.key.dgm;
        g.method = s.key.method;
        for (auto i : s.records) {
            const double v = quantity_of(ds.records()[i], quantity);
            if (!is_missing(v)) g.sample.push_back(v);
        }
        std::sort(g.sample.begin(), g.sample.end());
        const std::size_t n = g.sample.size();
        if (n >= 2) {
            double mean = 0.0;
            for (double v : g.sample) mean += v;
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (double v : g.sample) ss += (v - mean) * (v - mean);
            const double sd = std::sqrt(ss / static_cast<double>(n - 1));
            const double iqr = quantile_sorted(g.sample, 0.75) - quantile_sorted(g.sample, 0.25);
            double spread = sd;
            if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
            g.bandwidth = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
        }
        g.raw_only = !(g.bandwidth > 0.0);
        if (!g.raw_only) {
            const double h = g.bandwidth;
            const double lo = g.sample.front() - 4.0 * h, hi = g.sample.back() + 4.0 * h;
            const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
            g.grid.resize(kKdePoints);
            g.density.resize(kKdePoints);
            for (std::size_t k = 0; k < kKdePoints; ++k) {
                const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(kKdePoints - 1);
                // Only points within 8h contribute measurably; the sample is sorted.
                const auto first = std::lower_bound(g.sample.begin(), g.sample.end(), x - 8.0 * h);
                const auto last = std::upper_bound(first, g.sample.end(), x + 8.0 * h);
                double acc = 0.0;
                for (auto it = first; it != last; ++it) {
                    const double u = (x - *it) / h;
                    acc += std::exp(-0.5 * u * u);
                }
                g.grid[k] = x;
                g.density[k] = acc * norm;
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

namespace {

// value ± h rounded so that upper − value and value − lower are the same
// double. Only a neighbouring bound ever needs trying.
void symmetric_bounds(double v, double h, ForestRow& r) {
    auto settle = [v](double& moving, double d, bool upper_fixed) {
        auto diff = [&](double x) { return upper_fixed ? v - x : x - v; };
        if (diff(moving) == d) return true;
        double a = moving, b = moving;
        for (int k = 0; k < 4; ++k) {
            a = std::nextafter(a, -std::numeric_limits<double>::infinity());
            b = std::nextafter(b, std::numeric_limits<double>::infinity());
            if (diff(a) == d) return moving = a, true;
            if (diff(b) == d) return moving = b, true;
        }
        return false;
    };
    r.upper = v + h;
    r.half_width = r.upper - v;
    r.lower = v - r.half_width;
    if (settle(r.lower, r.half_width, true)) return;
    r.lower = v - h;
    r.half_width = v - r.lower;
    r.upper = v + r.half_width;
    if (settle(r.upper, r.half_width, false)) return;
    r.half_width = h;  // unreachable in practice; keep the naive bounds
    r.lower = v - h;
    r.upper = v + h;
}

}  // namespace

std::vector<ForestRow> forest_lolly_data(const std::vector<PerformanceEstimate>& estimates, Measure measure,
                                         double ci_level) {
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw Error(ErrorCode::InvalidArgument, "ci_level must lie in (0, 1)");
    if (measure == Measure::MedianEst || measure == Measure::MedianSqErr) unavailable(measure, "has no Monte Carlo SE");
    const double z = dist::normal_quantile(0.5 + ci_level / 2.0);
    std::vector<ForestRow> out;
    for (const auto* e : of_measure(estimates, measure)) {
        if (!e->value || !e->mcse) continue;
        ForestRow r;
        r.dgm = e->stratum.dgm;
        r.method = e->stratum.method;
        r.value = *e->value;
        r.mcse = *e->mcse;
        symmetric_bounds(r.value, z * r.mcse, r);
        out.push_back(std::move(r));
    }
    if (out.empty()) unavailable(measure, "is not available with a Monte Carlo SE");
    return out;
}

std::vector<HeatTile> heat_data(const std::vector<PerformanceEstimate>& estimates, Measure measure) {
    std::vector<HeatTile> out;
    for (const auto* e : of_measure(estimates, measure))
        if (e->value) out.push_back({e->stratum.dgm, e->stratum.method, *e->value});
    if (out.empty()) unavailable(measure, "is not available");
    return out;
}

std::vector<ZipStratum> zip_data(const Dataset& ds, CriticalValueRule rule,
                                 const std::optional<std::vector<std::string>>& dgm,
                                 const std::optional<std::string>& method) {
    if (!ds.mapping().has_truth()) throw Error(ErrorCode::NoTruth, "zip plots need a true value");
    const double zcrit = dist::normal_critical(ds.mapping().alpha);
    std::vector<ZipStratum> out;
    for (const auto& s : ds.strata()) {
        if (!dgm_selected(s.key.dgm, dgm) || (method && s.key.method != *method)) continue;
        const auto in = PerformanceInput::from_stratum(ds, s);
        const auto intervals = build_intervals(in, rule);
        ZipStratum zs;
        zs.key = s.key;
        for (std::size_t i = 0; i < intervals.size(); ++i) {
            const auto& iv = intervals[i];
            if (!iv.usable() || is_missing(in.truths[i])) continue;
            ZipStripe st;
            st.method = s.key.method;
            st.dgm = s.key.dgm;
            st.rep_id = in.rep_ids[i];
            st.estimate = in.estimates[i];
            st.truth = in.truths[i];
            st.lower = iv.lower;
            st.upper = iv.upper;
            st.covers = iv.contains(st.truth);
            double se = in.has_ses() ? in.ses[i] : kMissing;
            if (is_missing(se)) se = (iv.upper - iv.lower) / (2.0 * zcrit);
            // Without a point estimate (bounds only) rank on the interval midpoint.
            const double centre = is_missing(st.estimate) ? (iv.lower + iv.upper) / 2.0 : st.estimate;
            st.z = se > 0.0 ? std::fabs(centre - st.truth) / se
                            : (centre == st.truth ? 0.0 : std::numeric_limits<double>::infinity());
            zs.stripes.push_back(std::move(st));
        }
        // Most significant first, ties in repetition order; then lay out bottom-up.
        std::stable_sort(zs.stripes.begin(), zs.stripes.end(),
                         [](const ZipStripe& a, const ZipStripe& b) { return a.z > b.z; });
        const std::size_t n = zs.stripes.size();
        std::size_t hits = 0;
        for (std::size_t r = 0; r < n; ++r) {
            zs.stripes[r].rank_percentile = 100.0 * static_cast<double>(n - r) / static_cast<double>(n);
            hits += zs.stripes[r].covers;
        }
        std::reverse(zs.stripes.begin(), zs.stripes.end());
        // Same arithmetic as the coverage measure, so the two agree exactly.
        zs.coverage = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
        out.push_back(std::move(zs));
    }
    return out;
}

NestedLoopSeries nested_loop_data(const std::vector<PerformanceEstimate>& estimates,
                                  const std::vector<std::string>& dgm_names, Measure measure,
                                  std::vector<std::string> factor_order) {
    if (dgm_names.empty()) throw Error(ErrorCode::InvalidArgument, "nested-loop plots need at least one DGM factor");
    if (factor_order.empty()) factor_order = dgm_names;
    std::vector<std::size_t> perm;
    for (const auto& f : factor_order) {
        const auto it = std::find(dgm_names.begin(), dgm_names.end(), f);
        if (it == dgm_names.end()) throw Error(ErrorCode::InvalidArgument, "unknown DGM factor", f);
        perm.push_back(static_cast<std::size_t>(it - dgm_names.begin()));
    }
    {
        auto sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        if (sorted.size() != dgm_names.size() || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw Error(ErrorCode::InvalidArgument, "factor order must list every DGM factor once");
    }

    const auto rows = of_measure(estimates, measure);
    if (std::none_of(rows.begin(), rows.end(), [](const auto* e) { return e->value.has_value(); }))
        unavailable(measure, "is not available");

    auto reorder = [&](const std::vector<std::string>& dgm) {
        std::vector<std::string> r;
        for (auto p : perm) r.push_back(dgm.at(p));
        return r;
    };

    NestedLoopSeries s;
    s.factor_order = factor_order;
    for (const auto* e : rows) {
        const auto key = reorder(e->stratum.dgm);
        if (std::find(s.dgm_order.begin(), s.dgm_order.end(), key) == s.dgm_order.end()) s.dgm_order.push_back(key);
        if (std::find(s.methods.begin(), s.methods.end(), e->stratum.method) == s.methods.end())
            s.methods.push_back(e->stratum.method);
    }
    std::sort(s.dgm_order.begin(), s.dgm_order.end(), dgm_less);
    std::sort(s.methods.begin(), s.methods.end(), [](const auto& a, const auto& b) { return level_less(a, b); });

    s.value_steps.assign(s.methods.size(), std::vector<std::optional<double>>(s.dgm_order.size()));
    double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
    for (const auto* e : rows) {
        if (!e->value) continue;
        const auto pos = std::find(s.dgm_order.begin(), s.dgm_order.end(), reorder(e->stratum.dgm)) - s.dgm_order.begin();
        const auto m = std::find(s.methods.begin(), s.methods.end(), e->stratum.method) - s.methods.begin();
        s.value_steps[static_cast<std::size_t>(m)][static_cast<std::size_t>(pos)] = *e->value;
        vmin = std::min(vmin, *e->value);
        vmax = std::max(vmax, *e->value);
    }

    // Ribbons live in a band of 25% of the value range below the minimum,
    // one equal slice per factor, outermost factor on top.
    double range = vmax - vmin;
    if (!(range > 0.0)) range = vmin != 0.0 ? std::fabs(vmin) : 1.0;
    s.band_upper = vmin;
    s.band_lower = vmin - 0.25 * range;
    const double slice = (s.band_upper - s.band_lower) / static_cast<double>(factor_order.size());
    for (std::size_t f = 0; f < factor_order.size(); ++f) {
        NestedLoopRibbon rb;
        rb.factor = factor_order[f];
        for (const auto& key : s.dgm_order)
            if (std::find(rb.levels.begin(), rb.levels.end(), key[f]) == rb.levels.end()) rb.levels.push_back(key[f]);
        std::sort(rb.levels.begin(), rb.levels.end(), [](const auto& a, const auto& b) { return level_less(a, b); });
        const double top = s.band_upper - static_cast<double>(f) * slice;
        const double span = 0.8 * slice;
        const double denom = rb.levels.size() > 1 ? static_cast<double>(rb.levels.size() - 1) : 1.0;
        for (const auto& key : s.dgm_order) {
            const auto l = std::find(rb.levels.begin(), rb.levels.end(), key[f]) - rb.levels.begin();
            rb.y.push_back(top - 0.9 * slice + span * static_cast<double>(l) / denom);
        }
        s.factor_ribbons.push_back(std::move(rb));
    }
    return s;
}

PlotData build_plot(const Dataset& ds, const PlotSpec& spec) {
    const auto methods = ds.methods();
    auto pair_methods = [&] {
        if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "dataset has no methods");
        const std::string a = spec.method_a.value_or(methods.front());
        const std::string b = spec.method_b.value_or(methods.size() > 1 ? methods[1] : methods.front());
        return std::pair{a, b};
    };
    auto performance = [&](Measure m) {
        ComputeOptions opt;
        opt.measures = {m};
        opt.strict = true;
        opt.dgm = spec.dgm;
        auto est = compute_all(ds, opt);
        if (spec.method)
            std::erase_if(est, [&](const PerformanceEstimate& e) { return e.stratum.method != *spec.method; });
        return est;
    };
    const Measure measure = spec.measure.value_or(Measure::Bias);

    switch (spec.kind) {
        case PlotKind::Scatter:
        case PlotKind::DensityPairs: {
            const auto [a, b] = pair_methods();
            return estimate_pairs(ds, a, b, spec.quantity, spec.dgm);
        }
        case PlotKind::BlandAltman: {
            const auto [a, b] = pair_methods();
            std::vector<BlandAltmanData> out;
            for (const auto& g : estimate_pairs(ds, a, b, spec.quantity, spec.dgm)) out.push_back(bland_altman(g));
            return out;
        }
        case PlotKind::Ridgeline: {
            auto groups = ridgeline_data(ds, spec.quantity, spec.dgm);
            if (spec.method) std::erase_if(groups, [&](const RidgelineGroup& g) { return g.method != *spec.method; });
            return groups;
        }
        case PlotKind::Forest:
        case PlotKind::Lolly: return forest_lolly_data(performance(measure), measure, spec.ci_level);
        case PlotKind::Heat: return heat_data(performance(measure), measure);
        case PlotKind::Zip: return zip_data(ds, CriticalValueRule::from_mapping(ds.mapping()), spec.dgm, spec.method);
        case PlotKind::NestedLoop: {
            ComputeOptions opt;
            opt.measures = {measure};
            opt.strict = true;
            auto est = compute_all(ds, opt);
            if (spec.method)
                std::erase_if(est, [&](const PerformanceEstimate& e) { return e.stratum.method != *spec.method; });
            return nested_loop_data(est, ds.mapping().dgm_cols, measure, spec.factor_order);
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown plot kind");
}

}  // namespace simlens
