#include "simlens/measures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "simlens/distributions.hpp"

namespace simlens {

namespace {

struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double ss = 0.0;  // sum of squared deviations from the mean

    double sd() const { return std::sqrt(ss / static_cast<double>(n - 1)); }
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    m.n = xs.size();
    if (m.n == 0) return m;
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    if (*lo == *hi) {
        m.mean = *lo;  // constant data: exact, whatever n*x/n rounds to
        return m;
    }
    double sum = 0.0;
    for (const double x : xs) sum += x;
    m.mean = sum / static_cast<double>(m.n);
    // Corrected two-pass: the second term removes the rounding in the mean.
    double dev = 0.0;
    for (const double x : xs) {
        m.ss += (x - m.mean) * (x - m.mean);
        dev += x - m.mean;
    }
    m.ss = std::max(0.0, m.ss - dev * dev / static_cast<double>(m.n));
    return m;
}

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n % 2 == 1) return xs[n / 2];
    return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

bool present(const std::vector<double>& v, std::size_t i) { return !v.empty() && !is_missing(v[i]); }

// Repetitions where both the estimate and the truth are observed.
struct ErrorTerms {
    std::vector<double> estimates;
    std::vector<double> errors;  // estimate - truth
};

ErrorTerms error_terms(const PerformanceInput& in) {
    if (!in.has_truth()) throw Error(ErrorCode::NoTruth, "no true value is mapped");
    ErrorTerms t;
    for (std::size_t i = 0; i < in.estimates.size(); ++i) {
        if (present(in.estimates, i) && present(in.truths, i)) {
            t.estimates.push_back(in.estimates[i]);
            t.errors.push_back(in.estimates[i] - in.truths[i]);
        }
    }
    return t;
}

std::vector<double> observed(const std::vector<double>& v) {
    std::vector<double> out;
    out.reserve(v.size());
    for (const double x : v) {
        if (!is_missing(x)) out.push_back(x);
    }
    return out;
}

MeasureValue proportion(Measure m, std::size_t hits, std::size_t n) {
    MeasureValue r{m, std::nullopt, std::nullopt, n};
    if (n == 0) return r;
    const double p = static_cast<double>(hits) / static_cast<double>(n);
    r.value = p;
    if (n >= 2) r.mcse = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    return r;
}

}  // namespace

std::string_view measure_name(Measure m) {
    switch (m) {
        case Measure::Bias: return "bias";
        case Measure::EmpSE: return "emp_se";
        case Measure::ModSE: return "mod_se";
        case Measure::MSE: return "mse";
        case Measure::Coverage: return "coverage";
        case Measure::BECoverage: return "becover";
        case Measure::Power: return "power";
        case Measure::RelPrec: return "relprec";
        case Measure::MeanEst: return "mean_est";
        case Measure::MedianEst: return "median_est";
        case Measure::MeanSqErr: return "mean_sq_err";
        case Measure::MedianSqErr: return "median_sq_err";
    }
    return "unknown";
}

std::optional<Measure> parse_measure(std::string_view name) {
    for (const auto m : kAllMeasures) {
        if (measure_name(m) == name) return m;
    }
    static const std::map<std::string_view, Measure> aliases = {
        {"empse", Measure::EmpSE},    {"modelse", Measure::ModSE}, {"modse", Measure::ModSE},
        {"cover", Measure::Coverage}, {"thetamean", Measure::MeanEst}, {"thetamedian", Measure::MedianEst},
    };
    if (const auto it = aliases.find(name); it != aliases.end()) return it->second;
    return std::nullopt;
}

std::vector<Measure> parse_measure_list(std::string_view list) {
    std::vector<Measure> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const std::size_t end = std::min(list.find(',', start), list.size());
        auto token = list.substr(start, end - start);
        while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
        while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
        if (!token.empty()) {
            const auto m = parse_measure(token);
            if (!m) throw Error(ErrorCode::InvalidArgument, "unknown measure '" + std::string(token) + "'");
            if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
        }
        start = end + 1;
    }
    return out;
}

PerformanceInput PerformanceInput::from_stratum(const Dataset& dataset, const Stratum& stratum) {
    const auto& map = dataset.mapping();
    const auto& recs = dataset.records();
    PerformanceInput in;
    in.alpha = map.alpha;
    const std::size_t n = stratum.records.size();
    in.estimates.reserve(n);
    in.rep_ids.reserve(n);
    for (const auto idx : stratum.records) {
        const auto& r = recs[idx];
        in.estimates.push_back(r.estimate);
        in.rep_ids.push_back(r.rep_id);
        if (map.se_col) in.ses.push_back(r.se);
        if (map.has_truth()) in.truths.push_back(r.truth);
        if (map.ci_cols) {
            in.lowers.push_back(r.lower);
            in.uppers.push_back(r.upper);
        }
        if (map.df_col) in.dfs.push_back(r.df);
    }
    return in;
}

CriticalValueRule CriticalValueRule::from_mapping(const VariableMapping& mapping) {
    if (mapping.ci_cols) return {CriticalValueKind::SuppliedBounds};
    if (mapping.df_col) return {CriticalValueKind::TPerRepetition};
    return {CriticalValueKind::Normal};
}

std::vector<Interval> build_intervals(const PerformanceInput& in, CriticalValueRule rule) {
    const std::size_t n = in.estimates.size();
    std::vector<Interval> out(n);
    switch (rule.kind) {
        case CriticalValueKind::SuppliedBounds:
            if (!in.has_bounds()) throw Error(ErrorCode::NoIntervals, "no confidence-bound columns are mapped");
            for (std::size_t i = 0; i < n; ++i) {
                if (present(in.lowers, i) && present(in.uppers, i)) out[i] = {in.lowers[i], in.uppers[i]};
            }
            break;
        case CriticalValueKind::Normal: {
            if (!in.has_ses()) throw Error(ErrorCode::NoIntervals, "no standard-error column is mapped");
            const double z = dist::normal_critical(in.alpha);
            for (std::size_t i = 0; i < n; ++i) {
                if (present(in.estimates, i) && present(in.ses, i)) {
                    out[i] = {in.estimates[i] - z * in.ses[i], in.estimates[i] + z * in.ses[i]};
                }
            }
            break;
        }
        case CriticalValueKind::TPerRepetition: {
            if (!in.has_ses()) throw Error(ErrorCode::NoIntervals, "no standard-error column is mapped");
            if (!in.has_dfs()) throw Error(ErrorCode::NoIntervals, "no degrees-of-freedom column is mapped");
            std::map<double, double> cache;
            for (std::size_t i = 0; i < n; ++i) {
                if (present(in.estimates, i) && present(in.ses, i) && present(in.dfs, i) && in.dfs[i] > 0.0) {
                    auto [it, fresh] = cache.try_emplace(in.dfs[i], 0.0);
                    if (fresh) it->second = dist::t_critical(in.alpha, in.dfs[i]);
                    out[i] = {in.estimates[i] - it->second * in.ses[i], in.estimates[i] + it->second * in.ses[i]};
                }
            }
            break;
        }
    }
    return out;
}

MeasureValue bias(const PerformanceInput& in) {
    const auto t = error_terms(in);
    MeasureValue r{Measure::Bias, std::nullopt, std::nullopt, t.errors.size()};
    if (r.n_used == 0) return r;
    r.value = moments(t.errors).mean;
    if (r.n_used >= 2) r.mcse = moments(t.estimates).sd() / std::sqrt(static_cast<double>(r.n_used));
    return r;
}

MeasureValue empirical_se(const PerformanceInput& in) {
    const auto m = moments(observed(in.estimates));
    MeasureValue r{Measure::EmpSE, std::nullopt, std::nullopt, m.n};
    if (m.n < 2) return r;
    const double s = m.sd();
    r.value = s;
    r.mcse = s / std::sqrt(2.0 * static_cast<double>(m.n - 1));
    return r;
}

MeasureValue model_se(const PerformanceInput& in) {
    if (!in.has_ses()) throw Error(ErrorCode::NoSEs, "no standard-error column is mapped");
    std::vector<double> sq;
    for (const double s : observed(in.ses)) sq.push_back(s * s);
    const auto m = moments(sq);
    MeasureValue r{Measure::ModSE, std::nullopt, std::nullopt, m.n};
    if (m.n == 0) return r;
    const double value = std::sqrt(m.mean);
    r.value = value;
    if (m.n >= 2) {
        const double var_sq = m.ss / static_cast<double>(m.n - 1);
        r.mcse = value > 0.0 ? std::sqrt(var_sq / (4.0 * static_cast<double>(m.n) * value * value)) : 0.0;
    }
    return r;
}

MeasureValue mse(const PerformanceInput& in) {
    const auto t = error_terms(in);
    MeasureValue r{Measure::MSE, std::nullopt, std::nullopt, t.errors.size()};
    const std::size_t n = r.n_used;
    if (n == 0) return r;
    double sum = 0.0;
    for (const double e : t.errors) sum += e * e;
    const double value = sum / static_cast<double>(n);
    r.value = value;
    if (n >= 2) {
        double dev = 0.0;
        for (const double e : t.errors) dev += (e * e - value) * (e * e - value);
        r.mcse = std::sqrt(dev / (static_cast<double>(n) * static_cast<double>(n - 1)));
    }
    return r;
}

std::vector<MeasureValue> mean_median_summaries(const PerformanceInput& in) {
    std::vector<MeasureValue> out;
    const auto est = observed(in.estimates);
    const auto m = moments(est);
    MeasureValue mean{Measure::MeanEst, std::nullopt, std::nullopt, m.n};
    MeasureValue median{Measure::MedianEst, std::nullopt, std::nullopt, m.n};
    if (m.n >= 1) {
        mean.value = m.mean;
        median.value = median_of(est);
    }
    if (m.n >= 2) mean.mcse = m.sd() / std::sqrt(static_cast<double>(m.n));
    out.push_back(mean);
    out.push_back(median);
    if (in.has_truth()) {
        auto mean_sq = mse(in);
        mean_sq.measure = Measure::MeanSqErr;
        out.push_back(mean_sq);
        const auto t = error_terms(in);
        MeasureValue median_sq{Measure::MedianSqErr, std::nullopt, std::nullopt, t.errors.size()};
        if (!t.errors.empty()) {
            std::vector<double> sq;
            for (const double e : t.errors) sq.push_back(e * e);
            median_sq.value = median_of(std::move(sq));
        }
        out.push_back(median_sq);
    }
    return out;
}

MeasureValue coverage(const PerformanceInput& in, CriticalValueRule rule) {
    if (!in.has_truth()) throw Error(ErrorCode::NoTruth, "no true value is mapped");
    const auto intervals = build_intervals(in, rule);
    std::size_t n = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (!intervals[i].usable() || !present(in.truths, i)) continue;
        ++n;
        if (intervals[i].contains(in.truths[i])) ++hits;
    }
    return proportion(Measure::Coverage, hits, n);
}

MeasureValue bias_eliminated_coverage(const PerformanceInput& in, CriticalValueRule rule) {
    const auto intervals = build_intervals(in, rule);
    const auto m = moments(observed(in.estimates));
    if (m.n == 0) return {Measure::BECoverage, std::nullopt, std::nullopt, 0};
    std::size_t n = 0;
    std::size_t hits = 0;
    for (const auto& iv : intervals) {
        if (!iv.usable()) continue;
        ++n;
        if (iv.contains(m.mean)) ++hits;
    }
    return proportion(Measure::BECoverage, hits, n);
}

MeasureValue power(const PerformanceInput& in, CriticalValueRule rule) {
    std::size_t n = 0;
    std::size_t hits = 0;
    if (rule.kind == CriticalValueKind::SuppliedBounds) {
        if (!in.has_bounds()) throw Error(ErrorCode::MissingIngredient, "no confidence-bound columns are mapped");
        for (std::size_t i = 0; i < in.lowers.size(); ++i) {
            if (!present(in.lowers, i) || !present(in.uppers, i)) continue;
            ++n;
            if (in.lowers[i] > 0.0 || in.uppers[i] < 0.0) ++hits;
        }
        return proportion(Measure::Power, hits, n);
    }
    if (!in.has_ses()) throw Error(ErrorCode::MissingIngredient, "no standard-error column is mapped");
    const bool use_t = rule.kind == CriticalValueKind::TPerRepetition;
    if (use_t && !in.has_dfs()) throw Error(ErrorCode::MissingIngredient, "no degrees-of-freedom column is mapped");
    const double z = dist::normal_critical(in.alpha);
    std::map<double, double> cache;
    for (std::size_t i = 0; i < in.estimates.size(); ++i) {
        if (!present(in.estimates, i) || !present(in.ses, i)) continue;
        double crit = z;
        if (use_t) {
            if (!present(in.dfs, i) || !(in.dfs[i] > 0.0)) continue;
            auto [it, fresh] = cache.try_emplace(in.dfs[i], 0.0);
            if (fresh) it->second = dist::t_critical(in.alpha, in.dfs[i]);
            crit = it->second;
        }
        ++n;
        if (std::fabs(in.estimates[i]) >= crit * in.ses[i]) ++hits;
    }
    return proportion(Measure::Power, hits, n);
}

MeasureValue relative_precision(const PerformanceInput& method, const PerformanceInput& reference) {
    std::map<std::string_view, std::size_t> ref_index;
    for (std::size_t i = 0; i < reference.rep_ids.size(); ++i) {
        if (!ref_index.emplace(reference.rep_ids[i], i).second) {
            throw Error(ErrorCode::UnpairedRepetitions,
                        "repetition id '" + reference.rep_ids[i] + "' occurs twice in the reference stratum");
        }
    }
    std::vector<double> b;
    std::vector<double> a;
    std::map<std::string_view, bool> seen;
    for (std::size_t i = 0; i < method.rep_ids.size(); ++i) {
        if (!seen.emplace(method.rep_ids[i], true).second) {
            throw Error(ErrorCode::UnpairedRepetitions,
                        "repetition id '" + method.rep_ids[i] + "' occurs twice in the compared stratum");
        }
        const auto it = ref_index.find(method.rep_ids[i]);
        if (it == ref_index.end()) continue;
        const double xb = method.estimates[i];
        const double xa = reference.estimates[it->second];
        if (is_missing(xb) || is_missing(xa)) continue;
        b.push_back(xb);
        a.push_back(xa);
    }
    MeasureValue r{Measure::RelPrec, std::nullopt, std::nullopt, b.size()};
    const std::size_t n = b.size();
    if (n < 2) return r;
    const auto mb = moments(b);
    const auto ma = moments(a);
    if (!(mb.ss > 0.0)) return r;
    // (s_A / s_B)^2; the common 1/(n-1) cancels.
    const double ratio = ma.ss / mb.ss;
    r.value = 100.0 * (ratio - 1.0);
    if (ma.ss > 0.0) {
        // 1 - rho^2 = det / (ss_a * ss_b) with det = ss_a * ss_b - s_ab^2,
        // never formed by that subtraction (it cancels catastrophically).
        // Small strata: Cauchy-Binet on the rows [1; a; b] gives
        // n * det = sum over triples of the doubled triangle area squared,
        // built from differences only, so coincident or collinear points
        // (always the case at n = 2) give exact zeros. Larger strata use
        // Lagrange's identity on the centred data, O(n^2).
        double det = 0.0;
        if (n <= 64) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    for (std::size_t k = j + 1; k < n; ++k) {
                        const double d = (a[j] - a[i]) * (b[k] - b[i]) - (a[k] - a[i]) * (b[j] - b[i]);
                        det += d * d;
                    }
            det /= static_cast<double>(n);
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double ai = a[i] - ma.mean;
                const double bi = b[i] - mb.mean;
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double cross = ai * (b[j] - mb.mean) - (a[j] - ma.mean) * bi;
                    det += cross * cross;
                }
            }
        }
        const double one_minus_rho2 = std::min(1.0, det / (ma.ss * mb.ss));
        r.mcse = 200.0 * ratio * std::sqrt(one_minus_rho2 / static_cast<double>(n - 1));
    }
    return r;
}

std::optional<ErrorCode> missing_ingredient(const VariableMapping& map, Measure measure) {
    const auto rule = CriticalValueRule::from_mapping(map);
    const bool intervals = rule.kind == CriticalValueKind::SuppliedBounds || map.se_col.has_value();
    switch (measure) {
        case Measure::Bias:
        case Measure::MSE:
        case Measure::MeanSqErr:
        case Measure::MedianSqErr:
            if (!map.has_truth()) return ErrorCode::NoTruth;
            return std::nullopt;
        case Measure::EmpSE:
        case Measure::MeanEst:
        case Measure::MedianEst:
            return std::nullopt;
        case Measure::ModSE:
            if (!map.se_col) return ErrorCode::NoSEs;
            return std::nullopt;
        case Measure::Coverage:
            if (!map.has_truth()) return ErrorCode::NoTruth;
            if (!intervals) return ErrorCode::NoIntervals;
            return std::nullopt;
        case Measure::BECoverage:
            if (!intervals) return ErrorCode::NoIntervals;
            return std::nullopt;
        case Measure::Power:
            if (!intervals) return ErrorCode::MissingIngredient;
            return std::nullopt;
        case Measure::RelPrec:
            if (!map.method_col || !map.reference_method) return ErrorCode::NoReference;
            return std::nullopt;
    }
    return std::nullopt;
}

std::vector<PerformanceEstimate> compute_all(const Dataset& dataset, const ComputeOptions& options) {
    const auto& map = dataset.mapping();
    const auto rule = CriticalValueRule::from_mapping(map);

    std::vector<Measure> selected;
    for (const auto m : kAllMeasures) {
        if (std::find(options.measures.begin(), options.measures.end(), m) == options.measures.end()) continue;
        if (const auto why = missing_ingredient(map, m)) {
            const std::string msg = "measure '" + std::string(measure_name(m)) + "' unavailable: " +
                                    std::string(to_string(*why));
            if (options.strict) throw Error(*why, msg);
            if (options.log) options.log(msg);
            continue;
        }
        selected.push_back(m);
    }

    std::vector<const Stratum*> strata;
    for (const auto& s : dataset.strata()) {
        if (options.dgm && s.key.dgm != *options.dgm) continue;
        strata.push_back(&s);
    }
    if (selected.empty() || strata.empty()) return {};

    const auto has = [&](Measure m) { return std::find(selected.begin(), selected.end(), m) != selected.end(); };

    const auto run = [&](const Stratum& stratum) {
        const auto in = PerformanceInput::from_stratum(dataset, stratum);
        std::vector<MeasureValue> values;
        if (has(Measure::Bias)) values.push_back(bias(in));
        if (has(Measure::EmpSE)) values.push_back(empirical_se(in));
        if (has(Measure::ModSE)) values.push_back(model_se(in));
        if (has(Measure::MSE)) values.push_back(mse(in));
        if (has(Measure::Coverage)) values.push_back(coverage(in, rule));
        if (has(Measure::BECoverage)) values.push_back(bias_eliminated_coverage(in, rule));
        if (has(Measure::Power)) values.push_back(power(in, rule));
        if (has(Measure::RelPrec)) {
            const StratumKey ref_key{stratum.key.dgm, *map.reference_method};
            if (const auto* ref = dataset.find_stratum(ref_key)) {
                values.push_back(relative_precision(in, PerformanceInput::from_stratum(dataset, *ref)));
            } else if (options.log) {
                options.log("no reference stratum for " + describe(stratum.key));
            }
        }
        if (has(Measure::MeanEst) || has(Measure::MedianEst) || has(Measure::MeanSqErr) ||
            has(Measure::MedianSqErr)) {
            for (auto& v : mean_median_summaries(in)) {
                if (has(v.measure)) values.push_back(v);
            }
        }
        std::vector<PerformanceEstimate> out;
        out.reserve(values.size());
        for (const auto& v : values) out.push_back({v.measure, stratum.key, v.value, v.mcse, v.n_used});
        return out;
    };

    // Strata are independent; results land in fixed slots so the output
    // order never depends on scheduling.
    std::vector<std::vector<PerformanceEstimate>> slots(strata.size());
    const std::size_t workers =
        std::min<std::size_t>(strata.size(), std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < strata.size(); ++i) slots[i] = run(*strata[i]);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = w; i < strata.size(); i += workers) slots[i] = run(*strata[i]);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::vector<PerformanceEstimate> out;
    for (auto& s : slots) {
        for (auto& e : s) out.push_back(std::move(e));
    }
    return out;
}

}  // namespace simlens
