#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "simlens/error.hpp"
#include "simlens/measures.hpp"
#include "simlens/plotdata.hpp"

using namespace simlens;

namespace {

VariableMapping standin_mapping() {
    VariableMapping m;
    m.estimate_col = "theta";
    m.se_col = "se";
    m.truth = FixedTruth{-0.5};
    m.method_col = "method";
    m.dgm_cols = {"dgm"};
    m.rep_col = "idrep";
    return m;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

// rep, method, estimate
Dataset pairs_dataset(const std::vector<std::array<std::string, 3>>& rows) {
    RawTable t;
    t.header = {"rep", "method", "est"};
    for (const auto& r : rows) t.rows.push_back({r[0], r[1], r[2]});
    VariableMapping m;
    m.estimate_col = "est";
    m.method_col = "method";
    m.rep_col = "rep";
    return apply_mapping(std::move(t), m);
}

PerformanceEstimate est(Measure m, std::string method, std::vector<std::string> dgm, double value,
                        std::optional<double> mcse) {
    PerformanceEstimate e;
    e.measure = m;
    e.stratum = {std::move(dgm), std::move(method)};
    e.value = value;
    e.mcse = mcse;
    e.n_used = 100;
    return e;
}

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("plot kind names round-trip") {
    for (auto k : {PlotKind::Scatter, PlotKind::BlandAltman, PlotKind::Ridgeline, PlotKind::DensityPairs,
                   PlotKind::Forest, PlotKind::Lolly, PlotKind::Heat, PlotKind::Zip, PlotKind::NestedLoop})
        CHECK(parse_plot_kind(to_string(k)) == k);
    CHECK(parse_plot_kind("bland-altman") == PlotKind::BlandAltman);
    CHECK(parse_plot_kind("nested-loop") == PlotKind::NestedLoop);
    CHECK_FALSE(parse_plot_kind("pie"));
}

TEST_CASE("estimate pairs") {
    const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());

    SUBCASE("a method paired with itself lies on the diagonal") {
        const auto groups = estimate_pairs(ds, "1", "1", Quantity::Estimate);
        REQUIRE(groups.size() == 2);
        for (const auto& g : groups) {
            CHECK(g.points.size() == 1600);
            for (const auto& p : g.points) CHECK(p.a == p.b);
        }
    }
    SUBCASE("DGM 2, methods 1 and 3 pair every repetition") {
        const auto groups = estimate_pairs(ds, "1", "3", Quantity::Estimate, std::vector<std::string>{"2"});
        REQUIRE(groups.size() == 1);
        CHECK(groups[0].dgm == std::vector<std::string>{"2"});
        CHECK(groups[0].points.size() == 1600);
        CHECK(groups[0].dropped == 0);
    }
    SUBCASE("standard errors") {
        const auto g = estimate_pairs(ds, "1", "2", Quantity::SE);
        CHECK(g[0].points.front().a == ds.records()[ds.strata()[0].records[0]].se);
    }
    SUBCASE("errors") {
        CHECK(code_of([&] { estimate_pairs(ds, "1", "9", Quantity::Estimate); }) == ErrorCode::InvalidArgument);
        const auto disjoint = pairs_dataset({{"1", "a", "1"}, {"2", "a", "2"}, {"3", "b", "1"}, {"4", "b", "2"}});
        CHECK(code_of([&] { estimate_pairs(disjoint, "a", "b", Quantity::Estimate); }) ==
              ErrorCode::NoCommonRepetitions);
        const auto dup = pairs_dataset({{"1", "a", "1"}, {"1", "a", "2"}, {"1", "b", "1"}});
        CHECK(code_of([&] { estimate_pairs(dup, "a", "b", Quantity::Estimate); }) == ErrorCode::UnpairedRepetitions);
    }
    SUBCASE("unpaired and missing repetitions are dropped and counted") {
        const auto d = pairs_dataset(
            {{"1", "a", "1"}, {"2", "a", "2"}, {"3", "a", "NA"}, {"1", "b", "5"}, {"3", "b", "6"}, {"4", "b", "7"}});
        const auto g = estimate_pairs(d, "a", "b", Quantity::Estimate);
        REQUIRE(g.size() == 1);
        REQUIRE(g[0].points.size() == 1);
        CHECK(g[0].points[0].rep_id == "1");
        CHECK(g[0].dropped > 0);
    }
}

TEST_CASE("Bland-Altman") {
    SUBCASE("two pairs") {
        const auto d = pairs_dataset({{"1", "a", "1"}, {"2", "a", "3"}, {"1", "b", "2"}, {"2", "b", "3"}});
        const auto ba = bland_altman(estimate_pairs(d, "a", "b", Quantity::Estimate)[0]);
        REQUIRE(ba.points.size() == 2);
        CHECK(ba.points[0].diff == -1.0);
        CHECK(ba.points[0].mean == 1.5);
        CHECK(ba.points[1].diff == 0.0);
        CHECK(ba.mean_diff == -0.5);
        REQUIRE(ba.sd_diff);
        CHECK(*ba.sd_diff == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
        CHECK(*ba.lower == doctest::Approx(-0.5 - 1.96 * std::sqrt(0.5)));
        CHECK(*ba.upper == doctest::Approx(-0.5 + 1.96 * std::sqrt(0.5)));
    }
    SUBCASE("identical methods have zero differences and limits") {
        const auto ds = apply_mapping(fixtures::case_study_standin(3, 50), standin_mapping());
        for (const auto& g : estimate_pairs(ds, "2", "2", Quantity::Estimate)) {
            const auto ba = bland_altman(g);
            CHECK(ba.mean_diff == 0.0);
            CHECK(*ba.lower == 0.0);
            CHECK(*ba.upper == 0.0);
        }
    }
    SUBCASE("a single pair has no limits") {
        const auto d = pairs_dataset({{"1", "a", "1"}, {"1", "b", "2"}});
        const auto ba = bland_altman(estimate_pairs(d, "a", "b", Quantity::Estimate)[0]);
        CHECK(ba.mean_diff == -1.0);
        CHECK_FALSE(ba.lower);
    }
    SUBCASE("mean difference equals the difference of mean estimates") {
        const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());
        ComputeOptions opt;
        opt.measures = {Measure::Bias, Measure::MeanEst};
        const auto all = compute_all(ds, opt);
        auto find = [&](Measure m, const std::string& dgm, const std::string& method) {
            for (const auto& e : all)
                if (e.measure == m && e.stratum.dgm[0] == dgm && e.stratum.method == method) return *e.value;
            FAIL("missing estimate");
            return 0.0;
        };
        for (const std::string dgm : {"1", "2"}) {
            const auto ba = bland_altman(estimate_pairs(ds, "1", "3", Quantity::Estimate, std::vector{dgm})[0]);
            CHECK(std::fabs(ba.mean_diff - (find(Measure::MeanEst, dgm, "1") - find(Measure::MeanEst, dgm, "3"))) < 1e-12);
            CHECK(std::fabs(ba.mean_diff - (find(Measure::Bias, dgm, "1") - find(Measure::Bias, dgm, "3"))) < 1e-12);
        }
    }
}

TEST_CASE("ridgeline densities") {
    RawTable t;
    t.header = {"method", "est"};
    fixtures::Gaussian g(7);
    std::vector<double> sample;
    for (int i = 0; i < 1000; ++i) {
        sample.push_back(g());
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", sample.back());
        t.rows.push_back({"normal", buf});
    }
    t.rows.push_back({"single", "0.3"});
    VariableMapping m;
    m.estimate_col = "est";
    m.method_col = "method";
    const auto groups = ridgeline_data(apply_mapping(t, m), Quantity::Estimate);
    REQUIRE(groups.size() == 2);
    const auto& n = groups[0].method == "normal" ? groups[0] : groups[1];
    const auto& s = groups[0].method == "single" ? groups[0] : groups[1];

    CHECK(s.raw_only);
    CHECK(s.sample == std::vector<double>{0.3});
    CHECK(s.grid.empty());

    REQUIRE_FALSE(n.raw_only);
    REQUIRE(n.grid.size() == kKdePoints);
    REQUIRE(n.density.size() == kKdePoints);
    CHECK(std::is_sorted(n.sample.begin(), n.sample.end()));
    for (std::size_t i = 1; i < n.grid.size(); ++i) CHECK(n.grid[i] > n.grid[i - 1]);

    double integral = 0.0;
    for (std::size_t i = 1; i < n.grid.size(); ++i)
        integral += (n.grid[i] - n.grid[i - 1]) * (n.density[i] + n.density[i - 1]) / 2.0;
    CHECK(std::fabs(integral - 1.0) < 1e-3);

    const auto mode = n.grid[static_cast<std::size_t>(std::max_element(n.density.begin(), n.density.end()) -
                                                      n.density.begin())];
    CHECK(std::fabs(mode) < 0.25);

    // Independent KDE: Silverman's rule with a type-7 IQR, direct kernel sum.
    auto sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) {
        const double h = (static_cast<double>(sorted.size()) - 1) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[std::min(lo + 1, sorted.size() - 1)] - sorted[lo]);
    };
    double mean = 0.0, ss = 0.0;
    for (double x : sample) mean += x;
    mean /= static_cast<double>(sample.size());
    for (double x : sample) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(sample.size() - 1));
    const double bw = 0.9 * std::min(sd, (q(0.75) - q(0.25)) / 1.34) * std::pow(static_cast<double>(sample.size()), -0.2);
    CHECK(n.bandwidth == doctest::Approx(bw).epsilon(1e-12));
    for (std::size_t i = 0; i < n.grid.size(); i += 9) {
        double d = 0.0;
        for (double x : sample) d += std::exp(-0.5 * std::pow((n.grid[i] - x) / bw, 2));
        d /= static_cast<double>(sample.size()) * bw * std::sqrt(2.0 * std::numbers::pi);
        CHECK(n.density[i] == doctest::Approx(d).epsilon(1e-10));
    }
}

TEST_CASE("forest and lolly data") {
    SUBCASE("published bias and mcse") {
        const auto rows = forest_lolly_data({est(Measure::Bias, "1", {"2"}, 0.0494, 0.0035)}, Measure::Bias);
        REQUIRE(rows.size() == 1);
        CHECK(std::round(rows[0].lower * 1e4) / 1e4 == doctest::Approx(0.0425));
        CHECK(std::round(rows[0].upper * 1e4) / 1e4 == doctest::Approx(0.0563));
        CHECK(rows[0].half_width == doctest::Approx(1.959964 * 0.0035).epsilon(1e-6));
    }
    SUBCASE("zero mcse gives a zero-width interval") {
        const auto rows = forest_lolly_data({est(Measure::Coverage, "1", {}, 0.95, 0.0)}, Measure::Coverage);
        CHECK(rows[0].lower == 0.95);
        CHECK(rows[0].upper == 0.95);
    }
    SUBCASE("level") {
        const auto rows = forest_lolly_data({est(Measure::Bias, "1", {}, 0.0, 1.0)}, Measure::Bias, 0.90);
        CHECK(rows[0].upper == doctest::Approx(1.6448536269514722).epsilon(1e-12));
        CHECK(code_of([] { forest_lolly_data({est(Measure::Bias, "1", {}, 0, 1)}, Measure::Bias, 1.0); }) ==
              ErrorCode::InvalidArgument);
    }
    SUBCASE("measures without an mcse are unavailable") {
        CHECK(code_of([] { forest_lolly_data({est(Measure::MedianEst, "1", {}, 1, std::nullopt)}, Measure::MedianEst); }) ==
              ErrorCode::MeasureUnavailable);
        CHECK(code_of([] { forest_lolly_data({est(Measure::Bias, "1", {}, 1, 0.1)}, Measure::EmpSE); }) ==
              ErrorCode::MeasureUnavailable);
    }
    SUBCASE("intervals are exactly symmetric") {
        std::mt19937_64 gen(11);
        std::uniform_real_distribution<double> u(-3, 3), e(-12, 3);
        std::vector<PerformanceEstimate> many;
        for (int i = 0; i < 20000; ++i)
            many.push_back(est(Measure::Bias, std::to_string(i), {}, u(gen) * std::pow(10, e(gen)),
                               std::fabs(u(gen)) * std::pow(10, e(gen))));
        for (const auto& r : forest_lolly_data(many, Measure::Bias)) {
            CHECK(r.upper - r.value == r.value - r.lower);
            CHECK(r.upper - r.value == r.half_width);
            // Rounding moves the half-width by at most an ulp of the bounds.
            const double ulp = std::nextafter(std::fabs(r.value) + r.half_width, INFINITY) - (std::fabs(r.value) + r.half_width);
            CHECK(std::fabs(r.half_width - 1.959963984540054 * r.mcse) <= 2 * ulp + 1e-15 * r.half_width);
        }
    }
}

TEST_CASE("heat tiles equal the table values") {
    const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());
    ComputeOptions opt;
    opt.measures = {Measure::Bias};
    const auto all = compute_all(ds, opt);
    const auto tiles = heat_data(all, Measure::Bias);
    REQUIRE(tiles.size() == 6);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        CHECK(tiles[i].value == *all[i].value);
        CHECK(tiles[i].method == all[i].stratum.method);
    }
    CHECK(heat_data({est(Measure::MSE, "1", {}, 3, 1)}, Measure::MSE).size() == 1);
    CHECK(code_of([&] { heat_data(all, Measure::Power); }) == ErrorCode::MeasureUnavailable);
}

TEST_CASE("zip plot data") {
    SUBCASE("two repetitions, one covering") {
        RawTable t;
        t.header = {"est", "se"};
        t.rows = {{"0.1", "0.1"}, {"0.5", "0.1"}};
        VariableMapping m;
        m.estimate_col = "est";
        m.se_col = "se";
        m.truth = FixedTruth{0.0};
        const auto z = zip_data(apply_mapping(t, m), CriticalValueRule{});
        REQUIRE(z.size() == 1);
        REQUIRE(z[0].stripes.size() == 2);
        CHECK(z[0].stripes[0].rank_percentile == 50.0);
        CHECK(z[0].stripes[0].covers);
        CHECK(z[0].stripes[1].rank_percentile == 100.0);
        CHECK_FALSE(z[0].stripes[1].covers);
        CHECK(z[0].stripes[1].z == doctest::Approx(5.0));
        CHECK(z[0].coverage == 0.5);
    }
    SUBCASE("coverage identity and percentile permutation on the stand-in") {
        const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());
        const auto rule = CriticalValueRule::from_mapping(ds.mapping());
        const auto zs = zip_data(ds, rule);
        REQUIRE(zs.size() == 6);
        for (const auto& z : zs) {
            REQUIRE(z.stripes.size() == 1600);
            const auto* s = ds.find_stratum(z.key);
            const auto cov = coverage(PerformanceInput::from_stratum(ds, *s), rule);
            CHECK(z.coverage == *cov.value);
            std::size_t hits = 0;
            std::set<double> pct;
            for (std::size_t i = 0; i < z.stripes.size(); ++i) {
                hits += z.stripes[i].covers;
                pct.insert(z.stripes[i].rank_percentile);
                if (i) CHECK(z.stripes[i].z >= z.stripes[i - 1].z);
            }
            CHECK(static_cast<double>(hits) / 1600.0 == *cov.value);
            CHECK(pct.size() == 1600);
            for (std::size_t i = 1; i <= 1600; ++i) CHECK(pct.count(100.0 * static_cast<double>(i) / 1600.0) == 1);
        }
        CHECK(zip_data(ds, rule, std::vector<std::string>{"2"}, std::string("1")).size() == 1);
    }
    SUBCASE("supplied bounds without standard errors") {
        RawTable t;
        t.header = {"est", "lo", "hi"};
        t.rows = {{"0", "-1", "1"}, {"1.5", "0.5", "2.5"}, {"-1", "-3", "1"}};
        VariableMapping m;
        m.estimate_col = "est";
        m.ci_cols = std::pair{std::string("lo"), std::string("hi")};
        m.truth = FixedTruth{0.0};
        const auto ds = apply_mapping(t, m);
        const auto z = zip_data(ds, CriticalValueRule::from_mapping(ds.mapping()));
        REQUIRE(z[0].stripes.size() == 3);
        CHECK(z[0].coverage == doctest::Approx(2.0 / 3.0));
        CHECK(z[0].stripes.back().rep_id == "2");  // the non-covering interval is most significant
    }
    SUBCASE("errors") {
        auto m = standin_mapping();
        m.truth = std::monostate{};
        const auto ds = apply_mapping(fixtures::case_study_standin(1, 10), m);
        CHECK(code_of([&] { zip_data(ds, CriticalValueRule{}); }) == ErrorCode::NoTruth);
        auto m2 = standin_mapping();
        m2.se_col.reset();
        const auto ds2 = apply_mapping(fixtures::case_study_standin(1, 10), m2);
        CHECK(code_of([&] { zip_data(ds2, CriticalValueRule{}); }) == ErrorCode::NoIntervals);
    }
}

TEST_CASE("nested loop series") {
    std::vector<PerformanceEstimate> e;
    // Declared factors: n (inner by default order reversed below), p.
    int k = 0;
    for (const std::string n : {"50", "100"})
        for (const std::string p : {"0.2", "0.1"})
            for (const std::string method : {"A", "B"}) e.push_back(est(Measure::Bias, method, {n, p}, ++k * 0.01, 0.001));

    SUBCASE("two factors with two levels give AABB for the outer factor") {
        const auto s = nested_loop_data(e, {"n", "p"}, Measure::Bias);
        REQUIRE(s.dgm_order.size() == 4);
        CHECK(s.dgm_order[0] == std::vector<std::string>{"50", "0.1"});
        CHECK(s.dgm_order[1] == std::vector<std::string>{"50", "0.2"});
        CHECK(s.dgm_order[2] == std::vector<std::string>{"100", "0.1"});
        CHECK(s.dgm_order[3] == std::vector<std::string>{"100", "0.2"});
        REQUIRE(s.factor_ribbons.size() == 2);
        const auto& outer = s.factor_ribbons[0].y;
        CHECK(outer[0] == outer[1]);
        CHECK(outer[2] == outer[3]);
        CHECK(outer[0] != outer[2]);
        CHECK(s.methods == std::vector<std::string>{"A", "B"});
        for (const auto& v : s.value_steps) CHECK(v.size() == 4);
        CHECK(s.value_steps[0][0] == doctest::Approx(0.03));  // n=50, p=0.1, A
        // Ribbons sit in the band below the minimum, 25% of the range tall.
        CHECK(s.band_upper == doctest::Approx(0.01));
        CHECK(s.band_lower == doctest::Approx(0.01 - 0.25 * 0.07));
        for (const auto& r : s.factor_ribbons)
            for (double y : r.y) CHECK((y >= s.band_lower && y <= s.band_upper));
    }
    SUBCASE("factor order is a bijection and adjacent positions differ in the inner factor") {
        for (const auto& order : {std::vector<std::string>{"n", "p"}, std::vector<std::string>{"p", "n"}}) {
            const auto s = nested_loop_data(e, {"n", "p"}, Measure::Bias, order);
            std::set<std::vector<std::string>> seen(s.dgm_order.begin(), s.dgm_order.end());
            CHECK(seen.size() == 4);
            for (std::size_t i = 1; i < s.dgm_order.size(); ++i) {
                const bool outer_changes = s.dgm_order[i][0] != s.dgm_order[i - 1][0];
                CHECK((outer_changes || s.dgm_order[i][1] != s.dgm_order[i - 1][1]));
            }
            CHECK(s.factor_ribbons[0].factor == order[0]);
        }
    }
    SUBCASE("a single factor gives one ribbon") {
        const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());
        ComputeOptions opt;
        opt.measures = {Measure::Bias};
        const auto s = nested_loop_data(compute_all(ds, opt), {"dgm"}, Measure::Bias);
        CHECK(s.dgm_order.size() == 2);
        CHECK(s.factor_ribbons.size() == 1);
        CHECK(s.methods.size() == 3);
        for (const auto& v : s.value_steps) CHECK(v.size() == 2);
    }
    SUBCASE("errors") {
        CHECK(code_of([&] { nested_loop_data(e, {}, Measure::Bias); }) == ErrorCode::InvalidArgument);
        CHECK(code_of([&] { nested_loop_data(e, {"n", "p"}, Measure::Bias, {"n"}); }) == ErrorCode::InvalidArgument);
        CHECK(code_of([&] { nested_loop_data(e, {"n", "p"}, Measure::Bias, {"n", "q"}); }) == ErrorCode::InvalidArgument);
        CHECK(code_of([&] { nested_loop_data(e, {"n", "p"}, Measure::MSE); }) == ErrorCode::MeasureUnavailable);
    }
}

TEST_CASE("build_plot dispatches every kind") {
    const auto ds = apply_mapping(fixtures::case_study_standin(4, 200), standin_mapping());
    for (auto k : {PlotKind::Scatter, PlotKind::BlandAltman, PlotKind::Ridgeline, PlotKind::DensityPairs,
                   PlotKind::Forest, PlotKind::Lolly, PlotKind::Heat, PlotKind::Zip, PlotKind::NestedLoop}) {
        PlotSpec spec;
        spec.kind = k;
        const auto data = build_plot(ds, spec);
        const auto svg = render_svg(spec, data);
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find("width=\"800\" height=\"500\"") != std::string::npos);
    }
    PlotSpec forest;
    forest.kind = PlotKind::Forest;
    forest.measure = Measure::Bias;
    CHECK(std::get<std::vector<ForestRow>>(build_plot(ds, forest)).size() == 6);
    forest.dgm = std::vector<std::string>{"2"};
    CHECK(std::get<std::vector<ForestRow>>(build_plot(ds, forest)).size() == 3);
    forest.method = "1";
    CHECK(std::get<std::vector<ForestRow>>(build_plot(ds, forest)).size() == 1);
    forest.measure = Measure::RelPrec;  // no reference method mapped
    CHECK(code_of([&] { build_plot(ds, forest); }) != ErrorCode::InvalidArgument);
}

TEST_CASE("svg rendering") {
    const auto ds = apply_mapping(fixtures::case_study_standin(), standin_mapping());
    PlotSpec spec;
    spec.kind = PlotKind::Forest;
    spec.measure = Measure::Bias;
    spec.dgm = std::vector<std::string>{"2"};
    spec.title = "Bias by method";
    spec.xlab = "Bias (95% CI) & more";
    spec.ylab = "Method <name>";
    spec.width = 640;
    spec.height = 420;
    const auto data = build_plot(ds, spec);

    const auto svg = render_svg(spec, data);
    CHECK(svg == render_svg(spec, data));
    CHECK(svg == render_svg(spec, build_plot(ds, spec)));
    CHECK(count(svg, "<g class=\"marker\"") == 3);
    CHECK(svg.find("width=\"640\" height=\"420\"") != std::string::npos);
    CHECK(svg.find(">Bias by method</text>") != std::string::npos);
    CHECK(svg.find(">Bias (95% CI) &amp; more</text>") != std::string::npos);
    CHECK(svg.find(">Method &lt;name&gt;</text>") != std::string::npos);

    SUBCASE("themes change styling, not data") {
        auto dark = spec;
        dark.theme = "dark";
        CHECK(is_known_theme("dark"));
        CHECK(is_known_theme("minimal"));
        CHECK_FALSE(is_known_theme("neon"));
        const auto dark_svg = render_svg(dark, build_plot(ds, dark));
        CHECK(dark_svg != svg);
        CHECK(count(dark_svg, "<g class=\"marker\"") == 3);
        const auto a = std::get<std::vector<ForestRow>>(build_plot(ds, dark));
        const auto b = std::get<std::vector<ForestRow>>(data);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value == b[i].value);
        dark.theme = "neon";
        CHECK(code_of([&] { render_svg(dark, data); }) == ErrorCode::InvalidArgument);
    }
    SUBCASE("empty data") {
        CHECK(code_of([&] { render_svg(spec, std::vector<ForestRow>{}); }) == ErrorCode::EmptyPlot);
        auto z = spec;
        z.kind = PlotKind::Zip;
        CHECK(code_of([&] { render_svg(z, std::vector<ZipStratum>{}); }) == ErrorCode::EmptyPlot);
        CHECK(code_of([&] { render_svg(z, data); }) == ErrorCode::InvalidArgument);
    }
}

TEST_CASE("svg converter hook") {
    PlotSpec spec;
    spec.kind = PlotKind::Heat;
    spec.dpi = 300;
    const auto svg = render_svg(spec, std::vector<HeatTile>{{{"1"}, "a", 0.5}, {{"1"}, "b", 0.25}});
    CHECK(convert_svg(svg, "cat", "svg", spec) == svg);
    CHECK(convert_svg(svg, "printf '%s %s %s %s' \"$SIMLENS_FORMAT\" \"$SIMLENS_DPI\" \"$SIMLENS_WIDTH\" \"$SIMLENS_HEIGHT\"",
                      "png", spec) == "png 300 800 500");
    CHECK(convert_svg(svg, "wc -c | tr -d ' \\n'", "x", spec) == std::to_string(svg.size()));
    CHECK(code_of([&] { convert_svg(svg, "cat >/dev/null; exit 3", "png", spec); }) == ErrorCode::ConverterFailed);
    CHECK(code_of([&] { convert_svg(svg, "exit 0", "png", spec); }) == ErrorCode::ConverterFailed);
    CHECK(code_of([&] { convert_svg(svg, "/nonexistent/converter", "png", spec); }) == ErrorCode::ConverterFailed);
    // Large inputs must not deadlock on full pipes.
    std::string big(3'000'000, 'x');
    CHECK(convert_svg(big, "cat", "svg", spec).size() == big.size());
}
