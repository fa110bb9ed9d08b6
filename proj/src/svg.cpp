// Static SVG rendering of PlotData. Output depends only on the inputs: no
// clocks, no random ids, fixed number formatting.

#include <fcntl.h>
#include <poll.h>
#include <pthread.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <limits>

#include "simlens/error.hpp"
#include "simlens/plotdata.hpp"

namespace simlens {

namespace {

struct Theme {
    const char* name;
    const char* background;
    const char* foreground;
    const char* grid;  // nullptr: no grid
    double axis_width;
    std::array<const char*, 8> palette;
    const char* heat_low;
    const char* heat_high;
};

constexpr Theme kThemes[] = {
    {"default", "#ffffff", "#222222", "#e5e5e5", 1.0,
     {"#0072B2", "#D55E00", "#009E73", "#CC79A7", "#E69F00", "#56B4E9", "#F0E442", "#000000"}, "#f7fbff", "#08306b"},
    {"minimal", "#ffffff", "#333333", nullptr, 0.6,
     {"#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860", "#DA8BC3", "#8C8C8C"}, "#ffffff", "#3b3b3b"},
    {"dark", "#1e1e1e", "#e6e6e6", "#3a3a3a", 1.0,
     {"#56B4E9", "#E69F00", "#009E73", "#F0E442", "#CC79A7", "#D55E00", "#0072B2", "#ffffff"}, "#202a36", "#9ecae1"},
};

const Theme& theme_named(std::string_view name) {
    for (const auto& t : kThemes)
        if (name == t.name) return t;
    throw Error(ErrorCode::InvalidArgument, "unknown theme", std::string(name));
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string label_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    std::string s = buf;
    if (s == "-0") s = "0";
    return s;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
}

std::string group_label(const std::vector<std::string>& dgm, const std::string& method = {}) {
    std::string s = dgm.empty() ? "" : "DGM " + join(dgm);
    if (!method.empty()) s += (s.empty() ? "" : " · ") + method;
    return s;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!(lo <= hi)) lo = 0, hi = 1;
        if (hi == lo) {
            const double d = lo != 0.0 ? std::fabs(lo) * 0.1 : 1.0;
            lo -= d;
            hi += d;
        } else {
            const double d = (hi - lo) * 0.05;
            lo -= d;
            hi += d;
        }
    }
};

std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    const double span = hi - lo;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step)
        t.push_back(std::fabs(v) < step * 1e-9 ? 0.0 : v);
    return t;
}

class Canvas {
public:
    Canvas(const PlotSpec& spec, const Theme& theme, bool legend)
        : spec_(spec), theme_(theme), w_(spec.width), h_(spec.height) {
        if (w_ < 100 || h_ < 100) throw Error(ErrorCode::InvalidArgument, "plot size must be at least 100x100");
        left = 80;
        right = w_ - (legend ? 170 : 24);
        top = spec.title.empty() ? 24 : 48;
        bottom = h_ - 56;
        out_ += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + std::to_string(w_) +
                "\" height=\"" + std::to_string(h_) + "\" viewBox=\"0 0 " + std::to_string(w_) + " " +
                std::to_string(h_) + "\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"12\">\n";
        out_ += "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + std::to_string(w_) + "\" height=\"" +
                std::to_string(h_) + "\" fill=\"" + theme.background + "\"/>\n";
        if (!spec.title.empty()) text(w_ / 2.0, 28, spec.title, "middle", 15, "title");
    }

    double left, right, top, bottom;

    const char* color(std::size_t i) const { return theme_.palette[i % theme_.palette.size()]; }
    const Theme& theme() const { return theme_; }

    void raw(const std::string& s) { out_ += s; }

    void line(double x1, double y1, double x2, double y2, const char* stroke, double width = 1.0,
              const char* dash = nullptr, const char* cls = nullptr) {
        out_ += "<line";
        if (cls) out_ += std::string(" class=\"") + cls + "\"";
        out_ += " x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
                "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"";
        if (dash) out_ += std::string(" stroke-dasharray=\"") + dash + "\"";
        out_ += "/>\n";
    }
    void circle(double x, double y, double r, const char* fill, double opacity = 1.0) {
        out_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"";
        if (opacity < 1.0) out_ += " fill-opacity=\"" + num(opacity) + "\"";
        out_ += "/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill, const char* cls = nullptr) {
        out_ += "<rect";
        if (cls) out_ += std::string(" class=\"") + cls + "\"";
        out_ += " x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
                "\" fill=\"" + fill + "\"/>\n";
    }
    void path(const std::string& d, const char* stroke, const char* fill, double width = 1.5, double fill_opacity = 1.0) {
        out_ += "<path d=\"" + d + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\" fill=\"" + fill + "\"";
        if (fill_opacity < 1.0) out_ += " fill-opacity=\"" + num(fill_opacity) + "\"";
        out_ += "/>\n";
    }
    void text(double x, double y, std::string_view s, const char* anchor = "start", int size = 12,
              const char* cls = nullptr, double rotate = 0.0, const char* fill = nullptr) {
        out_ += "<text";
        if (cls) out_ += std::string(" class=\"") + cls + "\"";
        out_ += " x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\" font-size=\"" +
                std::to_string(size) + "\" fill=\"" + (fill ? fill : theme_.foreground) + "\"";
        if (rotate != 0.0) out_ += " transform=\"rotate(" + num(rotate) + " " + num(x) + " " + num(y) + ")\"";
        out_ += ">" + xml_escape(s) + "</text>\n";
    }
    void open_group(const std::string& cls, const std::string& label = {}) {
        out_ += "<g class=\"" + xml_escape(cls) + "\"";
        if (!label.empty()) out_ += " data-label=\"" + xml_escape(label) + "\"";
        out_ += ">\n";
    }
    void close_group() { out_ += "</g>\n"; }

    // Continuous x and y axes over the plot area.
    void axes(const Range& xr, const Range& yr, const std::string& xlab, const std::string& ylab) {
        xr_ = xr;
        yr_ = yr;
        for (double t : nice_ticks(xr.lo, xr.hi)) {
            const double x = sx(t);
            if (theme_.grid) line(x, top, x, bottom, theme_.grid, 0.5);
            line(x, bottom, x, bottom + 4, theme_.foreground, theme_.axis_width);
            text(x, bottom + 17, label_num(t), "middle", 11);
        }
        for (double t : nice_ticks(yr.lo, yr.hi)) {
            const double y = sy(t);
            if (theme_.grid) line(left, y, right, y, theme_.grid, 0.5);
            line(left - 4, y, left, y, theme_.foreground, theme_.axis_width);
            text(left - 7, y + 4, label_num(t), "end", 11);
        }
        frame(xlab, ylab);
    }
    // Continuous x axis with categorical rows on y.
    void axes_categorical_y(const Range& xr, const std::vector<std::string>& rows, const std::string& xlab,
                            const std::string& ylab) {
        xr_ = xr;
        for (double t : nice_ticks(xr.lo, xr.hi)) {
            const double x = sx(t);
            if (theme_.grid) line(x, top, x, bottom, theme_.grid, 0.5);
            line(x, bottom, x, bottom + 4, theme_.foreground, theme_.axis_width);
            text(x, bottom + 17, label_num(t), "middle", 11);
        }
        for (std::size_t i = 0; i < rows.size(); ++i) text(left - 7, band_centre(i, rows.size()) + 4, rows[i], "end", 11);
        frame(xlab, ylab);
    }
    void frame(const std::string& xlab, const std::string& ylab) {
        line(left, bottom, right, bottom, theme_.foreground, theme_.axis_width, nullptr, "axis");
        line(left, top, left, bottom, theme_.foreground, theme_.axis_width, nullptr, "axis");
        if (!xlab.empty()) text((left + right) / 2.0, h_ - 14.0, xlab, "middle", 13, "xlab");
        if (!ylab.empty()) text(18, (top + bottom) / 2.0, ylab, "middle", 13, "ylab", -90.0);
    }

    double sx(double v) const { return left + (v - xr_.lo) / (xr_.hi - xr_.lo) * (right - left); }
    double sy(double v) const { return bottom - (v - yr_.lo) / (yr_.hi - yr_.lo) * (bottom - top); }
    double band_centre(std::size_t i, std::size_t n) const {
        return top + (static_cast<double>(i) + 0.5) * (bottom - top) / static_cast<double>(n);
    }

    void legend(const std::vector<std::string>& labels) {
        double y = top + 8;
        for (std::size_t i = 0; i < labels.size(); ++i, y += 18) {
            rect(right + 16, y - 9, 10, 10, color(i), "legend-key");
            text(right + 32, y, labels[i], "start", 11, "legend");
        }
    }

    std::string finish() {
        out_ += "</svg>\n";
        return std::move(out_);
    }

private:
    const PlotSpec& spec_;
    const Theme& theme_;
    int w_, h_;
    Range xr_, yr_;
    std::string out_;
};

std::string pick(const std::string& given, const std::string& fallback) { return given.empty() ? fallback : given; }

std::string quantity_name(Quantity q) { return q == Quantity::Estimate ? "estimate" : "standard error"; }

std::string render_pairs(const PlotSpec& spec, const Theme& th, const std::vector<EstimatePairs>& groups) {
    Range r;
    for (const auto& g : groups)
        for (const auto& p : g.points) r.add(p.a), r.add(p.b);
    r.pad();
    Canvas c(spec, th, true);
    const auto& g0 = groups.front();
    c.axes(r, r, pick(spec.xlab, g0.method_a + " " + quantity_name(spec.quantity)),
           pick(spec.ylab, g0.method_b + " " + quantity_name(spec.quantity)));
    c.line(c.sx(r.lo), c.sy(r.lo), c.sx(r.hi), c.sy(r.hi), th.foreground, 0.8, "4 3", "diagonal");
    const bool dense = spec.kind == PlotKind::DensityPairs;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        c.open_group("series", group_label(groups[i].dgm));
        for (const auto& p : groups[i].points) c.circle(c.sx(p.a), c.sy(p.b), dense ? 1.5 : 2.5, c.color(i), dense ? 0.25 : 0.6);
        c.close_group();
        labels.push_back(pick(group_label(groups[i].dgm), "all"));
    }
    c.legend(labels);
    return c.finish();
}

std::string render_bland_altman(const PlotSpec& spec, const Theme& th, const std::vector<BlandAltmanData>& groups) {
    Range xr, yr;
    for (const auto& g : groups) {
        for (const auto& p : g.points) xr.add(p.mean), yr.add(p.diff);
        if (g.lower) yr.add(*g.lower), yr.add(*g.upper);
    }
    xr.pad();
    yr.pad();
    Canvas c(spec, th, true);
    c.axes(xr, yr, pick(spec.xlab, "Mean of the two methods"), pick(spec.ylab, "Difference between methods"));
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& g = groups[i];
        c.open_group("series", group_label(g.dgm));
        for (const auto& p : g.points) c.circle(c.sx(p.mean), c.sy(p.diff), 2.5, c.color(i), 0.6);
        c.line(c.left, c.sy(g.mean_diff), c.right, c.sy(g.mean_diff), c.color(i), 1.2, nullptr, "mean-diff");
        if (g.lower) {
            c.line(c.left, c.sy(*g.lower), c.right, c.sy(*g.lower), c.color(i), 1.0, "5 4", "limit");
            c.line(c.left, c.sy(*g.upper), c.right, c.sy(*g.upper), c.color(i), 1.0, "5 4", "limit");
        }
        c.close_group();
        labels.push_back(pick(group_label(g.dgm), "all"));
    }
    c.legend(labels);
    return c.finish();
}

std::string render_ridgeline(const PlotSpec& spec, const Theme& th, const std::vector<RidgelineGroup>& groups) {
    Range xr;
    double dmax = 0.0;
    for (const auto& g : groups) {
        for (double v : g.sample) xr.add(v);
        for (double v : g.grid) xr.add(v);
        for (double d : g.density) dmax = std::max(dmax, d);
    }
    xr.pad();
    std::vector<std::string> rows;
    for (const auto& g : groups) rows.push_back(group_label(g.dgm, g.method));
    Canvas c(spec, th, false);
    c.left = 150;
    // Headroom so the top ridge (up to 1.6 bands tall) stays inside the frame.
    const double n = static_cast<double>(groups.size());
    c.top += (c.bottom - c.top) * 0.6 / (n + 0.6);
    c.axes_categorical_y(xr, rows, pick(spec.xlab, quantity_name(spec.quantity)), spec.ylab);
    const double band = (c.bottom - c.top) / static_cast<double>(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& g = groups[i];
        const double base = c.band_centre(i, groups.size()) + band / 2.0;
        c.open_group("ridge", rows[i]);
        if (!g.raw_only && dmax > 0.0) {
            std::string d = "M" + num(c.sx(g.grid.front())) + "," + num(base);
            for (std::size_t k = 0; k < g.grid.size(); ++k)
                d += " L" + num(c.sx(g.grid[k])) + "," + num(base - g.density[k] / dmax * band * 1.6);
            d += " L" + num(c.sx(g.grid.back())) + "," + num(base) + " Z";
            c.path(d, c.color(i), c.color(i), 1.0, 0.55);
        } else {
            for (double v : g.sample) c.line(c.sx(v), base, c.sx(v), base - band * 0.4, c.color(i), 1.0);
        }
        c.close_group();
    }
    return c.finish();
}

std::string render_forest(const PlotSpec& spec, const Theme& th, const std::vector<ForestRow>& rows) {
    const Measure m = spec.measure.value_or(Measure::Bias);
    const bool lolly = spec.kind == PlotKind::Lolly;
    const bool zero_ref = m == Measure::Bias || m == Measure::RelPrec;
    Range xr;
    for (const auto& r : rows) xr.add(r.lower), xr.add(r.upper), xr.add(r.value);
    if (zero_ref || lolly) xr.add(0.0);
    xr.pad();
    std::vector<std::string> labels;
    for (const auto& r : rows) labels.push_back(group_label(r.dgm, r.method));
    Canvas c(spec, th, false);
    c.left = 150;
    c.axes_categorical_y(xr, labels, pick(spec.xlab, std::string(measure_name(m))), spec.ylab);
    const double ref = (zero_ref || lolly) ? 0.0 : xr.lo;
    if (zero_ref) c.line(c.sx(0.0), c.top, c.sx(0.0), c.bottom, th.foreground, 0.8, "4 3", "reference");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double y = c.band_centre(i, rows.size());
        c.open_group("marker", labels[i]);
        if (lolly) c.line(c.sx(ref), y, c.sx(r.value), y, c.color(0), 1.2, nullptr, "stick");
        c.line(c.sx(r.lower), y, c.sx(r.upper), y, c.color(lolly ? 1 : 0), lolly ? 3.0 : 1.5, nullptr, "interval");
        c.circle(c.sx(r.value), y, 4.0, c.color(0));
        c.close_group();
    }
    return c.finish();
}

std::string mix(const char* a, const char* b, double t) {
    auto channel = [](const char* hex, int k) { return std::stoi(std::string(hex + 1 + 2 * k, 2), nullptr, 16); };
    char buf[8];
    int rgb[3];
    for (int k = 0; k < 3; ++k)
        rgb[k] = static_cast<int>(std::lround(channel(a, k) + (channel(b, k) - channel(a, k)) * t));
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

std::string render_heat(const PlotSpec& spec, const Theme& th, const std::vector<HeatTile>& tiles) {
    std::vector<std::string> methods;
    std::vector<std::vector<std::string>> dgms;
    Range vr;
    for (const auto& t : tiles) {
        if (std::find(methods.begin(), methods.end(), t.method) == methods.end()) methods.push_back(t.method);
        if (std::find(dgms.begin(), dgms.end(), t.dgm) == dgms.end()) dgms.push_back(t.dgm);
        vr.add(t.value);
    }
    std::sort(methods.begin(), methods.end(), [](const auto& a, const auto& b) { return level_less(a, b); });
    std::sort(dgms.begin(), dgms.end(), dgm_less);
    std::vector<std::string> rows;
    for (const auto& d : dgms) rows.push_back(pick(group_label(d), "all"));
    Canvas c(spec, th, false);
    c.left = 150;
    const double cw = (c.right - c.left) / static_cast<double>(methods.size());
    const double rh = (c.bottom - c.top) / static_cast<double>(dgms.size());
    for (std::size_t i = 0; i < rows.size(); ++i) c.text(c.left - 7, c.band_centre(i, rows.size()) + 4, rows[i], "end", 11);
    for (std::size_t j = 0; j < methods.size(); ++j)
        c.text(c.left + (static_cast<double>(j) + 0.5) * cw, c.bottom + 17, methods[j], "middle", 11);
    for (const auto& t : tiles) {
        const auto j = static_cast<double>(std::find(methods.begin(), methods.end(), t.method) - methods.begin());
        const auto i = static_cast<double>(std::find(dgms.begin(), dgms.end(), t.dgm) - dgms.begin());
        const double u = vr.hi > vr.lo ? (t.value - vr.lo) / (vr.hi - vr.lo) : 0.5;
        c.open_group("tile", group_label(t.dgm, t.method));
        c.rect(c.left + j * cw + 1, c.top + i * rh + 1, cw - 2, rh - 2, mix(th.heat_low, th.heat_high, u));
        c.text(c.left + (j + 0.5) * cw, c.top + (i + 0.5) * rh + 4, label_num(t.value), "middle", 11, "value", 0.0,
               u > 0.55 ? "#ffffff" : "#111111");
        c.close_group();
    }
    c.frame(pick(spec.xlab, "Method"), spec.ylab);
    return c.finish();
}

std::string render_zip(const PlotSpec& spec, const Theme& th, const std::vector<ZipStratum>& strata) {
    Range xr;
    for (const auto& s : strata)
        for (const auto& st : s.stripes) xr.add(st.lower), xr.add(st.upper), xr.add(st.truth);
    xr.pad();
    Canvas c(spec, th, true);
    const double full_left = c.left, full_right = c.right;
    const double gap = 12.0;
    const double fw = (full_right - full_left - gap * static_cast<double>(strata.size() - 1)) / static_cast<double>(strata.size());
    Range yr;
    yr.lo = 0.0;
    yr.hi = 100.0;
    for (std::size_t k = 0; k < strata.size(); ++k) {
        const auto& s = strata[k];
        c.left = full_left + static_cast<double>(k) * (fw + gap);
        c.right = c.left + fw;
        c.axes(xr, yr, k == 0 ? pick(spec.xlab, "Confidence interval") : "",
               k == 0 ? pick(spec.ylab, "Centile of ranked |z|") : "");
        c.text((c.left + c.right) / 2.0, c.top - 6, group_label(s.key.dgm, s.key.method), "middle", 11, "facet");
        c.open_group("stripes", group_label(s.key.dgm, s.key.method));
        for (const auto& st : s.stripes) {
            const double y = c.sy(st.rank_percentile);
            c.line(c.sx(st.lower), y, c.sx(st.upper), y, c.color(st.covers ? 0 : 1), 0.6);
        }
        c.close_group();
        if (!s.stripes.empty()) {
            const double t = s.stripes.front().truth;
            c.line(c.sx(t), c.top, c.sx(t), c.bottom, th.foreground, 1.0, "4 3", "truth");
        }
    }
    c.left = full_left;
    c.right = full_right;
    c.legend({"covers", "does not cover"});
    return c.finish();
}

std::string render_nested_loop(const PlotSpec& spec, const Theme& th, const NestedLoopSeries& s) {
    const std::size_t n = s.dgm_order.size();
    Range xr;
    xr.lo = -0.5;
    xr.hi = static_cast<double>(n) - 0.5;
    Range yr;
    for (const auto& m : s.value_steps)
        for (const auto& v : m)
            if (v) yr.add(*v);
    yr.add(s.band_lower);
    yr.add(s.band_upper);
    yr.pad();
    Canvas c(spec, th, true);
    c.axes(xr, yr, pick(spec.xlab, "DGM (" + join(s.factor_order, " > ") + ")"),
           pick(spec.ylab, std::string(measure_name(spec.measure.value_or(Measure::Bias)))));
    auto step = [&](const std::vector<std::optional<double>>& ys) {
        std::string d;
        bool pen = false;
        for (std::size_t p = 0; p < ys.size(); ++p) {
            if (!ys[p]) {
                pen = false;
                continue;
            }
            const double y = c.sy(*ys[p]);
            d += (pen ? " V" + num(y) : (d.empty() ? "M" : " M") + num(c.sx(static_cast<double>(p) - 0.5)) + "," + num(y));
            d += " H" + num(c.sx(static_cast<double>(p) + 0.5));
            pen = true;
        }
        return d;
    };
    for (std::size_t m = 0; m < s.methods.size(); ++m) {
        c.open_group("series", s.methods[m]);
        c.path(step(s.value_steps[m]), c.color(m), "none", 1.8);
        c.close_group();
    }
    for (const auto& rb : s.factor_ribbons) {
        std::vector<std::optional<double>> ys(rb.y.begin(), rb.y.end());
        c.open_group("ribbon", rb.factor);
        c.path(step(ys), th.foreground, "none", 0.9);
        c.text(c.left + 4, c.sy(*std::max_element(rb.y.begin(), rb.y.end())) - 3, rb.factor + ": " + join(rb.levels),
               "start", 10, "ribbon-label");
        c.close_group();
    }
    c.legend(s.methods);
    return c.finish();
}

template <class T>
const T& expect(const PlotData& data) {
    if (const auto* p = std::get_if<T>(&data)) return *p;
    throw Error(ErrorCode::InvalidArgument, "plot data does not match the plot kind");
}

template <class T>
void non_empty(const T& v) {
    if (v.empty()) throw Error(ErrorCode::EmptyPlot, "nothing to plot");
}

}  // namespace

bool is_known_theme(std::string_view theme) {
    return std::any_of(std::begin(kThemes), std::end(kThemes), [&](const Theme& t) { return theme == t.name; });
}

std::string render_svg(const PlotSpec& spec, const PlotData& data) {
    const Theme& th = theme_named(spec.theme);
    switch (spec.kind) {
        case PlotKind::Scatter:
        case PlotKind::DensityPairs: {
            const auto& g = expect<std::vector<EstimatePairs>>(data);
            non_empty(g);
            if (std::all_of(g.begin(), g.end(), [](const auto& x) { return x.points.empty(); }))
                throw Error(ErrorCode::EmptyPlot, "nothing to plot");
            return render_pairs(spec, th, g);
        }
        case PlotKind::BlandAltman: {
            const auto& g = expect<std::vector<BlandAltmanData>>(data);
            non_empty(g);
            return render_bland_altman(spec, th, g);
        }
        case PlotKind::Ridgeline: {
            const auto& g = expect<std::vector<RidgelineGroup>>(data);
            non_empty(g);
            return render_ridgeline(spec, th, g);
        }
        case PlotKind::Forest:
        case PlotKind::Lolly: {
            const auto& r = expect<std::vector<ForestRow>>(data);
            non_empty(r);
            return render_forest(spec, th, r);
        }
        case PlotKind::Heat: {
            const auto& t = expect<std::vector<HeatTile>>(data);
            non_empty(t);
            return render_heat(spec, th, t);
        }
        case PlotKind::Zip: {
            const auto& z = expect<std::vector<ZipStratum>>(data);
            non_empty(z);
            return render_zip(spec, th, z);
        }
        case PlotKind::NestedLoop: {
            const auto& s = expect<NestedLoopSeries>(data);
            if (s.dgm_order.empty()) throw Error(ErrorCode::EmptyPlot, "nothing to plot");
            return render_nested_loop(spec, th, s);
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown plot kind");
}

std::string convert_svg(const std::string& svg, const std::string& command, const std::string& format,
                        const PlotSpec& spec) {
    // Everything the child needs is prepared before fork: only
    // async-signal-safe calls may follow it in a threaded process.
    std::vector<std::string> env_strings = {
        "SIMLENS_FORMAT=" + format, "SIMLENS_DPI=" + std::to_string(spec.dpi),
        "SIMLENS_WIDTH=" + std::to_string(spec.width), "SIMLENS_HEIGHT=" + std::to_string(spec.height)};
    for (char** e = environ; *e; ++e)
        if (std::strncmp(*e, "SIMLENS_", 8) != 0) env_strings.emplace_back(*e);
    std::vector<char*> envp;
    for (auto& e : env_strings) envp.push_back(e.data());
    envp.push_back(nullptr);
    const char* argv[] = {"sh", "-c", command.c_str(), nullptr};

    int in[2], out[2], err[2];
    if (pipe2(in, O_CLOEXEC) || pipe2(out, O_CLOEXEC) || pipe2(err, O_CLOEXEC)) throw Error(ErrorCode::ConverterFailed, "cannot create pipes");
    const pid_t pid = fork();
    if (pid < 0) throw Error(ErrorCode::ConverterFailed, "cannot start converter");
    if (pid == 0) {
        dup2(in[0], 0);
        dup2(out[1], 1);
        dup2(err[1], 2);
        for (int fd : {in[0], in[1], out[0], out[1], err[0], err[1]}) close(fd);
        execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
        _exit(127);
    }
    close(in[0]);
    close(out[1]);
    close(err[1]);
    // A converter that exits without reading stdin must not kill us with
    // SIGPIPE: block it on this thread and discard any pending instance.
    sigset_t pipe_set, old_set;
    sigemptyset(&pipe_set);
    sigaddset(&pipe_set, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &pipe_set, &old_set);
    for (int fd : {in[1], out[0], err[0]}) fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) | O_NONBLOCK);

    // Feed stdin while draining stdout/stderr so neither side can block.
    std::string result, diag;
    std::size_t written = 0;
    int wfd = in[1];
    if (svg.empty()) {
        close(wfd);
        wfd = -1;
    }
    bool out_open = true, err_open = true;
    while (out_open || err_open) {
        pollfd fds[3] = {{wfd, POLLOUT, 0}, {out_open ? out[0] : -1, POLLIN, 0}, {err_open ? err[0] : -1, POLLIN, 0}};
        if (poll(fds, 3, 60'000) <= 0) break;
        if (wfd >= 0 && (fds[0].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const ssize_t k = write(wfd, svg.data() + written, svg.size() - written);
            if (k > 0) written += static_cast<std::size_t>(k);
            if (k < 0 && errno != EAGAIN) written = svg.size();  // reader went away
            if (written == svg.size()) {
                close(wfd);
                wfd = -1;
            }
        }
        char buf[65536];
        auto drain = [&](int fd, bool& open, std::string& into, short revents) {
            if (!open || !(revents & (POLLIN | POLLHUP | POLLERR))) return;
            const ssize_t k = read(fd, buf, sizeof buf);
            if (k > 0)
                into.append(buf, static_cast<std::size_t>(k));
            else if (k == 0 || errno != EAGAIN)
                open = false;
        };
        drain(out[0], out_open, result, fds[1].revents);
        drain(err[0], err_open, diag, fds[2].revents);
    }
    if (wfd >= 0) close(wfd);
    close(out[0]);
    close(err[0]);
    if (out_open || err_open) kill(pid, SIGKILL);
    const timespec no_wait{0, 0};
    while (sigtimedwait(&pipe_set, nullptr, &no_wait) > 0) {
    }
    pthread_sigmask(SIG_SETMASK, &old_set, nullptr);
    int status = 0;
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw Error(ErrorCode::ConverterFailed, "svg converter failed",
                    "exit " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) + ": " + diag.substr(0, 500));
    if (result.empty()) throw Error(ErrorCode::ConverterFailed, "svg converter produced no output", diag.substr(0, 500));
    return result;
}

}  // namespace simlens
