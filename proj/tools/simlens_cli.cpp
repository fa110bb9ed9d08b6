// simlens: batch front end over the engine and launcher for the HTTP service.
//
// Exit codes: 0 ok, 1 I/O or unexpected failure, 2 usage, 3 input could not
// be parsed, 4 analysis failed, 5 port busy.

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "simlens/error.hpp"
#include "simlens/ingest.hpp"
#include "simlens/plotdata.hpp"
#include "simlens/report.hpp"
#include "simlens/service.hpp"

namespace {

using namespace simlens;

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kParse = 3, kAnalysis = 4, kPortBusy = 5 };

int exit_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::UnsupportedFormat:
        case ErrorCode::DecompressError:
        case ErrorCode::AmbiguousArchive:
        case ErrorCode::RaggedRows:
        case ErrorCode::EmptyInput:
        case ErrorCode::EncodingError:
        case ErrorCode::TooLarge:
        case ErrorCode::NetworkError:
        case ErrorCode::BadStatus:
        case ErrorCode::Cancelled:
        case ErrorCode::UnassignableRecord: return kParse;
        case ErrorCode::UnknownColumn:
        case ErrorCode::ArityMismatch:
        case ErrorCode::DuplicateColumn:
        case ErrorCode::InvalidMapping:
        case ErrorCode::InvalidArgument: return kUsage;
        default: return kAnalysis;
    }
}

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MappingFlags {
    std::string file;
    std::string estimate, se, true_col, method, reference, ci_lower, ci_upper, df, rep;
    std::optional<double> truth;
    std::vector<std::string> by;
    double alpha = 0.05;
    std::size_t max_bytes = kDefaultMaxBytes;

    void add_to(CLI::App* app) {
        app->add_option("file", file, "Per-repetition results (csv, tsv or json records; optionally .gz or .zip)")
            ->required();
        app->add_option("--estimate", estimate, "Point-estimate column")->required();
        app->add_option("--se", se, "Standard-error column");
        auto* t = app->add_option("--true", truth, "True value of the estimand");
        app->add_option("--true-col", true_col, "Column holding the true value")->excludes(t);
        app->add_option("--method", method, "Method column");
        app->add_option("--reference", reference, "Reference method for relative precision");
        app->add_option("--by", by, "DGM columns, comma-separated")->delimiter(',');
        app->add_option("--ci-lower", ci_lower, "Lower confidence-limit column");
        app->add_option("--ci-upper", ci_upper, "Upper confidence-limit column");
        app->add_option("--df", df, "Degrees-of-freedom column (t intervals)");
        app->add_option("--rep", rep, "Repetition-id column");
        app->add_option("--alpha", alpha, "Nominal significance level")->check(CLI::Range(1e-12, 1.0 - 1e-12));
        app->add_option("--max-bytes", max_bytes, "Input size limit in bytes");
    }

    VariableMapping mapping() const {
        VariableMapping m;
        m.estimate_col = estimate;
        if (!se.empty()) m.se_col = se;
        if (truth) m.truth = FixedTruth{*truth};
        if (!true_col.empty()) m.truth = TruthColumn{true_col};
        if (!method.empty()) m.method_col = method;
        if (!reference.empty()) m.reference_method = reference;
        m.dgm_cols = by;
        if (ci_lower.empty() != ci_upper.empty())
            throw Error(ErrorCode::InvalidMapping, "--ci-lower and --ci-upper go together");
        if (!ci_lower.empty()) m.ci_cols = std::pair{ci_lower, ci_upper};
        if (!df.empty()) m.df_col = df;
        if (!rep.empty()) m.rep_col = rep;
        m.alpha = alpha;
        return m;
    }

    Dataset load() const {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw InputError("cannot read " + file);
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        SourceSpec src;
        src.origin = Origin::FileBytes;
        src.declared_name = file;
        src.max_bytes = max_bytes;
        return apply_mapping(ingest(src, bytes), mapping());
    }
};

void write_output(const std::string& path, const std::string& bytes) {
    if (path.empty() || path == "-") {
        std::fwrite(bytes.data(), 1, bytes.size(), stdout);
        std::fflush(stdout);
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

int serve(ServiceConfig cfg) {
    // Route SIGINT/SIGTERM to a watcher thread that stops the server.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Service service(std::move(cfg));
    int port = 0;
    try {
        port = service.bind();
    } catch (const PortBusyError& e) {
        std::cerr << "simlens: " << e.what() << "\n";
        return kPortBusy;
    }
    std::jthread watcher([&service, set](std::stop_token) {
        int sig = 0;
        sigwait(&set, &sig);
        service.stop();
    });
    std::cerr << "simlens: listening on port " << port << std::endl;
    service.run();
    // The watcher may still be waiting when run() ends for another reason.
    pthread_kill(watcher.native_handle(), SIGTERM);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Performance measures, missing-data summaries and plots for simulation-study results"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "simlens 0.1.0");

    // analyze
    MappingFlags am;
    std::string a_format = "csv", a_out, a_dgm, a_measures, a_caption;
    int a_sig = 4;
    bool a_no_mcse = false, a_wide = false;
    auto* analyze = app.add_subcommand("analyze", "Compute performance measures with Monte Carlo standard errors");
    am.add_to(analyze);
    analyze->add_option("--measures", a_measures, "Comma-separated measures (default: all the mapping supports)");
    analyze->add_option("--format", a_format, "csv, tsv, json or latex")
        ->check(CLI::IsMember({"csv", "tsv", "json", "latex"}));
    analyze->add_option("--dgm", a_dgm, "Restrict to one DGM (levels comma-separated)");
    analyze->add_option("--sig-digits", a_sig, "Significant digits in formatted cells")->check(CLI::Range(1, 15));
    analyze->add_flag("--no-mcse", a_no_mcse, "Leave Monte Carlo SEs out of formatted cells");
    analyze->add_flag("--wide", a_wide, "Measures as rows, methods as columns (csv/tsv/json)");
    analyze->add_option("--caption", a_caption, "LaTeX table caption");
    analyze->add_option("--out", a_out, "Output file (default stdout)");

    // missing
    MappingFlags mm;
    std::string m_format = "csv", m_out;
    auto* missing = app.add_subcommand("missing", "Tabulate missing values by variable, method and DGM");
    mm.add_to(missing);
    missing->add_option("--format", m_format, "csv, tsv or json")->check(CLI::IsMember({"csv", "tsv", "json"}));
    missing->add_option("--out", m_out, "Output file (default stdout)");

    // plot
    MappingFlags pm;
    std::string p_kind, p_svg, p_data, p_export, p_export_format = "png", p_converter;
    report::Params p_params;
    auto* plot = app.add_subcommand("plot", "Build plot data and render static SVG");
    pm.add_to(plot);
    plot->add_option("--kind", p_kind, "scatter, bland-altman, ridgeline, density-pairs, forest, lolly, heat, zip, nested-loop")
        ->required()
        ->check([](const std::string& k) { return parse_plot_kind(k) ? std::string{} : "unknown plot kind '" + k + "'"; });
    for (const auto& [flag, key, help] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"--measure", "measure", "Performance measure (performance kinds; default bias)"},
             {"--dgm", "dgm", "Restrict to one DGM (levels comma-separated)"},
             {"--only-method", "method", "Restrict to one method"},
             {"--method-a", "method_a", "First method of a pair"},
             {"--method-b", "method_b", "Second method of a pair"},
             {"--quantity", "quantity", "estimate or se (estimate-level kinds)"},
             {"--factor-order", "factor_order", "Nested-loop factor order, outermost first"},
             {"--ci-level", "ci_level", "Forest/lolly interval level"},
             {"--title", "title", "Plot title"},
             {"--xlab", "xlab", "x-axis label"},
             {"--ylab", "ylab", "y-axis label"},
             {"--theme", "theme", "default, minimal or dark"},
             {"--width", "width", "Width in pixels"},
             {"--height", "height", "Height in pixels"},
             {"--dpi", "dpi", "Resolution passed to the converter"}}) {
        plot->add_option_function<std::string>(flag, [&p_params, key](const std::string& v) { p_params[key] = v; }, help);
    }
    plot->add_option("--svg", p_svg, "Write the SVG here");
    plot->add_option("--data", p_data, "Write the plot data (JSON) here");
    plot->add_option("--export", p_export, "Write a converted image here (needs --converter)");
    plot->add_option("--export-format", p_export_format, "Image format passed to the converter")
        ->check(CLI::IsMember({"png", "pdf", "eps"}));
    plot->add_option("--converter", p_converter, "Shell command turning SVG on stdin into the image on stdout");

    // serve
    ServiceConfig scfg;
    long long ttl = 24 * 3600;
    std::string spill, static_dir, converter;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
    serve_cmd->add_option("--port", scfg.port, "TCP port (0: any free port)")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--bind", scfg.bind, "Bind address");
    serve_cmd->add_option("--max-upload", scfg.max_upload_bytes, "Upload size limit in bytes");
    serve_cmd->add_option("--ttl", ttl, "Idle session lifetime in seconds")->check(CLI::PositiveNumber);
    serve_cmd->add_option("--max-sessions", scfg.max_sessions, "Sessions kept in memory");
    serve_cmd->add_option("--spill", spill, "Directory persisting sessions across restarts");
    serve_cmd->add_option("--converter", converter, "SVG converter command for png/pdf/eps export");
    serve_cmd->add_option("--static", static_dir, "Directory served at /");
    serve_cmd->add_option("--threads", scfg.threads, "Worker threads (0: hardware concurrency)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*analyze) {
            if (a_format == "latex" && a_wide) throw Error(ErrorCode::InvalidArgument, "--wide applies to csv/tsv/json");
            const auto ds = am.load();
            report::Params p{{"format", a_format}, {"sig_digits", std::to_string(a_sig)}};
            if (!a_measures.empty()) p["measures"] = a_measures;
            if (!a_dgm.empty()) p["dgm"] = a_dgm;
            if (a_no_mcse) p["mcse"] = "false";
            if (a_wide) p["orientation"] = "wide";
            if (!a_caption.empty()) p["caption"] = a_caption;
            write_output(a_out, report::render_performance(ds, report::parse_performance_query(ds, p)));
        } else if (*missing) {
            const auto ds = mm.load();
            write_output(m_out, report::render_missing(ds, *report::parse_table_format(m_format)));
        } else if (*plot) {
            if (!p_export.empty() && p_converter.empty())
                throw Error(ErrorCode::InvalidArgument, "--export needs --converter");
            const auto ds = pm.load();
            const auto spec = report::parse_plot_spec(ds, *parse_plot_kind(p_kind), p_params);
            const auto data = build_plot(ds, spec);
            if (!p_data.empty()) write_output(p_data, report::plot_json(spec, data).dump(2) + "\n");
            if (!p_svg.empty() || !p_export.empty() || p_data.empty()) {
                const auto svg = render_svg(spec, data);
                if (!p_svg.empty() || p_data.empty()) write_output(p_svg, svg);
                if (!p_export.empty()) write_output(p_export, convert_svg(svg, p_converter, p_export_format, spec));
            }
        } else if (*serve_cmd) {
            scfg.session_ttl = std::chrono::seconds(ttl);
            if (!spill.empty()) scfg.spill_dir = spill;
            if (!static_dir.empty()) scfg.static_dir = static_dir;
            if (!converter.empty()) scfg.svg_converter = converter;
            return serve(std::move(scfg));
        }
    } catch (const InputError& e) {
        std::cerr << "simlens: " << e.what() << "\n";
        return kParse;
    } catch (const RaggedRowsError& e) {
        std::cerr << "simlens: " << e.what() << " (row " << e.row() << ")" << (e.detail().empty() ? "" : ": ")
                  << e.detail() << "\n";
        return kParse;
    } catch (const Error& e) {
        std::cerr << "simlens: " << to_string(e.code()) << ": " << e.what()
                  << (e.detail().empty() ? "" : " (" + e.detail() + ")") << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "simlens: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}
