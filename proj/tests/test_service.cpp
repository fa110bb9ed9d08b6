#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <filesystem>
#include <json.hpp>
#include <set>
#include <thread>

#include "fixtures.hpp"
#include "simlens/export.hpp"
#include "simlens/ingest.hpp"
#include "simlens/plotdata.hpp"
#include "simlens/report.hpp"
#include "simlens/service.hpp"

using namespace simlens;
using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

class Running {
public:
    explicit Running(ServiceConfig cfg = {}) : svc_(with_any_port(std::move(cfg))) {
        port_ = svc_.bind();
        thread_ = std::thread([this] { svc_.run(); });
        svc_.wait_until_ready();
    }
    ~Running() {
        svc_.stop();
        thread_.join();
    }
    int port() const { return port_; }
    Service& service() { return svc_; }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(60, 0);
        return c;
    }

private:
    static ServiceConfig with_any_port(ServiceConfig cfg) {
        cfg.port = 0;
        return cfg;
    }
    Service svc_;
    int port_ = 0;
    std::thread thread_;
};

const std::string& standin_csv() {
    static const std::string csv = to_delimited(fixtures::case_study_standin(), TextFormat::Csv);
    return csv;
}

const Json kMapping = Json::parse(R"({"estimate":"theta","se":"se","true":-0.5,"method":"method","by":["dgm"],"rep":"idrep"})");

std::string upload_file(httplib::Client& c, const std::string& content, const std::string& name = "est.csv") {
    auto r = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"file", content, name, "text/csv"}});
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return Json::parse(r->body).at("session_id").get<std::string>();
}

std::string base(const std::string& id) { return "/api/datasets/" + id; }

std::string mapped_session(httplib::Client& c) {
    const auto id = upload_file(c, standin_csv());
    auto r = c.Put(base(id) + "/mapping", kMapping.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return id;
}

Json body_json(const httplib::Result& r) {
    REQUIRE(r);
    return Json::parse(r->body);
}

Dataset local_dataset() {
    return apply_mapping(parse_table(standin_csv(), TextFormat::Csv, Compression::None), report::mapping_from_json(kMapping));
}

}  // namespace

TEST_CASE("health and meta") {
    Running s;
    auto c = s.client();
    auto r = c.Get("/api/health");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_json(r)["status"] == "ok");
    const auto meta = body_json(c.Get("/api/meta"));
    CHECK(meta["plot_kinds"].size() == 9);
    CHECK(meta["image_formats"] == Json::array({"svg"}));
    CHECK(meta["max_upload_bytes"] == 100'000'000);
    CHECK(ServiceConfig{}.max_upload_bytes == 100'000'000);
    auto missing = c.Get("/api/nowhere");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(body_json(missing)["code"] == "NotFound");
}

TEST_CASE("uploads: multipart file, pasted text and JSON") {
    Running s;
    auto c = s.client();
    auto r = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"file", standin_csv(), "est.csv", "text/csv"}});
    const auto j = body_json(r);
    CHECK(r->status == 200);
    CHECK(j["session_id"].get<std::string>().size() == 32);
    CHECK(j["name"] == "est.csv");
    CHECK(j["format"] == "csv");
    CHECK(j["n_rows"] == 9600);
    REQUIRE(j["columns"].size() == 5);
    CHECK(j["columns"][0]["name"] == "idrep");
    CHECK(j["columns"][3]["name"] == "theta");

    auto p = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"pasted", "a\tb\n1\t2\n3\t4\n", "", ""}});
    const auto pj = body_json(p);
    CHECK(p->status == 200);
    CHECK(pj["name"] == "pasted");
    CHECK(pj["n_rows"] == 2);

    auto q = c.Post("/api/datasets", Json{{"pasted", "x\ty\n1\t2\n"}, {"name", "clip"}}.dump(), "application/json");
    const auto qj = body_json(q);
    CHECK(q->status == 200);
    CHECK(qj["name"] == "clip");
    CHECK(qj["n_rows"] == 1);

    auto bad = c.Post("/api/datasets", "[1,2]", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    auto junk = c.Post("/api/datasets", "{not json", "application/json");
    REQUIRE(junk);
    CHECK(junk->status == 400);
    CHECK(body_json(junk)["code"] == "BadRequest");
    CHECK(s.service().session_count() == 3);
}

TEST_CASE("upload errors map to status codes") {
    ServiceConfig cfg;
    cfg.max_upload_bytes = 1000;
    Running s(cfg);
    auto c = s.client();
    const std::string big = "a,b\n" + std::string(3000, '1') + ",2\n";
    auto r = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"file", big, "big.csv", "text/csv"}});
    REQUIRE(r);
    CHECK(r->status == 413);
    CHECK(body_json(r)["code"] == "TooLarge");
    auto rp = c.Post("/api/datasets", Json{{"pasted", big}}.dump(), "application/json");
    REQUIRE(rp);
    CHECK(rp->status == 413);

    auto ragged = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"file", "a,b\n1,2\n3\n", "r.csv", "text/csv"}});
    const auto rj = body_json(ragged);
    CHECK(ragged->status == 400);
    CHECK(rj["code"] == "RaggedRows");
    CHECK(rj["row"] == 2);

    auto empty = c.Post("/api/datasets", httplib::MultipartFormDataItems{{"file", "", "e.csv", "text/csv"}});
    REQUIRE(empty);
    CHECK(empty->status == 400);

    auto unreachable = c.Post("/api/datasets", Json{{"url", "http://127.0.0.1:1/est.csv"}}.dump(), "application/json");
    REQUIRE(unreachable);
    CHECK(unreachable->status == 502);
    CHECK(body_json(unreachable)["code"] == "NetworkError");
    CHECK(s.service().session_count() == 0);
}

TEST_CASE("mapping lifecycle and strata") {
    Running s;
    auto c = s.client();
    const auto id = upload_file(c, standin_csv());
    auto none = c.Get(base(id) + "/mapping");
    REQUIRE(none);
    CHECK(none->status == 409);
    CHECK(body_json(none)["code"] == "MappingRequired");

    auto nosess = c.Get(base(std::string(32, 'a')) + "/mapping");
    REQUIRE(nosess);
    CHECK(nosess->status == 404);

    Json bad = kMapping;
    bad["estimate"] = "nope";
    auto unknown = c.Put(base(id) + "/mapping", bad.dump(), "application/json");
    REQUIRE(unknown);
    CHECK(unknown->status == 422);
    CHECK(body_json(unknown)["code"] == "UnknownColumn");

    Json malformed = kMapping;
    malformed["surprise"] = 1;
    auto inv = c.Put(base(id) + "/mapping", malformed.dump(), "application/json");
    REQUIRE(inv);
    CHECK(inv->status == 422);
    CHECK(body_json(inv)["code"] == "InvalidMapping");

    auto ok = c.Put(base(id) + "/mapping", kMapping.dump(), "application/json");
    const auto j = body_json(ok);
    CHECK(ok->status == 200);
    CHECK(j["strata"].size() == 6);
    CHECK(j["dgm_combinations"].size() == 2);
    CHECK(j["methods"] == Json::array({"1", "2", "3"}));
    CHECK(j["n_records"] == 9600);
    for (const auto& st : j["strata"]) CHECK(st["n"] == 1600);
    CHECK(body_json(c.Get(base(id) + "/mapping")) == j);

    const auto info = body_json(c.Get(base(id)));
    CHECK(info["mapping"]["estimate"] == "theta");

    auto del = c.Delete(base(id));
    REQUIRE(del);
    CHECK(del->status == 204);
    auto gone = c.Get(base(id));
    REQUIRE(gone);
    CHECK(gone->status == 404);
    auto again = c.Delete(base(id));
    REQUIRE(again);
    CHECK(again->status == 404);
}

TEST_CASE("preview paging") {
    Running s;
    auto c = s.client();
    const auto id = upload_file(c, standin_csv());
    const auto first = body_json(c.Get(base(id) + "/preview"));
    CHECK(first["total"] == 9600);
    CHECK(first["limit"] == 50);
    CHECK(first["rows"].size() == 50);
    CHECK(first["header"] == Json::array({"idrep", "dgm", "method", "theta", "se"}));
    const auto tail = body_json(c.Get(base(id) + "/preview?offset=9590&limit=100"));
    REQUIRE(tail["rows"].size() == 10);
    const auto raw = fixtures::case_study_standin();
    CHECK(tail["rows"][9] == Json(raw.rows.back()));
    CHECK(body_json(c.Get(base(id) + "/preview?offset=20000"))["rows"].empty());
    auto neg = c.Get(base(id) + "/preview?limit=-1");
    REQUIRE(neg);
    CHECK(neg->status == 422);
    auto huge = c.Get(base(id) + "/preview?limit=10001");
    REQUIRE(huge);
    CHECK(huge->status == 422);
}

TEST_CASE("performance endpoint") {
    Running s;
    auto c = s.client();
    const auto id = mapped_session(c);
    auto r = c.Get(base(id) + "/performance?dgm=2");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type").find("application/json") == 0);
    const auto recs = Json::parse(r->body);
    std::set<std::string> measures;
    for (const auto& rec : recs) {
        CHECK(rec["dgm"] == "2");
        measures.insert(rec["measure"].get<std::string>());
    }
    // Default selection: everything a truth + SE mapping supports.
    for (const char* m : {"bias", "emp_se", "mse", "mod_se", "coverage", "becover", "power"}) CHECK(measures.count(m) == 1);

    const auto ds = local_dataset();
    report::PerformanceQuery q;
    q.dgm = std::vector<std::string>{"2"};
    CHECK(r->body == report::render_performance(ds, q));

    auto tex = c.Get(base(id) + "/performance?dgm=2&format=latex&measures=bias,empse,modelse,cover");
    REQUIRE(tex);
    CHECK(tex->status == 200);
    CHECK(tex->body.find("\\begin{tabular}") != std::string::npos);
    CHECK(tex->get_header_value("Content-Type").find("application/x-latex") == 0);

    auto bad_dgm = c.Get(base(id) + "/performance?dgm=7");
    REQUIRE(bad_dgm);
    CHECK(bad_dgm->status == 422);
    CHECK(body_json(bad_dgm)["code"] == "InvalidArgument");
    auto bad_measure = c.Get(base(id) + "/performance?measures=bogus");
    REQUIRE(bad_measure);
    CHECK(bad_measure->status == 422);
}

TEST_CASE("options feed later performance requests") {
    Running s;
    auto c = s.client();
    const auto id = mapped_session(c);
    auto put = c.Put(base(id) + "/options", R"({"sig_digits":3,"include_mcse":false,"measures":["bias"]})",
                     "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);
    const auto o = body_json(c.Get(base(id) + "/options"));
    CHECK(o["sig_digits"] == 3);
    CHECK(o["include_mcse"] == false);
    const auto recs = body_json(c.Get(base(id) + "/performance"));
    for (const auto& rec : recs) CHECK(rec["measure"] == "bias");
    auto tex = c.Get(base(id) + "/performance?format=latex&dgm=1");
    REQUIRE(tex);
    CHECK(tex->body.find('(') == std::string::npos);
    auto bad = c.Put(base(id) + "/options", R"({"sig_digits":0})", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);
    auto unknown = c.Put(base(id) + "/options", R"({"colour":"red"})", "application/json");
    REQUIRE(unknown);
    CHECK(unknown->status == 422);
}

TEST_CASE("missingness endpoints") {
    Running s;
    auto c = s.client();
    auto raw = fixtures::inject_mcar(fixtures::case_study_standin(), 4, 0.1, 7);
    raw.header.push_back("label");
    for (auto& row : raw.rows) row.push_back("x");
    const auto id = upload_file(c, to_delimited(raw, TextFormat::Csv));
    auto m = c.Put(base(id) + "/mapping", kMapping.dump(), "application/json");
    REQUIRE(m);
    REQUIRE(m->status == 200);

    const auto table = body_json(c.Get(base(id) + "/missing"));
    CHECK(table["total_missing"].get<std::size_t>() > 0);
    CHECK(!table["rows"].empty());
    const auto bar = body_json(c.Get(base(id) + "/missing/bar?by=dgm"));
    CHECK(bar.is_array());
    auto bad_by = c.Get(base(id) + "/missing/bar?by=colour");
    REQUIRE(bad_by);
    CHECK(bad_by->status == 422);
    auto heat = c.Get(base(id) + "/missing/heat?variable=se");
    REQUIRE(heat);
    CHECK(heat->status == 200);
    auto shadow = c.Get(base(id) + "/missing/shadow?x=theta&y=se");
    REQUIRE(shadow);
    CHECK(shadow->status == 200);
    auto nonnum = c.Get(base(id) + "/missing/shadow?x=theta&y=label");
    REQUIRE(nonnum);
    CHECK(nonnum->status == 422);
    CHECK(body_json(nonnum)["code"] == "NonNumericVariable");
    auto noxy = c.Get(base(id) + "/missing/shadow?x=theta");
    REQUIRE(noxy);
    CHECK(noxy->status == 422);
    auto matrix = c.Get(base(id) + "/missing/matrix?blocks=10");
    REQUIRE(matrix);
    CHECK(matrix->status == 200);
    auto bad_blocks = c.Get(base(id) + "/missing/matrix?blocks=0");
    REQUIRE(bad_blocks);
    CHECK(bad_blocks->status == 422);
}

TEST_CASE("plot data and rendering") {
    Running s;
    auto c = s.client();
    const auto id = mapped_session(c);
    const auto forest = body_json(c.Get(base(id) + "/plots/forest?measure=bias"));
    CHECK(forest["kind"] == "forest");
    CHECK(forest["measure"] == "bias");
    REQUIRE(forest["data"].size() == 6);
    for (const auto& row : forest["data"])
        CHECK(row["upper"].get<double>() - row["value"].get<double>() ==
              row["value"].get<double>() - row["lower"].get<double>());

    const auto zip = body_json(c.Get(base(id) + "/plots/zip"));
    REQUIRE(zip["data"].size() == 6);
    CHECK(zip["data"][0]["stripes"].size() == 1600);

    auto unknown = c.Get(base(id) + "/plots/pie");
    REQUIRE(unknown);
    CHECK(unknown->status == 404);
    CHECK(body_json(unknown)["code"] == "NotFound");

    auto bad_method = c.Get(base(id) + "/plots/scatter?method_a=1&method_b=9");
    REQUIRE(bad_method);
    CHECK(bad_method->status == 422);

    const Json body{{"measure", "coverage"}, {"title", "Coverage"}, {"theme", "minimal"}, {"width", 640}};
    auto svg = c.Post(base(id) + "/plots/forest/render", body.dump(), "application/json");
    REQUIRE(svg);
    CHECK(svg->status == 200);
    CHECK(svg->get_header_value("Content-Type") == "image/svg+xml");
    const auto ds = local_dataset();
    const auto spec = report::parse_plot_spec(
        ds, PlotKind::Forest, {{"measure", "coverage"}, {"title", "Coverage"}, {"theme", "minimal"}, {"width", "640"}});
    CHECK(svg->body == render_svg(spec, build_plot(ds, spec)));
    auto again = c.Post(base(id) + "/plots/forest/render", body.dump(), "application/json");
    REQUIRE(again);
    CHECK(again->body == svg->body);

    auto png = c.Post(base(id) + "/plots/forest/render?format=png", "", "application/json");
    REQUIRE(png);
    CHECK(png->status == 422);
    auto theme = c.Post(base(id) + "/plots/heat/render", R"({"theme":"neon"})", "application/json");
    REQUIRE(theme);
    CHECK(theme->status == 422);
}

TEST_CASE("converter hook produces raster formats") {
    ServiceConfig cfg;
    cfg.svg_converter = "printf '%s-%s' \"$SIMLENS_FORMAT\" \"$SIMLENS_DPI\"";
    Running s(cfg);
    auto c = s.client();
    const auto id = mapped_session(c);
    auto r = c.Post(base(id) + "/plots/heat/render?format=png", R"({"dpi":150})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->body == "png-150");
    CHECK(r->get_header_value("Content-Type") == "image/png");
    CHECK(body_json(c.Get("/api/meta"))["image_formats"].size() == 4);

    ServiceConfig failing;
    failing.svg_converter = "exit 3";
    Running f(failing);
    auto fc = f.client();
    const auto fid = mapped_session(fc);
    auto fr = fc.Post(base(fid) + "/plots/heat/render?format=pdf", "", "application/json");
    REQUIRE(fr);
    CHECK(fr->status == 500);
    CHECK(body_json(fr)["code"] == "ConverterFailed");
}

TEST_CASE("export") {
    Running s;
    auto c = s.client();
    const auto raw_id = upload_file(c, standin_csv());
    auto unmapped = c.Get(base(raw_id) + "/export?what=table");
    REQUIRE(unmapped);
    CHECK(unmapped->status == 409);

    auto est = c.Get(base(raw_id) + "/export?what=estimates&format=csv");
    REQUIRE(est);
    CHECK(est->status == 200);
    CHECK(est->body == standin_csv());
    CHECK(est->get_header_value("Content-Disposition") == "attachment; filename=\"est.csv\"");
    // Re-uploading the export reproduces the table.
    const auto round = upload_file(c, est->body);
    auto est2 = c.Get(base(round) + "/export?what=estimates&format=csv");
    REQUIRE(est2);
    CHECK(est2->body == est->body);

    const auto id = mapped_session(c);
    auto csv = c.Get(base(id) + "/export");
    REQUIRE(csv);
    CHECK(csv->status == 200);
    CHECK(csv->get_header_value("Content-Type").find("text/csv") == 0);
    CHECK(csv->get_header_value("Content-Disposition") == "attachment; filename=\"est-performance.csv\"");
    auto tex = c.Get(base(id) + "/export?format=latex&dgm=2&measures=bias,empse,modelse,cover");
    REQUIRE(tex);
    CHECK(tex->body.find("\\bottomrule") != std::string::npos);
    auto latex_est = c.Get(base(id) + "/export?what=estimates&format=latex");
    REQUIRE(latex_est);
    CHECK(latex_est->status == 422);
    auto what = c.Get(base(id) + "/export?what=everything");
    REQUIRE(what);
    CHECK(what->status == 422);
}

TEST_CASE("GET requests do not change session state") {
    Running s;
    auto c = s.client();
    const auto id = mapped_session(c);
    const auto before = body_json(c.Get(base(id)));
    const auto perf1 = c.Get(base(id) + "/performance?format=csv&sig_digits=2&measures=bias");
    c.Get(base(id) + "/plots/zip");
    c.Get(base(id) + "/missing");
    c.Get(base(id) + "/export?format=latex");
    const auto perf2 = c.Get(base(id) + "/performance");
    CHECK(body_json(c.Get(base(id))) == before);
    CHECK(body_json(c.Get(base(id) + "/options")) == before["options"]);
    REQUIRE(perf1);
    REQUIRE(perf2);
    CHECK(perf2->body == c.Get(base(id) + "/performance")->body);
}

TEST_CASE("sessions are isolated") {
    Running s;
    auto c = s.client();
    const auto a = mapped_session(c);
    const auto b = upload_file(c, standin_csv());
    CHECK(a != b);
    auto bm = c.Get(base(b) + "/mapping");
    REQUIRE(bm);
    CHECK(bm->status == 409);
    c.Put(base(a) + "/options", R"({"sig_digits":2})", "application/json");
    CHECK(body_json(c.Get(base(b) + "/options"))["sig_digits"] == 4);
    c.Delete(base(a));
    auto bi = c.Get(base(b));
    REQUIRE(bi);
    CHECK(bi->status == 200);
}

TEST_CASE("spilled sessions reload after eviction and restart") {
    const auto dir = fs::temp_directory_path() / ("simlens-spill-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    ServiceConfig cfg;
    cfg.spill_dir = dir;
    cfg.max_sessions = 1;
    std::string first, perf;
    {
        Running s(cfg);
        auto c = s.client();
        first = mapped_session(c);
        c.Put(base(first) + "/options", R"({"sig_digits":3})", "application/json");
        perf = c.Get(base(first) + "/performance")->body;
        upload_file(c, standin_csv());
        CHECK(s.service().session_count() == 1);
        const auto back = body_json(c.Get(base(first) + "/mapping"));
        CHECK(back["strata"].size() == 6);
        CHECK(c.Get(base(first) + "/performance")->body == perf);
    }
    {
        Running s(cfg);
        auto c = s.client();
        CHECK(s.service().session_count() == 0);
        auto r = c.Get(base(first) + "/performance");
        REQUIRE(r);
        CHECK(r->status == 200);
        CHECK(r->body == perf);
        CHECK(body_json(c.Get(base(first) + "/options"))["sig_digits"] == 3);
    }
    fs::remove_all(dir);
}

TEST_CASE("idle sessions expire") {
    const auto dir = fs::temp_directory_path() / ("simlens-ttl-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    ServiceConfig cfg;
    cfg.session_ttl = std::chrono::seconds(1);
    cfg.spill_dir = dir;
    Running s(cfg);
    auto c = s.client();
    const auto id = upload_file(c, standin_csv());
    CHECK(s.service().session_count() == 1);
    std::this_thread::sleep_for(std::chrono::milliseconds(2100));
    s.service().expire_sessions();
    CHECK(s.service().session_count() == 0);
    CHECK(fs::is_empty(dir));
    auto r = c.Get(base(id));
    REQUIRE(r);
    CHECK(r->status == 404);
    fs::remove_all(dir);
}

TEST_CASE("busy port is reported") {
    Running first;
    ServiceConfig cfg;
    cfg.port = first.port();
    Service second(cfg);
    CHECK_THROWS_AS(second.bind(), PortBusyError);
}

TEST_CASE("malformed session ids are not found") {
    Running s;
    auto c = s.client();
    for (const char* id : {"short", "ZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZ", "..%2F..%2Fetc"}) {
        auto r = c.Get(std::string("/api/datasets/") + id);
        REQUIRE(r);
        CHECK(r->status == 404);
    }
}
