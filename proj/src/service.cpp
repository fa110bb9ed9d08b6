#include "simlens/service.hpp"

#include <openssl/rand.h>
#include <sys/socket.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>
#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

#include <httplib.h>

#include "simlens/error.hpp"
#include "simlens/export.hpp"
#include "simlens/missingness.hpp"
#include "simlens/plotdata.hpp"
#include "simlens/report.hpp"

namespace simlens {

namespace {

namespace fs = std::filesystem;
using report::Json;
using Clock = std::chrono::system_clock;

// Errors the service raises itself, outside the engine's ErrorCode set.
struct HttpError : std::runtime_error {
    HttpError(int status, std::string code, const std::string& message, std::string detail = {})
        : std::runtime_error(message), status(status), code(std::move(code)), detail(std::move(detail)) {}
    int status;
    std::string code;
    std::string detail;
};

int http_status(ErrorCode c) {
    switch (c) {
        case ErrorCode::UnsupportedFormat:
        case ErrorCode::DecompressError:
        case ErrorCode::AmbiguousArchive:
        case ErrorCode::RaggedRows:
        case ErrorCode::EmptyInput:
        case ErrorCode::EncodingError: return 400;
        case ErrorCode::TooLarge: return 413;
        case ErrorCode::NetworkError:
        case ErrorCode::BadStatus: return 502;
        case ErrorCode::Cancelled: return 503;
        case ErrorCode::ConverterFailed: return 500;
        default: return 422;
    }
}

std::string new_session_id() {
    unsigned char bytes[16];
    if (RAND_bytes(bytes, sizeof bytes) != 1) throw std::runtime_error("no randomness available for session ids");
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    for (unsigned char b : bytes) {
        id += hex[b >> 4];
        id += hex[b & 15];
    }
    return id;
}

bool valid_session_id(const std::string& id) {
    return id.size() == 32 && std::all_of(id.begin(), id.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

struct Session {
    std::string id;
    std::string name;
    TextFormat format = TextFormat::Csv;
    Compression compression = Compression::None;
    std::shared_ptr<const RawTable> raw;
    std::vector<Column> columns;
    std::shared_ptr<const Dataset> dataset;  // set once a mapping is applied
    report::PerformanceQuery defaults;
    Clock::time_point created;
    Clock::time_point touched;  // guarded by the store mutex
    mutable std::shared_mutex mu;
};

Json options_json(const report::PerformanceQuery& q) {
    Json j = report::style_json(q.style);
    if (q.measures) {
        Json m = Json::array();
        for (auto x : *q.measures) m.push_back(measure_name(x));
        j["measures"] = std::move(m);
    } else {
        j["measures"] = nullptr;
    }
    return j;
}

class SessionStore {
public:
    explicit SessionStore(const ServiceConfig& cfg) : cfg_(cfg) {
        if (cfg_.spill_dir) fs::create_directories(*cfg_.spill_dir);
    }

    std::shared_ptr<Session> add(std::shared_ptr<Session> s) {
        s->id = new_session_id();
        s->created = s->touched = Clock::now();
        spill(*s);
        std::lock_guard lock(mu_);
        live_[s->id] = s;
        evict_locked();
        return s;
    }

    std::shared_ptr<Session> find(const std::string& id) {
        if (!valid_session_id(id)) return nullptr;
        {
            std::lock_guard lock(mu_);
            if (auto it = live_.find(id); it != live_.end()) {
                if (expired(it->second->touched)) {
                    drop_locked(id);
                    return nullptr;
                }
                it->second->touched = Clock::now();
                touch_file(id);
                return it->second;
            }
        }
        auto s = unspill(id);
        if (!s) return nullptr;
        std::lock_guard lock(mu_);
        auto [it, inserted] = live_.emplace(id, s);
        it->second->touched = Clock::now();
        touch_file(id);
        evict_locked();
        return it->second;
    }

    bool erase(const std::string& id) {
        if (!valid_session_id(id)) return false;
        std::lock_guard lock(mu_);
        const bool had = live_.count(id) || (cfg_.spill_dir && fs::exists(spill_path(id)));
        drop_locked(id);
        return had;
    }

    void expire() {
        std::lock_guard lock(mu_);
        for (auto it = live_.begin(); it != live_.end();) {
            if (expired(it->second->touched)) {
                remove_file(it->first);
                it = live_.erase(it);
            } else {
                ++it;
            }
        }
        if (!cfg_.spill_dir) return;
        std::error_code ec;
        for (const auto& e : fs::directory_iterator(*cfg_.spill_dir, ec)) {
            if (e.path().extension() != ".json") continue;
            const auto t = fs::last_write_time(e.path(), ec);
            if (!ec && expired(std::chrono::file_clock::to_sys(t))) fs::remove(e.path(), ec);
        }
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return live_.size();
    }

    // Writes the session's state; callers hold the session lock.
    void spill(const Session& s) const {
        if (!cfg_.spill_dir) return;
        Json j;
        j["id"] = s.id;
        j["name"] = s.name;
        j["format"] = to_string(s.format);
        j["compression"] = to_string(s.compression);
        j["header"] = s.raw->header;
        j["rows"] = s.raw->rows;
        j["mapping"] = s.dataset ? report::mapping_to_json(s.dataset->mapping()) : Json(nullptr);
        j["options"] = options_json(s.defaults);
        const auto path = spill_path(s.id);
        const auto tmp = fs::path(path).concat(".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << j.dump();
            if (!out) throw std::runtime_error("cannot write session spill file " + tmp.string());
        }
        fs::rename(tmp, path);
    }

private:
    fs::path spill_path(const std::string& id) const { return *cfg_.spill_dir / (id + ".json"); }

    bool expired(Clock::time_point touched) const { return Clock::now() - touched > cfg_.session_ttl; }

    void touch_file(const std::string& id) const {
        if (!cfg_.spill_dir) return;
        std::error_code ec;
        fs::last_write_time(spill_path(id), std::chrono::file_clock::from_sys(Clock::now()), ec);
    }

    void remove_file(const std::string& id) const {
        if (!cfg_.spill_dir) return;
        std::error_code ec;
        fs::remove(spill_path(id), ec);
    }

    void drop_locked(const std::string& id) {
        live_.erase(id);
        remove_file(id);
    }

    // Memory only: with a spill directory an evicted session reloads on demand.
    void evict_locked() {
        while (live_.size() > std::max<std::size_t>(cfg_.max_sessions, 1)) {
            auto lru = std::min_element(live_.begin(), live_.end(),
                                        [](const auto& a, const auto& b) { return a.second->touched < b.second->touched; });
            if (!cfg_.spill_dir) remove_file(lru->first);
            live_.erase(lru);
        }
    }

    std::shared_ptr<Session> unspill(const std::string& id) const {
        if (!cfg_.spill_dir) return nullptr;
        const auto path = spill_path(id);
        std::error_code ec;
        const auto t = fs::last_write_time(path, ec);
        if (ec) return nullptr;
        if (expired(std::chrono::file_clock::to_sys(t))) {
            fs::remove(path, ec);
            return nullptr;
        }
        try {
            std::ifstream in(path, std::ios::binary);
            const auto j = Json::parse(in);
            auto s = std::make_shared<Session>();
            s->id = id;
            s->name = j.at("name").get<std::string>();
            const auto fmt = j.at("format").get<std::string>();
            s->format = fmt == "tsv" ? TextFormat::Tsv : fmt == "json" ? TextFormat::JsonRecords : TextFormat::Csv;
            const auto comp = j.at("compression").get<std::string>();
            s->compression = comp == "gzip" ? Compression::Gzip : comp == "zip" ? Compression::Zip : Compression::None;
            auto raw = std::make_shared<RawTable>();
            raw->header = j.at("header").get<std::vector<std::string>>();
            raw->rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
            s->raw = raw;
            s->columns = infer_columns(*raw);
            if (!j.at("mapping").is_null())
                s->dataset = std::make_shared<const Dataset>(apply_mapping(*raw, report::mapping_from_json(j["mapping"])));
            const auto& o = j.at("options");
            s->defaults.style.sig_digits = o.at("sig_digits").get<int>();
            s->defaults.style.include_mcse = o.at("include_mcse").get<bool>();
            s->defaults.style.caption = o.at("caption").get<std::string>();
            s->defaults.style.orientation = o.at("orientation") == "wide" ? Orientation::Wide : Orientation::Tidy;
            if (!o.at("measures").is_null()) {
                std::vector<Measure> ms;
                for (const auto& m : o["measures"]) ms.push_back(*parse_measure(m.get<std::string>()));
                s->defaults.measures = ms;
            }
            s->created = std::chrono::file_clock::to_sys(t);
            return s;
        } catch (const std::exception&) {
            return nullptr;  // unreadable spill files are treated as gone
        }
    }

    const ServiceConfig& cfg_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::shared_ptr<Session>> live_;
};

report::Params params_of(const httplib::Request& req) {
    report::Params p;
    for (const auto& [k, v] : req.params) p[k] = v;  // last value wins
    return p;
}

void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(2) + "\n", "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const Json& body) { send_json(res, body, status); }

std::string_view image_content_type(std::string_view format) {
    if (format == "svg") return "image/svg+xml";
    if (format == "png") return "image/png";
    if (format == "pdf") return "application/pdf";
    if (format == "eps") return "application/postscript";
    return "application/octet-stream";
}

std::string stem_of(const std::string& name) {
    auto s = fs::path(name).filename().string();
    for (const char* ext : {".gz", ".gzip", ".zip", ".csv", ".tsv", ".tab", ".json", ".txt"})
        if (s.size() > std::strlen(ext) && s.ends_with(ext)) s.resize(s.size() - std::strlen(ext));
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? "dataset" : out;
}

}  // namespace

struct Service::Impl {
    explicit Impl(ServiceConfig c) : cfg(std::move(c)), store(cfg) {}

    ServiceConfig cfg;
    SessionStore store;
    httplib::Server server;
    bool bound = false;
    int port = 0;
    std::atomic<Clock::rep> last_expiry{0};

    // Runs a handler, turning exceptions into structured error responses.
    template <class F>
    auto guarded(F f) {
        return [this, f](const httplib::Request& req, httplib::Response& res) {
            res.set_header("Cache-Control", "no-store");
            try {
                maybe_expire();
                f(req, res);
            } catch (const HttpError& e) {
                send_error(res, e.status, Json{{"code", e.code}, {"message", e.what()}, {"detail", e.detail}});
            } catch (const Error& e) {
                send_error(res, http_status(e.code()), report::error_json(e));
            } catch (const Json::exception& e) {
                send_error(res, 400, Json{{"code", "BadRequest"}, {"message", "malformed JSON body"}, {"detail", e.what()}});
            } catch (const std::exception& e) {
                send_error(res, 500, Json{{"code", "Internal"}, {"message", e.what()}, {"detail", ""}});
            }
        };
    }

    void maybe_expire() {
        const auto now = Clock::now().time_since_epoch().count();
        auto last = last_expiry.load();
        const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::seconds(30)).count();
        if (now - last > period && last_expiry.compare_exchange_strong(last, now)) store.expire();
    }

    std::shared_ptr<Session> session(const httplib::Request& req) {
        auto s = store.find(req.matches[1]);
        if (!s) throw HttpError(404, "NotFound", "no such session", req.matches[1]);
        return s;
    }

    // Snapshot of the mapped dataset; the session lock is only held to copy it.
    std::shared_ptr<const Dataset> dataset(const Session& s) {
        std::shared_lock lock(s.mu);
        if (!s.dataset) throw HttpError(409, "MappingRequired", "map the dataset's variables first");
        return s.dataset;
    }

    void routes();
    void upload(const httplib::Request& req, httplib::Response& res);
};

void Service::Impl::upload(const httplib::Request& req, httplib::Response& res) {
    SourceSpec src;
    src.max_bytes = cfg.max_upload_bytes;
    std::string bytes;
    std::optional<std::string> url;

    if (req.is_multipart_form_data()) {
        if (req.has_file("file")) {
            const auto f = req.get_file_value("file");
            src.origin = Origin::FileBytes;
            src.declared_name = f.filename;
            bytes = f.content;
        } else if (req.has_file("pasted")) {
            src.origin = Origin::PastedText;
            bytes = req.get_file_value("pasted").content;
        } else if (req.has_file("url")) {
            url = req.get_file_value("url").content;
        } else {
            throw HttpError(400, "BadRequest", "multipart upload needs a 'file', 'pasted' or 'url' field");
        }
    } else {
        if (req.body.empty()) throw HttpError(400, "BadRequest", "empty request body");
        const auto j = Json::parse(req.body);
        if (!j.is_object()) throw HttpError(400, "BadRequest", "expected a JSON object");
        if (j.contains("url") && j["url"].is_string()) {
            url = j["url"].get<std::string>();
        } else if (j.contains("pasted") && j["pasted"].is_string()) {
            src.origin = Origin::PastedText;
            bytes = j["pasted"].get<std::string>();
        } else {
            throw HttpError(400, "BadRequest", "expected {\"url\": ...} or {\"pasted\": ...}");
        }
        if (j.contains("name") && j["name"].is_string()) src.declared_name = j["name"].get<std::string>();
    }
    if (url) {
        FetchLimits limits;
        limits.max_bytes = cfg.max_upload_bytes;
        auto fetched = fetch_url(*url, limits);
        src.origin = Origin::Url;
        if (!src.declared_name && !fetched.declared_name.empty()) src.declared_name = fetched.declared_name;
        bytes = std::move(fetched.body);
    }
    if (bytes.size() > cfg.max_upload_bytes)
        throw Error(ErrorCode::TooLarge, "upload exceeds the size limit", std::to_string(cfg.max_upload_bytes) + " bytes");

    const auto sniff = src.origin == Origin::PastedText ? SniffResult{TextFormat::Tsv, Compression::None}
                                                        : sniff_format(src, std::string_view(bytes).substr(0, 512));
    auto table = parse_table(bytes, sniff.format, sniff.compression, src.max_bytes);
    auto s = std::make_shared<Session>();
    s->name = src.declared_name.value_or(src.origin == Origin::PastedText ? "pasted" : "dataset");
    s->format = sniff.format;
    s->compression = sniff.compression;
    s->columns = infer_columns(table);
    s->raw = std::make_shared<const RawTable>(std::move(table));
    s = store.add(std::move(s));
    send_json(res, Json{{"session_id", s->id},
                        {"name", s->name},
                        {"format", to_string(s->format)},
                        {"compression", to_string(s->compression)},
                        {"columns", report::columns_json(s->columns)},
                        {"n_rows", s->raw->rows.size()}});
}

void Service::Impl::routes() {
    constexpr const char* kId = "/api/datasets/([^/]+)";
    auto path = [&](const char* suffix) { return std::string(kId) + suffix; };

    server.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
                   send_json(res, Json{{"status", "ok"}, {"version", "0.1.0"}});
               }));

    server.Get("/api/meta", guarded([this](const httplib::Request&, httplib::Response& res) {
                   Json measures = Json::array();
                   for (auto m : kAllMeasures)
                       measures.push_back({{"name", measure_name(m)}, {"label", measure_label(m, 0.05)}});
                   Json kinds = Json::array();
                   for (auto k : {PlotKind::Scatter, PlotKind::BlandAltman, PlotKind::Ridgeline, PlotKind::DensityPairs,
                                  PlotKind::Forest, PlotKind::Lolly, PlotKind::Heat, PlotKind::Zip, PlotKind::NestedLoop})
                       kinds.push_back(to_string(k));
                   Json formats = Json::array({"svg"});
                   if (cfg.svg_converter) formats.insert(formats.end(), {"png", "pdf", "eps"});
                   send_json(res, Json{{"measures", std::move(measures)},
                                       {"plot_kinds", std::move(kinds)},
                                       {"themes", {"default", "minimal", "dark"}},
                                       {"image_formats", std::move(formats)},
                                       {"table_formats", {"csv", "tsv", "json", "latex"}},
                                       {"max_upload_bytes", cfg.max_upload_bytes}});
               }));

    server.Post("/api/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) { upload(req, res); }));

    server.Get(kId, guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   std::shared_lock lock(s->mu);
                   Json j{{"session_id", s->id},
                          {"name", s->name},
                          {"format", to_string(s->format)},
                          {"compression", to_string(s->compression)},
                          {"columns", report::columns_json(s->columns)},
                          {"n_rows", s->raw->rows.size()},
                          {"mapping", s->dataset ? report::mapping_to_json(s->dataset->mapping()) : Json(nullptr)},
                          {"options", options_json(s->defaults)}};
                   send_json(res, j);
               }));

    server.Delete(kId, guarded([this](const httplib::Request& req, httplib::Response& res) {
                      if (!store.erase(req.matches[1])) throw HttpError(404, "NotFound", "no such session", req.matches[1]);
                      res.status = 204;
                  }));

    server.Put(path("/mapping"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   const auto mapping = report::mapping_from_json(Json::parse(req.body));
                   std::shared_ptr<const RawTable> raw;
                   {
                       std::shared_lock lock(s->mu);
                       raw = s->raw;
                   }
                   auto ds = std::make_shared<const Dataset>(apply_mapping(*raw, mapping));
                   Json j{{"mapping", report::mapping_to_json(ds->mapping())}};
                   j.update(report::strata_json(*ds));
                   {
                       std::unique_lock lock(s->mu);
                       s->dataset = std::move(ds);
                       store.spill(*s);
                   }
                   send_json(res, j);
               }));

    server.Get(path("/mapping"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto ds = dataset(*session(req));
                   Json j{{"mapping", report::mapping_to_json(ds->mapping())}};
                   j.update(report::strata_json(*ds));
                   send_json(res, j);
               }));

    server.Get(path("/options"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   std::shared_lock lock(s->mu);
                   send_json(res, options_json(s->defaults));
               }));

    server.Put(path("/options"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   const auto j = Json::parse(req.body);
                   if (!j.is_object()) throw HttpError(400, "BadRequest", "expected a JSON object");
                   std::unique_lock lock(s->mu);
                   auto q = s->defaults;
                   for (const auto& [k, v] : j.items()) {
                       if (k == "sig_digits") {
                           if (!v.is_number_integer() || v.get<int>() < 1 || v.get<int>() > 15)
                               throw Error(ErrorCode::InvalidArgument, "sig_digits must be an integer in [1, 15]");
                           q.style.sig_digits = v.get<int>();
                       } else if (k == "include_mcse") {
                           q.style.include_mcse = v.get<bool>();
                       } else if (k == "caption") {
                           q.style.caption = v.get<std::string>();
                       } else if (k == "orientation") {
                           const auto o = v.get<std::string>();
                           if (o != "tidy" && o != "wide")
                               throw Error(ErrorCode::InvalidArgument, "orientation must be tidy or wide", o);
                           q.style.orientation = o == "wide" ? Orientation::Wide : Orientation::Tidy;
                       } else if (k == "measures") {
                           if (v.is_null()) {
                               q.measures.reset();
                           } else {
                               std::string list;
                               if (v.is_string()) {
                                   list = v.get<std::string>();
                               } else {
                                   for (const auto& m : v) list += m.get<std::string>() + ",";
                               }
                               auto ms = parse_measure_list(list);
                               if (ms.empty())
                                   q.measures.reset();
                               else
                                   q.measures = std::move(ms);
                           }
                       } else {
                           throw Error(ErrorCode::InvalidArgument, "unknown option", k);
                       }
                   }
                   s->defaults = q;
                   store.spill(*s);
                   send_json(res, options_json(q));
               }));

    server.Get(path("/preview"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   std::shared_ptr<const RawTable> raw;
                   std::vector<Column> columns;
                   {
                       std::shared_lock lock(s->mu);
                       raw = s->raw;
                       columns = s->columns;
                   }
                   auto number = [&](const char* key, std::size_t dflt, std::size_t max) {
                       if (!req.has_param(key)) return dflt;
                       const auto v = req.get_param_value(key);
                       const auto d = parse_number(v);
                       if (!d || *d < 0 || *d != std::floor(*d) || *d > static_cast<double>(max))
                           throw Error(ErrorCode::InvalidArgument, std::string(key) + " must be a non-negative integer", v);
                       return static_cast<std::size_t>(*d);
                   };
                   const auto total = raw->rows.size();
                   const auto offset = number("offset", 0, std::numeric_limits<std::uint32_t>::max());
                   const auto limit = number("limit", 50, 10000);
                   Json rows = Json::array();
                   for (std::size_t i = offset; i < total && i < offset + limit; ++i) rows.push_back(raw->rows[i]);
                   send_json(res, Json{{"total", total},
                                       {"offset", offset},
                                       {"limit", limit},
                                       {"header", raw->header},
                                       {"columns", report::columns_json(columns)},
                                       {"rows", std::move(rows)}});
               }));

    server.Get(path("/performance"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   auto ds = dataset(*s);
                   report::PerformanceQuery defaults;
                   {
                       std::shared_lock lock(s->mu);
                       defaults = s->defaults;
                   }
                   const auto q = report::parse_performance_query(*ds, params_of(req), defaults);
                   res.set_content(report::render_performance(*ds, q), std::string(report::content_type(q.format)));
               }));

    server.Get(path("/missing"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, report::missing_table_json(*dataset(*session(req))));
               }));

    server.Get(path("/missing/bar"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto ds = dataset(*session(req));
                   const auto by = req.has_param("by") ? req.get_param_value("by") : "method";
                   if (by != "method" && by != "dgm")
                       throw Error(ErrorCode::InvalidArgument, "by must be method or dgm", by);
                   send_json(res, report::missing_bar_json(
                                      missing_bar_data(*ds, by == "dgm" ? MissingGroupBy::Dgm : MissingGroupBy::Method)));
               }));

    server.Get(path("/missing/heat"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto ds = dataset(*session(req));
                   send_json(res, report::missing_heat_json(missing_heat_data(*ds, req.get_param_value("variable"))));
               }));

    server.Get(path("/missing/shadow"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto ds = dataset(*session(req));
                   if (!req.has_param("x") || !req.has_param("y"))
                       throw Error(ErrorCode::InvalidArgument, "shadow plots need x and y variables");
                   send_json(res, report::shadow_json(
                                      shadow_scatter_data(*ds, req.get_param_value("x"), req.get_param_value("y"))));
               }));

    server.Get(path("/missing/matrix"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto ds = dataset(*session(req));
                   std::size_t blocks = 100;
                   if (req.has_param("blocks")) {
                       const auto d = parse_number(req.get_param_value("blocks"));
                       if (!d || *d < 1 || *d > 10000 || *d != std::floor(*d))
                           throw Error(ErrorCode::InvalidArgument, "blocks must be an integer in [1, 10000]");
                       blocks = static_cast<std::size_t>(*d);
                   }
                   send_json(res, report::missing_matrix_json(missing_matrix(*ds, blocks)));
               }));

    auto plot_kind = [](const httplib::Request& req) {
        const std::string name = req.matches[2];
        const auto k = parse_plot_kind(name);
        if (!k) throw HttpError(404, "NotFound", "unknown plot kind", name);
        return *k;
    };

    server.Get(path("/plots/([^/]+)"), guarded([this, plot_kind](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   const auto kind = plot_kind(req);
                   auto ds = dataset(*s);
                   const auto spec = report::parse_plot_spec(*ds, kind, params_of(req));
                   send_json(res, report::plot_json(spec, build_plot(*ds, spec)));
               }));

    server.Post(path("/plots/([^/]+)/render"),
                guarded([this, plot_kind](const httplib::Request& req, httplib::Response& res) {
                    auto s = session(req);
                    const auto kind = plot_kind(req);
                    auto ds = dataset(*s);
                    auto params = params_of(req);
                    if (!req.body.empty()) {
                        const auto j = Json::parse(req.body);
                        if (!j.is_object()) throw HttpError(400, "BadRequest", "expected a JSON object");
                        for (const auto& [k, v] : j.items()) {
                            if (v.is_null()) continue;
                            if (v.is_string())
                                params[k] = v.get<std::string>();
                            else if (v.is_array()) {
                                std::string joined;
                                for (const auto& x : v) joined += (joined.empty() ? "" : ",") + x.get<std::string>();
                                params[k] = joined;
                            } else
                                params[k] = v.dump();
                        }
                    }
                    const std::string format = params.count("format") ? params["format"] : "svg";
                    if (format != "svg" && format != "png" && format != "pdf" && format != "eps")
                        throw Error(ErrorCode::InvalidArgument, "format must be svg, png, pdf or eps", format);
                    if (format != "svg" && !cfg.svg_converter)
                        throw Error(ErrorCode::InvalidArgument, "no svg converter is configured; only svg is available",
                                    format);
                    const auto spec = report::parse_plot_spec(*ds, kind, params);
                    auto svg = render_svg(spec, build_plot(*ds, spec));
                    if (format != "svg") svg = convert_svg(svg, *cfg.svg_converter, format, spec);
                    res.set_header("Content-Disposition",
                                   "attachment; filename=\"" + std::string(to_string(kind)) + "." + format + "\"");
                    res.set_content(std::move(svg), std::string(image_content_type(format)));
                }));

    server.Get(path("/export"), guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto s = session(req);
                   const auto what = req.has_param("what") ? req.get_param_value("what") : "table";
                   std::string name;
                   {
                       std::shared_lock lock(s->mu);
                       name = stem_of(s->name);
                   }
                   if (what == "table") {
                       auto ds = dataset(*s);
                       report::PerformanceQuery defaults;
                       {
                           std::shared_lock lock(s->mu);
                           defaults = s->defaults;
                       }
                       defaults.format = report::TableFormat::Csv;
                       const auto q = report::parse_performance_query(*ds, params_of(req), defaults);
                       res.set_header("Content-Disposition", "attachment; filename=\"" + name + "-performance." +
                                                                 std::string(report::file_extension(q.format)) + "\"");
                       res.set_content(report::render_performance(*ds, q), std::string(report::content_type(q.format)));
                   } else if (what == "estimates") {
                       const auto f = report::parse_table_format(req.has_param("format") ? req.get_param_value("format")
                                                                                         : "csv");
                       if (!f || *f == report::TableFormat::Latex)
                           throw Error(ErrorCode::InvalidArgument, "estimates export format must be csv, tsv or json");
                       const auto tf = *f == report::TableFormat::Csv   ? TextFormat::Csv
                                       : *f == report::TableFormat::Tsv ? TextFormat::Tsv
                                                                        : TextFormat::JsonRecords;
                       std::shared_ptr<const RawTable> raw;
                       {
                           std::shared_lock lock(s->mu);
                           raw = s->raw;
                       }
                       res.set_header("Content-Disposition", "attachment; filename=\"" + name + "." +
                                                                 std::string(report::file_extension(*f)) + "\"");
                       res.set_content(to_delimited(*raw, tf), std::string(content_type(tf)));
                   } else {
                       throw Error(ErrorCode::InvalidArgument, "what must be table or estimates", what);
                   }
               }));

    // Bodies for errors httplib produces itself (404 routes, 413 payloads, ...).
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
        std::string code = "HttpError";
        if (res.status == 404) code = "NotFound";
        if (res.status == 413) code = std::string(to_string(ErrorCode::TooLarge));
        if (res.status == 400) code = "BadRequest";
        if (res.status == 405) code = "MethodNotAllowed";
        res.set_content(Json{{"code", code}, {"message", httplib::status_message(res.status)}, {"detail", ""}}.dump(2) + "\n",
                        "application/json; charset=utf-8");
        return httplib::Server::HandlerResponse::Handled;
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "unknown error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send_error(res, 500, Json{{"code", "Internal"}, {"message", what}, {"detail", ""}});
    });
}

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
    auto& srv = impl_->server;
    const auto& cfg = impl_->cfg;
    // Multipart framing adds a little on top of the file itself.
    srv.set_payload_max_length(cfg.max_upload_bytes + 64 * 1024);
    // SO_REUSEADDR only: SO_REUSEPORT would let a second server share a busy port.
    srv.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    const std::size_t threads = cfg.threads ? cfg.threads : std::max(4u, std::thread::hardware_concurrency());
    srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    srv.set_read_timeout(120, 0);
    impl_->routes();
    if (cfg.static_dir && !srv.set_mount_point("/", cfg.static_dir->string()))
        throw std::runtime_error("static directory not found: " + cfg.static_dir->string());
}

Service::~Service() { stop(); }

int Service::bind() {
    auto& i = *impl_;
    if (i.bound) return i.port;
    if (i.cfg.port == 0) {
        i.port = i.server.bind_to_any_port(i.cfg.bind);
        if (i.port < 0) throw PortBusyError("cannot bind " + i.cfg.bind);
    } else {
        if (!i.server.bind_to_port(i.cfg.bind, i.cfg.port))
            throw PortBusyError("cannot bind " + i.cfg.bind + ":" + std::to_string(i.cfg.port) + " (port in use?)");
        i.port = i.cfg.port;
    }
    i.bound = true;
    return i.port;
}

void Service::run() {
    bind();
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::size_t Service::session_count() const { return impl_->store.size(); }

void Service::expire_sessions() { impl_->store.expire(); }

}  // namespace simlens
