#include <httplib.h>

#include <cstdlib>
#include <regex>

#include "simlens/error.hpp"
#include "simlens/ingest.hpp"

namespace simlens {

namespace {

struct Url {
    std::string scheme, host, path;  // path includes any query
    int port = 0;

    std::string origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

Url parse_url(const std::string& text) {
    static const std::regex re(R"(^([A-Za-z][A-Za-z0-9+.-]*)://(?:[^@/]*@)?(\[[^\]]+\]|[^:/?#]+)(?::(\d+))?([^#]*))");
    std::smatch m;
    if (!std::regex_search(text, m, re)) throw Error(ErrorCode::NetworkError, "malformed URL", text);
    Url u;
    u.scheme = m[1].str();
    for (auto& c : u.scheme) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (u.scheme != "http" && u.scheme != "https") throw Error(ErrorCode::NetworkError, "only http and https URLs are supported", text);
    u.host = m[2].str();
    u.port = m[3].matched ? std::stoi(m[3].str()) : (u.scheme == "https" ? 443 : 80);
    u.path = m[4].str();
    if (u.path.empty() || u.path[0] != '/') u.path.insert(0, "/");
    return u;
}

// RFC 3986 section 5.2.4, applied to the path part only.
std::string remove_dot_segments(const std::string& target) {
    const std::size_t q = target.find('?');
    const std::string path = target.substr(0, q);
    std::vector<std::string> out;
    std::size_t start = 1;
    while (start <= path.size()) {
        const std::size_t end = std::min(path.find('/', start), path.size());
        const std::string seg = path.substr(start, end - start);
        if (seg == "..") {
            if (!out.empty()) out.pop_back();
            if (end == path.size()) out.emplace_back();
        } else if (seg == ".") {
            if (end == path.size()) out.emplace_back();
        } else {
            out.push_back(seg);
        }
        start = end + 1;
    }
    std::string joined;
    for (const auto& seg : out) joined += "/" + seg;
    if (joined.empty()) joined = "/";
    return q == std::string::npos ? joined : joined + target.substr(q);
}

std::string resolve(const Url& base, const std::string& location) {
    if (location.find("://") != std::string::npos) return location;
    if (location.rfind("//", 0) == 0) return base.scheme + ":" + location;
    if (!location.empty() && location[0] == '/') return base.origin() + remove_dot_segments(location);
    std::string dir = base.path.substr(0, base.path.find('?'));
    dir = dir.substr(0, dir.rfind('/') + 1);
    return base.origin() + remove_dot_segments(dir + location);
}

std::string last_segment(const Url& u) {
    std::string p = u.path.substr(0, u.path.find('?'));
    return p.substr(p.rfind('/') + 1);
}

const char* env(const char* a, const char* b) {
    if (const char* v = std::getenv(a); v && *v) return v;
    if (const char* v = std::getenv(b); v && *v) return v;
    return nullptr;
}

bool bypass_proxy(const std::string& host) {
    const char* list = env("no_proxy", "NO_PROXY");
    if (!list) return false;
    std::string s = list;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        std::string item = s.substr(start, end - start);
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item == "*") return true;
        if (!item.empty() && item[0] == '.') item.erase(0, 1);
        if (!item.empty() && (host == item || (host.size() > item.size() && host.ends_with("." + item)))) return true;
        start = end + 1;
    }
    return false;
}

void configure_proxy(httplib::Client& cli, const Url& u) {
    if (bypass_proxy(u.host)) return;
    const char* p = u.scheme == "https" ? env("https_proxy", "HTTPS_PROXY") : env("http_proxy", "HTTP_PROXY");
    if (!p) return;
    std::string text = p;
    if (text.find("://") == std::string::npos) text = "http://" + text;
    static const std::regex re(R"(^[A-Za-z]+://(?:([^:@/]*)(?::([^@/]*))?@)?([^:/]+)(?::(\d+))?)");
    std::smatch m;
    if (!std::regex_search(text, m, re)) return;
    cli.set_proxy(m[3].str(), m[4].matched ? std::stoi(m[4].str()) : 80);
    if (m[1].matched) cli.set_proxy_basic_auth(m[1].str(), m[2].str());
}

}  // namespace

FetchResult fetch_url(const std::string& url, const FetchLimits& limits) {
    std::string current = url;
    for (int hop = 0;; ++hop) {
        const Url u = parse_url(current);
        httplib::Client cli(u.origin());
        cli.set_follow_location(false);
        cli.set_connection_timeout(limits.timeout);
        cli.set_read_timeout(limits.timeout);
        configure_proxy(cli, u);

        enum class Abort { None, TooLarge, Cancelled } abort = Abort::None;
        int status = 0;
        std::string location;
        std::string body;
        auto cancelled = [&] { return limits.cancel && limits.cancel->load(); };

        auto res = cli.Get(
            u.path, httplib::Headers{},
            [&](const httplib::Response& r) {
                status = r.status;
                location = r.get_header_value("Location");
                if (cancelled()) {
                    abort = Abort::Cancelled;
                    return false;
                }
                if (r.has_header("Content-Length") && status / 100 == 2) {
                    const auto declared = std::strtoull(r.get_header_value("Content-Length").c_str(), nullptr, 10);
                    if (declared > limits.max_bytes) {
                        abort = Abort::TooLarge;
                        return false;
                    }
                }
                return true;
            },
            [&](const char* data, std::size_t len) {
                if (cancelled()) {
                    abort = Abort::Cancelled;
                    return false;
                }
                if (status / 100 != 2) return true;  // drain error/redirect bodies
                if (body.size() + len > limits.max_bytes) {
                    abort = Abort::TooLarge;
                    return false;
                }
                body.append(data, len);
                return true;
            },
            [&](std::uint64_t, std::uint64_t) {
                if (cancelled()) abort = Abort::Cancelled;
                return abort == Abort::None;
            });

        if (abort == Abort::Cancelled) throw Error(ErrorCode::Cancelled, "download cancelled", current);
        if (abort == Abort::TooLarge)
            throw Error(ErrorCode::TooLarge, "download exceeds the limit of " + std::to_string(limits.max_bytes) + " bytes",
                        current);
        if (!res) throw Error(ErrorCode::NetworkError, "request failed: " + httplib::to_string(res.error()), current);

        if (status >= 300 && status < 400 && status != 304) {
            if (location.empty()) throw BadStatusError(status);
            if (hop >= limits.max_redirects)
                throw Error(ErrorCode::NetworkError, "too many redirects", std::to_string(hop + 1) + " redirects");
            current = resolve(u, location);
            continue;
        }
        if (status / 100 != 2) throw BadStatusError(status);
        return {std::move(body), last_segment(u), current};
    }
}

}  // namespace simlens
