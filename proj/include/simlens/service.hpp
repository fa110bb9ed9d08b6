#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "simlens/ingest.hpp"

namespace simlens {

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::size_t max_upload_bytes = kDefaultMaxBytes;
    std::chrono::seconds session_ttl{24 * 3600};
    std::size_t max_sessions = 64;  // kept in memory; least recently used go first
    std::optional<std::filesystem::path> spill_dir;
    std::optional<std::string> svg_converter;  // shell command, svg on stdin
    std::optional<std::filesystem::path> static_dir;
    std::size_t threads = 0;  // 0: hardware concurrency
};

class PortBusyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// HTTP/1.1 JSON API over the engine; see README for the endpoint list.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds the socket and returns the port. Throws PortBusyError.
    int bind();
    // Serves until stop(); binds first if needed.
    void run();
    void stop();
    // Blocks until the server accepts connections.
    void wait_until_ready() const;

    std::size_t session_count() const;
    // Drops idle sessions; run periodically by the server itself.
    void expire_sessions();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace simlens
