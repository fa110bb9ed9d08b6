#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "simlens/model.hpp"

namespace simlens {

inline constexpr std::size_t kDefaultMaxBytes = 100'000'000;

enum class Origin { FileBytes, PastedText, Url };
enum class TextFormat { Csv, Tsv, JsonRecords };
enum class Compression { None, Gzip, Zip };

std::string_view to_string(TextFormat f);
std::string_view to_string(Compression c);

struct SourceSpec {
    Origin origin = Origin::FileBytes;
    std::optional<std::string> declared_name;
    // Applied both to the payload as received and to its decompressed form.
    std::size_t max_bytes = kDefaultMaxBytes;
};

struct SniffResult {
    TextFormat format = TextFormat::Csv;
    Compression compression = Compression::None;
};

// Compression comes from magic bytes; format from the (case-insensitive)
// extension once any .gz/.zip suffix is stripped. A bare .zip name falls
// back to the first entry's name in the local file header. Pasted text is
// always tsv. Throws Error(UnsupportedFormat).
SniffResult sniff_format(const SourceSpec& source, std::string_view head_bytes);

// Streaming inflate that gives up as soon as the output would exceed
// max_bytes (Error TooLarge); DecompressError on corrupt input.
std::string gunzip(std::string_view bytes, std::size_t max_bytes = kDefaultMaxBytes);

struct ZipEntry {
    std::string name;
    std::string data;
};
// The archive must hold exactly one file entry (AmbiguousArchive otherwise).
ZipEntry unzip_single(std::string_view bytes, std::size_t max_bytes = kDefaultMaxBytes);

// First row is the header; every data row must match its arity
// (RaggedRowsError). Empty input raises EmptyInput, invalid UTF-8
// EncodingError. A leading BOM is dropped.
RawTable parse_table(std::string_view bytes, TextFormat format, Compression compression,
                     std::size_t max_bytes = kDefaultMaxBytes);

// sniff_format + size check + parse_table.
RawTable ingest(const SourceSpec& source, std::string_view bytes);

struct FetchLimits {
    std::size_t max_bytes = kDefaultMaxBytes;
    int max_redirects = 5;
    std::chrono::seconds timeout{60};
    // Polled while the transfer runs; setting it aborts with Error(Cancelled).
    const std::atomic<bool>* cancel = nullptr;
};

struct FetchResult {
    std::string body;
    std::string declared_name;  // final path segment of the last URL requested
    std::string final_url;
};

// http/https GET honoring http_proxy/https_proxy/no_proxy. Throws
// NetworkError, TooLarge, Cancelled or BadStatusError.
FetchResult fetch_url(const std::string& url, const FetchLimits& limits = {});

}  // namespace simlens
