#include "simlens/ingest.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <nlohmann/json.hpp>
#include <vector>

#include "simlens/error.hpp"

namespace simlens {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_gzip(std::string_view b) {
    return b.size() >= 2 && static_cast<unsigned char>(b[0]) == 0x1f && static_cast<unsigned char>(b[1]) == 0x8b;
}

bool is_zip(std::string_view b) { return b.size() >= 4 && b.substr(0, 4) == std::string_view("PK\x03\x04", 4); }

std::uint16_t le16(std::string_view b, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | static_cast<unsigned char>(b[at + 1]) << 8);
}

std::uint32_t le32(std::string_view b, std::size_t at) {
    return static_cast<std::uint32_t>(le16(b, at)) | static_cast<std::uint32_t>(le16(b, at + 2)) << 16;
}

std::optional<TextFormat> format_from_name(std::string name) {
    name = lower(name);
    for (const char* z : {".gz", ".gzip", ".zip"})
        if (ends_with(name, z)) {
            name.resize(name.size() - std::strlen(z));
            break;
        }
    if (ends_with(name, ".csv")) return TextFormat::Csv;
    if (ends_with(name, ".tsv") || ends_with(name, ".tab")) return TextFormat::Tsv;
    if (ends_with(name, ".json")) return TextFormat::JsonRecords;
    return std::nullopt;
}

std::string too_large(std::size_t max_bytes) {
    return "payload exceeds the limit of " + std::to_string(max_bytes) + " bytes";
}

// Raw (windowBits < 0) or gzip (windowBits 16+) inflate into a bounded buffer.
std::string inflate_bounded(std::string_view in, int window_bits, std::size_t max_bytes, bool multi_member) {
    z_stream zs{};
    if (inflateInit2(&zs, window_bits) != Z_OK) throw Error(ErrorCode::DecompressError, "zlib initialisation failed");
    std::string out;
    std::array<char, 1 << 16> chunk;
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    for (;;) {
        zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END && rc != Z_BUF_ERROR) break;
        const std::size_t produced = chunk.size() - zs.avail_out;
        if (out.size() + produced > max_bytes) {
            inflateEnd(&zs);
            throw Error(ErrorCode::TooLarge, "decompressed " + too_large(max_bytes));
        }
        out.append(chunk.data(), produced);
        if (rc == Z_STREAM_END) {
            // Concatenated gzip members are one logical stream.
            if (multi_member && zs.avail_in > 0 && is_gzip({reinterpret_cast<const char*>(zs.next_in), zs.avail_in})) {
                inflateReset(&zs);
                continue;
            }
            break;
        }
        if (rc == Z_BUF_ERROR && zs.avail_in == 0) break;  // truncated
    }
    inflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error(ErrorCode::DecompressError, "compressed stream is corrupt or truncated");
    return out;
}

void validate_utf8(std::string_view s) {
    std::size_t i = 0;
    std::size_t line = 1;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c == '\n') ++line;
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        }
        bool ok = len != 0 && i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            ok = (cc & 0xC0) == 0x80;
            cp = cp << 6 | (cc & 0x3F);
        }
        // Reject overlong forms, surrogates and out-of-range code points.
        if (ok) ok = !(len == 2 && cp < 0x80) && !(len == 3 && cp < 0x800) && !(len == 4 && cp < 0x10000) &&
                     !(cp >= 0xD800 && cp <= 0xDFFF) && cp <= 0x10FFFF;
        if (!ok) throw Error(ErrorCode::EncodingError, "input is not valid UTF-8", "line " + std::to_string(line));
        i += len;
    }
}

RawTable finish(std::vector<std::vector<std::string>> rows) {
    if (rows.empty()) throw Error(ErrorCode::EmptyInput, "input holds no header row");
    RawTable t;
    t.header = std::move(rows.front());
    t.rows.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != t.header.size()) throw RaggedRowsError(r, t.header.size(), rows[r].size());
        t.rows.push_back(std::move(rows[r]));
    }
    return t;
}

// RFC 4180 with the delimiter as a parameter: quoted fields may contain the
// delimiter, doubled quotes and line breaks; CRLF, LF and CR all end a
// record; completely empty lines are skipped.
RawTable parse_delimited(std::string_view s, char delim) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool in_quotes = false;
    bool was_quoted = false;
    std::size_t line = 1;

    auto end_record = [&] {
        if (row.empty() && cell.empty() && !was_quoted) return;  // blank line
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
        row.clear();
        cell.clear();
        was_quoted = false;
    };

    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < s.size() && s[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                cell.push_back(c);
            }
            continue;
        }
        if (c == '"' && cell.empty() && !was_quoted) {
            in_quotes = true;
            was_quoted = true;
        } else if (c == delim) {
            row.push_back(std::move(cell));
            cell.clear();
            was_quoted = false;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < s.size() && s[i + 1] == '\n') ++i;
            end_record();
            ++line;
        } else {
            cell.push_back(c);
        }
    }
    if (in_quotes)
        throw Error(ErrorCode::RaggedRows, "unterminated quoted field", "line " + std::to_string(line));
    end_record();
    return finish(std::move(rows));
}

// SAX consumer for an array of flat objects. Number lexemes are kept as
// written so values survive without reformatting.
class RecordsSax : public nlohmann::json_sax<nlohmann::json> {
public:
    std::vector<std::string> keys;
    std::vector<std::vector<std::pair<std::size_t, std::string>>> objects;

    bool null() override { return scalar(""); }
    bool boolean(bool v) override { return scalar(v ? "true" : "false"); }
    bool number_integer(number_integer_t v) override { return scalar(std::to_string(v)); }
    bool number_unsigned(number_unsigned_t v) override { return scalar(std::to_string(v)); }
    bool number_float(number_float_t, const string_t& s) override { return scalar(s); }
    bool string(string_t& v) override { return scalar(v); }
    bool binary(binary_t&) override { return fail("binary values are not supported"); }

    bool start_object(std::size_t) override {
        if (depth_ != 1) return fail("expected an array of flat objects");
        ++depth_;
        objects.emplace_back();
        return true;
    }
    bool end_object() override {
        --depth_;
        return true;
    }
    bool start_array(std::size_t) override {
        if (depth_ != 0) return fail("nested arrays are not supported");
        ++depth_;
        return true;
    }
    bool end_array() override {
        --depth_;
        return true;
    }
    bool key(string_t& k) override {
        const auto it = std::find(keys.begin(), keys.end(), k);
        current_ = static_cast<std::size_t>(it - keys.begin());
        if (it == keys.end()) keys.push_back(k);
        return true;
    }
    bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& e) override {
        message = e.what();
        position = pos;
        return false;
    }

    std::string message;
    std::size_t position = 0;

private:
    bool scalar(std::string v) {
        if (depth_ != 2) return fail("expected an array of flat objects");
        objects.back().emplace_back(current_, std::move(v));
        return true;
    }
    bool fail(std::string m) {
        message = std::move(m);
        return false;
    }

    int depth_ = 0;
    std::size_t current_ = 0;
};

RawTable parse_json_records(std::string_view s) {
    if (std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }))
        throw Error(ErrorCode::EmptyInput, "input is empty");
    RecordsSax sax;
    if (!nlohmann::json::sax_parse(s.begin(), s.end(), &sax))
        throw Error(ErrorCode::UnsupportedFormat, "not a JSON array of records",
                    sax.message.empty() ? std::string() : sax.message);
    if (sax.keys.empty()) throw Error(ErrorCode::EmptyInput, "JSON input holds no records");
    RawTable t;
    t.header = sax.keys;
    t.rows.reserve(sax.objects.size());
    for (auto& obj : sax.objects) {
        std::vector<std::string> row(t.header.size());
        for (auto& [k, v] : obj) row[k] = std::move(v);
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace

std::string_view to_string(TextFormat f) {
    switch (f) {
        case TextFormat::Csv: return "csv";
        case TextFormat::Tsv: return "tsv";
        case TextFormat::JsonRecords: return "json";
    }
    return "?";
}

std::string_view to_string(Compression c) {
    switch (c) {
        case Compression::None: return "none";
        case Compression::Gzip: return "gzip";
        case Compression::Zip: return "zip";
    }
    return "?";
}

SniffResult sniff_format(const SourceSpec& source, std::string_view head) {
    if (source.origin == Origin::PastedText) return {TextFormat::Tsv, Compression::None};

    SniffResult r;
    if (is_gzip(head))
        r.compression = Compression::Gzip;
    else if (is_zip(head))
        r.compression = Compression::Zip;

    const std::string name = source.declared_name.value_or("");
    auto fmt = format_from_name(name);
    if (!fmt && r.compression == Compression::Zip && head.size() >= 30) {
        const std::size_t len = le16(head, 26);
        if (head.size() >= 30 + len) fmt = format_from_name(std::string(head.substr(30, len)));
    }
    if (!fmt)
        throw Error(ErrorCode::UnsupportedFormat, "unsupported file type; expected .csv, .tsv or .json",
                    name.empty() ? "no file name" : name);
    r.format = *fmt;
    return r;
}

std::string gunzip(std::string_view bytes, std::size_t max_bytes) {
    if (!is_gzip(bytes)) throw Error(ErrorCode::DecompressError, "missing gzip header");
    return inflate_bounded(bytes, 16 + MAX_WBITS, max_bytes, true);
}

ZipEntry unzip_single(std::string_view b, std::size_t max_bytes) {
    // End of central directory: 22 bytes plus an optional comment of up to 64 KiB.
    constexpr std::uint32_t kEocd = 0x06054b50, kCentral = 0x02014b50, kLocal = 0x04034b50;
    if (b.size() < 22) throw Error(ErrorCode::DecompressError, "zip archive is truncated");
    std::size_t eocd = std::string_view::npos;
    const std::size_t floor = b.size() > 22 + 65535 ? b.size() - 22 - 65535 : 0;
    for (std::size_t p = b.size() - 22 + 1; p-- > floor;)
        if (le32(b, p) == kEocd) {
            eocd = p;
            break;
        }
    if (eocd == std::string_view::npos) throw Error(ErrorCode::DecompressError, "zip end-of-directory not found");

    const std::size_t count = le16(b, eocd + 10);
    const std::size_t cd_offset = le32(b, eocd + 16);
    if (count == 0xFFFF || cd_offset == 0xFFFFFFFF) throw Error(ErrorCode::DecompressError, "zip64 archives are not supported");

    struct Entry {
        std::string name;
        std::uint16_t method;
        std::uint32_t crc, csize, usize, local;
    };
    std::vector<Entry> files;
    std::size_t p = cd_offset;
    for (std::size_t i = 0; i < count; ++i) {
        if (p + 46 > b.size() || le32(b, p) != kCentral) throw Error(ErrorCode::DecompressError, "zip directory is corrupt");
        const std::size_t n = le16(b, p + 28), m = le16(b, p + 30), k = le16(b, p + 32);
        if (p + 46 + n > b.size()) throw Error(ErrorCode::DecompressError, "zip directory is corrupt");
        Entry e{std::string(b.substr(p + 46, n)), le16(b, p + 10), le32(b, p + 16), le32(b, p + 20), le32(b, p + 24),
                le32(b, p + 42)};
        if (!e.name.empty() && e.name.back() != '/') files.push_back(std::move(e));
        p += 46 + n + m + k;
    }
    if (files.size() != 1)
        throw Error(ErrorCode::AmbiguousArchive, "zip archive must contain exactly one file",
                    std::to_string(files.size()) + " entries");

    const Entry& e = files.front();
    if (e.usize > max_bytes) throw Error(ErrorCode::TooLarge, "decompressed " + too_large(max_bytes));
    if (e.local + 30 > b.size() || le32(b, e.local) != kLocal) throw Error(ErrorCode::DecompressError, "zip entry header is corrupt");
    const std::size_t data = e.local + 30 + le16(b, e.local + 26) + le16(b, e.local + 28);
    if (data + e.csize > b.size()) throw Error(ErrorCode::DecompressError, "zip entry is truncated");
    const std::string_view raw = b.substr(data, e.csize);

    ZipEntry out;
    out.name = e.name;
    if (e.method == 0)
        out.data.assign(raw);
    else if (e.method == 8)
        out.data = inflate_bounded(raw, -MAX_WBITS, max_bytes, false);
    else
        throw Error(ErrorCode::DecompressError, "unsupported zip compression method", std::to_string(e.method));

    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data.data()), static_cast<uInt>(out.data.size()));
    if (crc != e.crc || out.data.size() != e.usize) throw Error(ErrorCode::DecompressError, "zip entry fails its checksum");
    return out;
}

RawTable parse_table(std::string_view bytes, TextFormat format, Compression compression, std::size_t max_bytes) {
    std::string expanded;
    switch (compression) {
        case Compression::None:
            if (bytes.size() > max_bytes) throw Error(ErrorCode::TooLarge, too_large(max_bytes));
            break;
        case Compression::Gzip:
            expanded = gunzip(bytes, max_bytes);
            bytes = expanded;
            break;
        case Compression::Zip:
            expanded = unzip_single(bytes, max_bytes).data;
            bytes = expanded;
            break;
    }
    if (bytes.substr(0, 3) == "\xEF\xBB\xBF") bytes.remove_prefix(3);
    validate_utf8(bytes);
    switch (format) {
        case TextFormat::Csv: return parse_delimited(bytes, ',');
        case TextFormat::Tsv: return parse_delimited(bytes, '\t');
        case TextFormat::JsonRecords: return parse_json_records(bytes);
    }
    throw Error(ErrorCode::UnsupportedFormat, "unknown format");
}

RawTable ingest(const SourceSpec& source, std::string_view bytes) {
    if (bytes.size() > source.max_bytes) throw Error(ErrorCode::TooLarge, too_large(source.max_bytes));
    const auto s = sniff_format(source, bytes.substr(0, 4096));
    return parse_table(bytes, s.format, s.compression, source.max_bytes);
}

}  // namespace simlens
