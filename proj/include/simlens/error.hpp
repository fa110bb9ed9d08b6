#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace simlens {

// Stable error codes. The string form is part of the service's JSON error
// contract, so existing names must not change.
enum class ErrorCode {
    // model
    UnknownColumn,
    ArityMismatch,
    DuplicateColumn,
    InvalidMapping,
    UnassignableRecord,
    // ingest
    UnsupportedFormat,
    DecompressError,
    AmbiguousArchive,
    RaggedRows,
    EmptyInput,
    EncodingError,
    TooLarge,
    NetworkError,
    BadStatus,
    Cancelled,
    // measures
    NoTruth,
    NoSEs,
    NoIntervals,
    NoReference,
    UnpairedRepetitions,
    MissingIngredient,
    // missingness / plots / export
    NonNumericVariable,
    NoCommonRepetitions,
    MeasureUnavailable,
    EmptyPlot,
    NonFinite,
    EmptySelection,
    InvalidArgument,
    ConverterFailed,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string detail = {})
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

// Raised for ragged input; carries the offending 1-based data row.
class RaggedRowsError : public Error {
public:
    RaggedRowsError(std::size_t row, std::size_t expected, std::size_t got);
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class BadStatusError : public Error {
public:
    explicit BadStatusError(int status);
    int status() const noexcept { return status_; }

private:
    int status_;
};

}  // namespace simlens
