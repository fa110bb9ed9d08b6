#include "simlens/error.hpp"

namespace simlens {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownColumn: return "UnknownColumn";
        case ErrorCode::ArityMismatch: return "ArityMismatch";
        case ErrorCode::DuplicateColumn: return "DuplicateColumn";
        case ErrorCode::InvalidMapping: return "InvalidMapping";
        case ErrorCode::UnassignableRecord: return "UnassignableRecord";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::DecompressError: return "DecompressError";
        case ErrorCode::AmbiguousArchive: return "AmbiguousArchive";
        case ErrorCode::RaggedRows: return "RaggedRows";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::EncodingError: return "EncodingError";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::NetworkError: return "NetworkError";
        case ErrorCode::BadStatus: return "BadStatus";
        case ErrorCode::Cancelled: return "Cancelled";
        case ErrorCode::NoTruth: return "NoTruth";
        case ErrorCode::NoSEs: return "NoSEs";
        case ErrorCode::NoIntervals: return "NoIntervals";
        case ErrorCode::NoReference: return "NoReference";
        case ErrorCode::UnpairedRepetitions: return "UnpairedRepetitions";
        case ErrorCode::MissingIngredient: return "MissingIngredient";
        case ErrorCode::NonNumericVariable: return "NonNumericVariable";
        case ErrorCode::NoCommonRepetitions: return "NoCommonRepetitions";
        case ErrorCode::MeasureUnavailable: return "MeasureUnavailable";
        case ErrorCode::EmptyPlot: return "EmptyPlot";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::EmptySelection: return "EmptySelection";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConverterFailed: return "ConverterFailed";
    }
    return "Unknown";
}

RaggedRowsError::RaggedRowsError(std::size_t row, std::size_t expected, std::size_t got)
    : Error(ErrorCode::RaggedRows,
            "row " + std::to_string(row) + " has " + std::to_string(got) + " cells, expected " +
                std::to_string(expected),
            "row=" + std::to_string(row)),
      row_(row) {}

BadStatusError::BadStatusError(int status)
    : Error(ErrorCode::BadStatus, "server answered with HTTP status " + std::to_string(status),
            "status=" + std::to_string(status)),
      status_(status) {}

}  // namespace simlens
