#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selfloc {

enum class Errc {
    EmptyCloud,
    NonFinite,
    StrideMismatch,
    MissingSkip,
    ChannelMismatch,
    EmptyTensor,
    IncompleteWeights,
    SupportCollapse,
    UnrecordedNode,
    NonFiniteGradient,
    LengthMismatch,
    InsufficientData,
    DuplicateId,
    EmptyDb,
    BadSize,
    OutOfRange,
    ParseError,
    Io,
    InvalidArgument,
};

inline std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::EmptyCloud: return "EmptyCloud";
        case Errc::NonFinite: return "NonFinite";
        case Errc::StrideMismatch: return "StrideMismatch";
        case Errc::MissingSkip: return "MissingSkip";
        case Errc::ChannelMismatch: return "ChannelMismatch";
        case Errc::EmptyTensor: return "EmptyTensor";
        case Errc::IncompleteWeights: return "IncompleteWeights";
        case Errc::SupportCollapse: return "SupportCollapse";
        case Errc::UnrecordedNode: return "UnrecordedNode";
        case Errc::NonFiniteGradient: return "NonFiniteGradient";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::InsufficientData: return "InsufficientData";
        case Errc::DuplicateId: return "DuplicateId";
        case Errc::EmptyDb: return "EmptyDb";
        case Errc::BadSize: return "BadSize";
        case Errc::OutOfRange: return "OutOfRange";
        case Errc::ParseError: return "ParseError";
        case Errc::Io: return "Io";
        case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the engine carries one of the codes above so that
/// callers (tests, CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
    if (!ok) fail(code, what);
}

}  // namespace selfloc
