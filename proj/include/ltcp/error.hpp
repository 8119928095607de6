// ltcp/error.hpp
// Error codes shared by every layer of the stack.
//
// Contract violations and resource failures are reported by throwing
// ltcp::Error. Paths that must be total (frame handlers, timers) never throw;
// they report through dispositions and counters instead.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ltcp {

enum class Errc {
    InvalidArgument,
    Exhausted,
    InvalidHandle,
    SizeError,
    StaleEpoch,
    Contract,
    Corrupt,
    InvalidRegister,
    ReadOnly,
    NotReady,
    FrameSize,
    InvalidConfig,
    NoSlot,
    AddrInUse,
    NoRoute,
    WouldBlock,
    NotConnected,
    Parse,
};

constexpr std::string_view to_string(Errc e) {
    switch (e) {
        case Errc::InvalidArgument: return "invalid-argument";
        case Errc::Exhausted: return "exhausted";
        case Errc::InvalidHandle: return "invalid-handle";
        case Errc::SizeError: return "size-error";
        case Errc::StaleEpoch: return "stale-epoch";
        case Errc::Contract: return "contract-violation";
        case Errc::Corrupt: return "corrupt";
        case Errc::InvalidRegister: return "invalid-register";
        case Errc::ReadOnly: return "read-only";
        case Errc::NotReady: return "not-ready";
        case Errc::FrameSize: return "frame-size";
        case Errc::InvalidConfig: return "invalid-config";
        case Errc::NoSlot: return "no-slot";
        case Errc::AddrInUse: return "addr-in-use";
        case Errc::NoRoute: return "no-route";
        case Errc::WouldBlock: return "would-block";
        case Errc::NotConnected: return "not-connected";
        case Errc::Parse: return "parse-error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// Raised by file parsers; offset is the byte position where parsing failed.
class ParseError : public Error {
public:
    ParseError(std::size_t offset, const std::string& what)
        : Error(Errc::Parse, what + " at offset " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace ltcp
