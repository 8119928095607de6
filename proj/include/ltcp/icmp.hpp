// ltcp/icmp.hpp
// ICMP echo request/reply. Other ICMP types are accepted and ignored.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ltcp/checksum.hpp"
#include "ltcp/wire.hpp"

namespace ltcp {

namespace icmp {
inline constexpr std::size_t kHeaderLen = 8;
inline constexpr std::uint8_t kEchoReply = 0;
inline constexpr std::uint8_t kEchoRequest = 8;
}  // namespace icmp

struct IcmpEcho {
    std::uint8_t type = icmp::kEchoRequest;
    std::uint8_t code = 0;
    std::uint16_t checksum = 0;
    std::uint16_t identifier = 0;
    std::uint16_t sequence = 0;
    std::vector<std::uint8_t> payload;

    /// Serializes with a freshly computed checksum.
    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out(icmp::kHeaderLen + payload.size());
        out[0] = type;
        out[1] = code;
        store_be16(out, 4, identifier);
        store_be16(out, 6, sequence);
        std::copy(payload.begin(), payload.end(), out.begin() + icmp::kHeaderLen);
        store_be16(out, 2, internet_checksum(out));
        return out;
    }

    static IcmpEcho parse(std::span<const std::uint8_t> msg) {
        IcmpEcho e;
        e.type = msg[0];
        e.code = msg[1];
        e.checksum = load_be16(msg, 2);
        e.identifier = load_be16(msg, 4);
        e.sequence = load_be16(msg, 6);
        e.payload.assign(msg.begin() + icmp::kHeaderLen, msg.end());
        return e;
    }
};

struct IcmpOutcome {
    enum class Kind : std::uint8_t { Reply, EchoReplyReceived, Ignored, Dropped };

    Kind kind = Kind::Ignored;
    IcmpEcho message;  // the reply to send, or the echo reply that arrived
};

/// Handles one ICMP message. An echo request produces the matching reply;
/// an echo reply is surfaced to the caller (for ping); anything shorter than
/// the 8-byte header or failing its checksum is dropped.
inline IcmpOutcome icmp_input(std::span<const std::uint8_t> msg) {
    IcmpOutcome out;
    if (msg.size() < icmp::kHeaderLen || !checksum_verifies(msg)) {
        out.kind = IcmpOutcome::Kind::Dropped;
        return out;
    }
    IcmpEcho e = IcmpEcho::parse(msg);
    if (e.type == icmp::kEchoRequest && e.code == 0) {
        e.type = icmp::kEchoReply;
        e.checksum = 0;
        out.kind = IcmpOutcome::Kind::Reply;
        out.message = std::move(e);
    } else if (e.type == icmp::kEchoReply && e.code == 0) {
        out.kind = IcmpOutcome::Kind::EchoReplyReceived;
        out.message = std::move(e);
    }
    return out;
}

}  // namespace ltcp
