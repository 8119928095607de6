// ltcp/ipv4.hpp
// IPv4 layer: header build/parse, packet fill, and the protocol dispatcher.
//
// Only 20-byte headers are produced or accepted. DF is always set and
// fragments are never generated; oversized payloads are rejected.

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>

#include "ltcp/buffers.hpp"
#include "ltcp/checksum.hpp"
#include "ltcp/error.hpp"
#include "ltcp/wire.hpp"

namespace ltcp {

namespace ip {

inline constexpr std::size_t kHeaderLen = 20;
inline constexpr std::size_t kMaxPayload = kMtu - eth::kHeaderLen - kHeaderLen;  // 1480
inline constexpr std::size_t kPayloadOffset = eth::kHeaderLen + kHeaderLen;     // 34
inline constexpr std::uint8_t kProtoIcmp = 1;
inline constexpr std::uint8_t kProtoTcp = 6;
inline constexpr std::uint16_t kFlagDontFragment = 0x4000;

}  // namespace ip

struct Ipv4Header {
    std::uint8_t version = 4;
    std::uint8_t ihl = 5;
    std::uint8_t tos = 0;
    std::uint16_t total_length = 0;
    std::uint16_t identification = 0;
    std::uint16_t flags_fragment = ip::kFlagDontFragment;
    std::uint8_t ttl = 64;
    std::uint8_t protocol = 0;
    std::uint16_t checksum = 0;
    Ipv4Addr src = 0;
    Ipv4Addr dst = 0;

    friend bool operator==(const Ipv4Header&, const Ipv4Header&) = default;

    /// Serializes the fields as they are, checksum included.
    std::array<std::uint8_t, ip::kHeaderLen> serialize() const {
        std::array<std::uint8_t, ip::kHeaderLen> b{};
        b[0] = static_cast<std::uint8_t>((version << 4) | (ihl & 0x0F));
        b[1] = tos;
        store_be16(b, 2, total_length);
        store_be16(b, 4, identification);
        store_be16(b, 6, flags_fragment);
        b[8] = ttl;
        b[9] = protocol;
        store_be16(b, 10, checksum);
        store_be32(b, 12, src);
        store_be32(b, 16, dst);
        return b;
    }

    static Ipv4Header parse(std::span<const std::uint8_t> b) {
        if (b.size() < ip::kHeaderLen) {
            throw Error(Errc::SizeError, "truncated IPv4 header");
        }
        Ipv4Header h;
        h.version = b[0] >> 4;
        h.ihl = b[0] & 0x0F;
        h.tos = b[1];
        h.total_length = load_be16(b, 2);
        h.identification = load_be16(b, 4);
        h.flags_fragment = load_be16(b, 6);
        h.ttl = b[8];
        h.protocol = b[9];
        h.checksum = load_be16(b, 10);
        h.src = load_be32(b, 12);
        h.dst = load_be32(b, 16);
        return h;
    }
};

struct IpConfig {
    Ipv4Addr local_addr = 0;
    std::uint8_t default_ttl = 64;
    std::map<Ipv4Addr, MacAddress> neighbors;
};

enum class DropReason : std::uint8_t {
    None,
    Truncated,
    NotIpv4,
    BadChecksum,
    BadVersion,
    BadLength,
    NotForUs,
    UnknownProto,
};

constexpr std::string_view to_string(DropReason r) {
    switch (r) {
        case DropReason::None: return "None";
        case DropReason::Truncated: return "Truncated";
        case DropReason::NotIpv4: return "NotIpv4";
        case DropReason::BadChecksum: return "BadChecksum";
        case DropReason::BadVersion: return "BadVersion";
        case DropReason::BadLength: return "BadLength";
        case DropReason::NotForUs: return "NotForUs";
        case DropReason::UnknownProto: return "UnknownProto";
    }
    return "?";
}

struct Disposition {
    enum class Kind : std::uint8_t { DeliveredToTcp, DeliveredToIcmp, Dropped };

    Kind kind = Kind::Dropped;
    DropReason reason = DropReason::None;
    Ipv4Addr src = 0;
    Ipv4Addr dst = 0;
    // Transport payload region inside the global buffer.
    std::size_t offset = 0;
    std::size_t length = 0;

    static Disposition dropped(DropReason r) { return Disposition{Kind::Dropped, r}; }
    bool is_dropped() const noexcept { return kind == Kind::Dropped; }
};

inline std::string_view to_string(Disposition::Kind k) {
    switch (k) {
        case Disposition::Kind::DeliveredToTcp: return "DeliveredToTcp";
        case Disposition::Kind::DeliveredToIcmp: return "DeliveredToIcmp";
        case Disposition::Kind::Dropped: return "Dropped";
    }
    return "?";
}

class IpLayer {
public:
    explicit IpLayer(IpConfig config) : config_(std::move(config)) {
        if (config_.local_addr == 0) {
            throw Error(Errc::InvalidConfig, "local address must be nonzero");
        }
        if (config_.default_ttl == 0) {
            throw Error(Errc::InvalidConfig, "ttl must be nonzero");
        }
        template_.ttl = config_.default_ttl;
        template_.src = config_.local_addr;
    }

    const IpConfig& config() const noexcept { return config_; }
    Ipv4Addr local_addr() const noexcept { return config_.local_addr; }
    std::uint16_t next_identification() const noexcept { return identification_; }

    std::optional<MacAddress> neighbor(Ipv4Addr addr) const {
        auto it = config_.neighbors.find(addr);
        if (it == config_.neighbors.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /// Header for the next outgoing packet; consumes one identification value.
    std::array<std::uint8_t, ip::kHeaderLen> fill_hdr(Ipv4Addr dst, std::uint8_t protocol,
                                                      std::size_t payload_len) {
        if (payload_len > ip::kMaxPayload) {
            throw Error(Errc::SizeError, "payload exceeds 1480 bytes and fragmentation is unsupported");
        }
        Ipv4Header h = template_;
        h.total_length = static_cast<std::uint16_t>(ip::kHeaderLen + payload_len);
        h.identification = identification_++;
        h.protocol = protocol;
        h.dst = dst;
        h.checksum = 0;
        auto bytes = h.serialize();
        store_be16(bytes, 10, internet_checksum(bytes));
        return bytes;
    }

    /// Writes header and payload behind the (caller-filled) Ethernet header.
    /// The payload may already live at its final position in g.
    static void fill_packet(GlobalBuffer& g, std::span<const std::uint8_t, ip::kHeaderLen> header,
                            std::span<const std::uint8_t> payload) {
        if (payload.size() > ip::kMaxPayload) {
            throw Error(Errc::SizeError, "packet does not fit the frame buffer");
        }
        auto buf = g.writable();
        if (!payload.empty()) {
            std::memmove(buf.data() + ip::kPayloadOffset, payload.data(), payload.size());
        }
        std::memcpy(buf.data() + eth::kHeaderLen, header.data(), header.size());
        g.set_size(ip::kPayloadOffset + payload.size());
    }

    /// Classifies a received frame. Never throws; every input yields a
    /// disposition. The checksum is checked before any other header field so
    /// that in-transit corruption is reported as such.
    Disposition handler(const GlobalBuffer& g) const noexcept {
        auto frame = g.data();
        if (frame.size() < eth::kHeaderLen) {
            return Disposition::dropped(DropReason::Truncated);
        }
        if (load_be16(frame, 12) != eth::kTypeIpv4) {
            return Disposition::dropped(DropReason::NotIpv4);
        }
        auto packet = frame.subspan(eth::kHeaderLen);
        if (packet.size() < ip::kHeaderLen) {
            return Disposition::dropped(DropReason::Truncated);
        }
        if (!checksum_verifies(packet.first(ip::kHeaderLen))) {
            return Disposition::dropped(DropReason::BadChecksum);
        }
        if ((packet[0] >> 4) != 4 || (packet[0] & 0x0F) != 5) {
            return Disposition::dropped(DropReason::BadVersion);
        }
        const std::size_t total = load_be16(packet, 2);
        if (total < ip::kHeaderLen || total > packet.size()) {
            return Disposition::dropped(DropReason::BadLength);
        }
        const Ipv4Addr dst = load_be32(packet, 16);
        if (dst != config_.local_addr) {
            return Disposition::dropped(DropReason::NotForUs);
        }
        Disposition d;
        d.src = load_be32(packet, 12);
        d.dst = dst;
        d.offset = ip::kPayloadOffset;
        d.length = total - ip::kHeaderLen;
        switch (packet[9]) {
            case ip::kProtoTcp: d.kind = Disposition::Kind::DeliveredToTcp; break;
            case ip::kProtoIcmp: d.kind = Disposition::Kind::DeliveredToIcmp; break;
            default: return Disposition::dropped(DropReason::UnknownProto);
        }
        return d;
    }

private:
    IpConfig config_;
    Ipv4Header template_;
    std::uint16_t identification_ = 0;
};

}  // namespace ltcp
