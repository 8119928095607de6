// ltcp/wire.hpp
// Big-endian field access and the Ethernet II header.

#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

namespace ltcp {

inline std::uint16_t load_be16(std::span<const std::uint8_t> p, std::size_t off) {
    return static_cast<std::uint16_t>((p[off] << 8) | p[off + 1]);
}

inline std::uint32_t load_be32(std::span<const std::uint8_t> p, std::size_t off) {
    return (std::uint32_t{p[off]} << 24) | (std::uint32_t{p[off + 1]} << 16) |
           (std::uint32_t{p[off + 2]} << 8) | std::uint32_t{p[off + 3]};
}

inline void store_be16(std::span<std::uint8_t> p, std::size_t off, std::uint16_t v) {
    p[off] = static_cast<std::uint8_t>(v >> 8);
    p[off + 1] = static_cast<std::uint8_t>(v);
}

inline void store_be32(std::span<std::uint8_t> p, std::size_t off, std::uint32_t v) {
    p[off] = static_cast<std::uint8_t>(v >> 24);
    p[off + 1] = static_cast<std::uint8_t>(v >> 16);
    p[off + 2] = static_cast<std::uint8_t>(v >> 8);
    p[off + 3] = static_cast<std::uint8_t>(v);
}

using MacAddress = std::array<std::uint8_t, 6>;
using Ipv4Addr = std::uint32_t;

constexpr Ipv4Addr make_ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return (Ipv4Addr{a} << 24) | (Ipv4Addr{b} << 16) | (Ipv4Addr{c} << 8) | Ipv4Addr{d};
}

inline std::string format_ipv4(Ipv4Addr a) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (a >> 24) & 0xFF, (a >> 16) & 0xFF,
                  (a >> 8) & 0xFF, a & 0xFF);
    return buf;
}

namespace eth {

inline constexpr std::size_t kHeaderLen = 14;
inline constexpr std::size_t kMinFrame = kHeaderLen;
inline constexpr std::size_t kMaxPayload = 1500;
inline constexpr std::uint16_t kTypeIpv4 = 0x0800;

struct Header {
    MacAddress dst{};
    MacAddress src{};
    std::uint16_t ethertype = 0;
};

inline void write_header(std::span<std::uint8_t> frame, const Header& h) {
    for (std::size_t i = 0; i < 6; ++i) {
        frame[i] = h.dst[i];
        frame[6 + i] = h.src[i];
    }
    store_be16(frame, 12, h.ethertype);
}

inline Header read_header(std::span<const std::uint8_t> frame) {
    Header h;
    for (std::size_t i = 0; i < 6; ++i) {
        h.dst[i] = frame[i];
        h.src[i] = frame[6 + i];
    }
    h.ethertype = load_be16(frame, 12);
    return h;
}

}  // namespace eth
}  // namespace ltcp
