// Test oracles and fixtures. Everything here is written independently of the
// library internals so that library results can be checked against it.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "ltcp.hpp"

namespace oracle {

// Internet checksum: 32-bit accumulator over whole big-endian words, odd tail
// padded with zero, folded once at the end.
inline std::uint16_t checksum(std::span<const std::uint8_t> d) {
    std::uint32_t sum = 0;
    std::size_t i = 0;
    for (; i + 1 < d.size(); i += 2) {
        sum += static_cast<std::uint32_t>(d[i]) * 256u + d[i + 1];
    }
    if (i < d.size()) {
        sum += static_cast<std::uint32_t>(d[i]) * 256u;
    }
    while (sum > 0xFFFF) {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    return static_cast<std::uint16_t>(0xFFFF - sum);
}

inline std::vector<std::uint8_t> random_bytes(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) {
        b = static_cast<std::uint8_t>(rng());
    }
    return v;
}

// Pool model: a sorted set of free indices.
struct CountedPool {
    std::size_t capacity;
    std::set<std::uint32_t> free;
    explicit CountedPool(std::size_t n) : capacity(n) {
        for (std::uint32_t i = 0; i < n; ++i) {
            free.insert(i);
        }
    }
    // Returns -1 when exhausted.
    long alloc() {
        if (free.empty()) {
            return -1;
        }
        const auto i = *free.begin();
        free.erase(free.begin());
        return i;
    }
    void release(std::uint32_t i) { free.insert(i); }
};

// Hand-assembled IPv4 header, checksum computed with the oracle above.
inline std::vector<std::uint8_t> ipv4_header(std::uint32_t src, std::uint32_t dst, std::uint8_t proto,
                                             std::uint16_t payload_len, std::uint8_t ttl, std::uint16_t id) {
    const std::uint16_t total = static_cast<std::uint16_t>(20 + payload_len);
    std::vector<std::uint8_t> h = {
        0x45, 0x00, std::uint8_t(total >> 8), std::uint8_t(total), std::uint8_t(id >> 8), std::uint8_t(id),
        0x40, 0x00, ttl, proto, 0x00, 0x00,
        std::uint8_t(src >> 24), std::uint8_t(src >> 16), std::uint8_t(src >> 8), std::uint8_t(src),
        std::uint8_t(dst >> 24), std::uint8_t(dst >> 16), std::uint8_t(dst >> 8), std::uint8_t(dst),
    };
    const auto c = checksum(h);
    h[10] = std::uint8_t(c >> 8);
    h[11] = std::uint8_t(c);
    return h;
}

// Hand-assembled TCP segment with checksum over the pseudo-header.
inline std::vector<std::uint8_t> tcp_segment(std::uint32_t src, std::uint32_t dst, std::uint16_t sport,
                                             std::uint16_t dport, std::uint32_t seq, std::uint32_t ack,
                                             std::uint8_t flags, std::uint16_t window, int mss_option,
                                             std::span<const std::uint8_t> payload = {}) {
    std::vector<std::uint8_t> s = {
        std::uint8_t(sport >> 8), std::uint8_t(sport), std::uint8_t(dport >> 8), std::uint8_t(dport),
        std::uint8_t(seq >> 24), std::uint8_t(seq >> 16), std::uint8_t(seq >> 8), std::uint8_t(seq),
        std::uint8_t(ack >> 24), std::uint8_t(ack >> 16), std::uint8_t(ack >> 8), std::uint8_t(ack),
        std::uint8_t((mss_option >= 0 ? 6 : 5) << 4), flags, std::uint8_t(window >> 8), std::uint8_t(window),
        0, 0, 0, 0,
    };
    if (mss_option >= 0) {
        s.insert(s.end(), {2, 4, std::uint8_t(mss_option >> 8), std::uint8_t(mss_option)});
    }
    s.insert(s.end(), payload.begin(), payload.end());
    std::vector<std::uint8_t> pseudo = {
        std::uint8_t(src >> 24), std::uint8_t(src >> 16), std::uint8_t(src >> 8), std::uint8_t(src),
        std::uint8_t(dst >> 24), std::uint8_t(dst >> 16), std::uint8_t(dst >> 8), std::uint8_t(dst),
        0, 6, std::uint8_t(s.size() >> 8), std::uint8_t(s.size()),
    };
    pseudo.insert(pseudo.end(), s.begin(), s.end());
    const auto c = checksum(pseudo);
    s[16] = std::uint8_t(c >> 8);
    s[17] = std::uint8_t(c);
    return s;
}

// Ethernet + IPv4 + payload.
inline std::vector<std::uint8_t> frame(const ltcp::MacAddress& dmac, const ltcp::MacAddress& smac,
                                       std::uint32_t src, std::uint32_t dst, std::uint8_t proto,
                                       std::span<const std::uint8_t> payload, std::uint16_t id = 0) {
    std::vector<std::uint8_t> f(dmac.begin(), dmac.end());
    f.insert(f.end(), smac.begin(), smac.end());
    f.push_back(0x08);
    f.push_back(0x00);
    const auto h = ipv4_header(src, dst, proto, static_cast<std::uint16_t>(payload.size()), 64, id);
    f.insert(f.end(), h.begin(), h.end());
    f.insert(f.end(), payload.begin(), payload.end());
    return f;
}

// Replays the link's loss decisions: two draws per frame, 53-bit uniform.
inline std::uint64_t delivered_count(std::uint64_t seed, double loss, std::size_t frames) {
    std::mt19937_64 g(seed);
    std::uint64_t delivered = 0;
    for (std::size_t i = 0; i < frames; ++i) {
        const double u = std::ldexp(static_cast<double>(g() >> 11), -53);
        g();
        delivered += u < loss ? 0 : 1;
    }
    return delivered;
}

}  // namespace oracle

namespace fixture {

inline constexpr ltcp::Ipv4Addr kAddrA = ltcp::make_ipv4(10, 0, 0, 1);
inline constexpr ltcp::Ipv4Addr kAddrB = ltcp::make_ipv4(10, 0, 0, 2);
inline constexpr ltcp::MacAddress kMacA{0x02, 0, 0, 0, 0, 0x01};
inline constexpr ltcp::MacAddress kMacB{0x02, 0, 0, 0, 0, 0x02};

inline ltcp::StackConfig config(bool a, std::uint64_t seed = 1, ltcp::TcpConfig tcp = {}) {
    ltcp::StackConfig c;
    c.ip.local_addr = a ? kAddrA : kAddrB;
    c.ip.neighbors[a ? kAddrB : kAddrA] = a ? kMacB : kMacA;
    c.mac = a ? kMacA : kMacB;
    c.seed = seed;
    c.tcp = tcp;
    return c;
}

// Two stacks on one link, stepped in the same order as the harness.
struct Pair {
    ltcp::Clock clock;
    ltcp::VirtualLink link;
    ltcp::Stack a;
    ltcp::Stack b;

    explicit Pair(ltcp::LinkConfig lc = {}, ltcp::TcpConfig tcp = {})
        : link(lc, clock), a(config(true, 11, tcp), clock), b(config(false, 12, tcp), clock) {
        link.attach(a.nic());
        link.attach(b.nic());
        a.nic().init();
        b.nic().init();
    }

    void tick() {
        link.step();
        a.step();
        b.step();
        clock.advance();
    }

    bool run_until(const std::function<bool()>& done, ltcp::Tick budget = 5000) {
        for (ltcp::Tick t = 0; t < budget; ++t) {
            if (done()) {
                return true;
            }
            tick();
        }
        return done();
    }

    // TCP header fields of the i-th captured frame.
    ltcp::TcpHeader tcp_at(std::size_t i) const {
        const auto& f = link.capture().at(i).frame;
        return ltcp::TcpHeader::decode(std::span<const std::uint8_t>(f).subspan(ltcp::ip::kPayloadOffset));
    }
    std::size_t tcp_payload_len(std::size_t i) const {
        const auto& f = link.capture().at(i).frame;
        const std::size_t off = static_cast<std::size_t>(f[ltcp::ip::kPayloadOffset + 12] >> 4) * 4;
        return f.size() - ltcp::ip::kPayloadOffset - off;
    }
};

}  // namespace fixture
