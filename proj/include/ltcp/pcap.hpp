// ltcp/pcap.hpp
// Classic pcap capture files (Ethernet link type).
//
// Written little-endian: magic 0xA1B2C3D4, version 2.4, thiszone 0, sigfigs 0,
// snaplen 65535, linktype 1. One tick is one millisecond:
// ts_sec = tick / 1000, ts_usec = (tick % 1000) * 1000.
// The reader also accepts big-endian files.

#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltcp/error.hpp"
#include "ltcp/timers.hpp"

namespace ltcp {

namespace pcap {
inline constexpr std::uint32_t kMagic = 0xA1B2C3D4;
inline constexpr std::uint32_t kMagicSwapped = 0xD4C3B2A1;
inline constexpr std::size_t kGlobalHeaderLen = 24;
inline constexpr std::size_t kRecordHeaderLen = 16;
inline constexpr std::uint32_t kSnapLen = 65535;
inline constexpr std::uint32_t kLinkTypeEthernet = 1;
}  // namespace pcap

struct PcapRecord {
    Tick tick = 0;
    std::vector<std::uint8_t> frame;

    friend bool operator==(const PcapRecord&, const PcapRecord&) = default;
};

namespace detail {

inline void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline std::uint32_t get32(std::span<const std::uint8_t> in, std::size_t off, bool big_endian) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const std::uint32_t b = in[off + static_cast<std::size_t>(i)];
        v |= big_endian ? b << (8 * (3 - i)) : b << (8 * i);
    }
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> pcap_encode(std::span<const PcapRecord> records) {
    std::vector<std::uint8_t> out;
    out.reserve(pcap::kGlobalHeaderLen);
    detail::put_le32(out, pcap::kMagic);
    detail::put_le16(out, 2);
    detail::put_le16(out, 4);
    detail::put_le32(out, 0);  // thiszone
    detail::put_le32(out, 0);  // sigfigs
    detail::put_le32(out, pcap::kSnapLen);
    detail::put_le32(out, pcap::kLinkTypeEthernet);
    for (const auto& r : records) {
        const auto len = static_cast<std::uint32_t>(r.frame.size());
        detail::put_le32(out, static_cast<std::uint32_t>(r.tick / 1000));
        detail::put_le32(out, static_cast<std::uint32_t>((r.tick % 1000) * 1000));
        detail::put_le32(out, len);
        detail::put_le32(out, len);
        out.insert(out.end(), r.frame.begin(), r.frame.end());
    }
    return out;
}

inline std::vector<PcapRecord> pcap_decode(std::span<const std::uint8_t> in) {
    if (in.size() < pcap::kGlobalHeaderLen) {
        throw ParseError(in.size(), "truncated pcap global header");
    }
    const std::uint32_t magic = detail::get32(in, 0, false);
    bool big_endian = false;
    if (magic == pcap::kMagicSwapped) {
        big_endian = true;
    } else if (magic != pcap::kMagic) {
        throw ParseError(0, "bad pcap magic");
    }
    std::vector<PcapRecord> records;
    std::size_t off = pcap::kGlobalHeaderLen;
    while (off < in.size()) {
        if (in.size() - off < pcap::kRecordHeaderLen) {
            throw ParseError(off, "truncated pcap record header");
        }
        const std::uint32_t sec = detail::get32(in, off, big_endian);
        const std::uint32_t usec = detail::get32(in, off + 4, big_endian);
        const std::uint32_t incl = detail::get32(in, off + 8, big_endian);
        off += pcap::kRecordHeaderLen;
        if (in.size() - off < incl) {
            throw ParseError(off, "truncated pcap record data");
        }
        PcapRecord r;
        r.tick = Tick{sec} * 1000 + usec / 1000;
        r.frame.assign(in.begin() + static_cast<std::ptrdiff_t>(off),
                       in.begin() + static_cast<std::ptrdiff_t>(off + incl));
        records.push_back(std::move(r));
        off += incl;
    }
    return records;
}

inline void pcap_write(const std::string& path, std::span<const PcapRecord> records) {
    const auto bytes = pcap_encode(records);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw Error(Errc::InvalidArgument, "cannot open " + path + " for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw Error(Errc::InvalidArgument, "write failed for " + path);
    }
}

inline std::vector<PcapRecord> pcap_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error(Errc::InvalidArgument, "cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return pcap_decode(bytes);
}

}  // namespace ltcp
