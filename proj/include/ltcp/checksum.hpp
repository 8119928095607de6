// ltcp/checksum.hpp
// Internet checksum: ones'-complement of the ones'-complement sum of
// big-endian 16-bit words. An odd trailing byte is padded with zero.

#pragma once

#include <cstdint>
#include <span>

namespace ltcp {

class ChecksumAccumulator {
public:
    void add(std::span<const std::uint8_t> data) noexcept {
        for (std::uint8_t b : data) {
            if (odd_) {
                sum_ += b;
            } else {
                sum_ += std::uint64_t{b} << 8;
            }
            odd_ = !odd_;
        }
    }

    void add16(std::uint16_t word) noexcept {
        // Word-aligned callers only (pseudo-header fields).
        sum_ += word;
    }

    void add32(std::uint32_t word) noexcept {
        add16(static_cast<std::uint16_t>(word >> 16));
        add16(static_cast<std::uint16_t>(word));
    }

    /// Folded ones'-complement sum, before the final complement.
    std::uint16_t folded() const noexcept {
        std::uint64_t s = sum_;
        while (s >> 16) {
            s = (s & 0xFFFF) + (s >> 16);
        }
        return static_cast<std::uint16_t>(s);
    }

    std::uint16_t checksum() const noexcept { return static_cast<std::uint16_t>(~folded()); }

private:
    std::uint64_t sum_ = 0;
    bool odd_ = false;
};

inline std::uint16_t internet_checksum(std::span<const std::uint8_t> data) noexcept {
    ChecksumAccumulator acc;
    acc.add(data);
    return acc.checksum();
}

/// Checksum-included data verifies when its folded sum is all ones.
inline bool checksum_verifies(std::span<const std::uint8_t> data) noexcept {
    ChecksumAccumulator acc;
    acc.add(data);
    return acc.folded() == 0xFFFF;
}

inline std::uint16_t iph_chk_sum(std::span<const std::uint8_t> data) noexcept {
    return internet_checksum(data);
}

}  // namespace ltcp
