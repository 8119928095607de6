// ltcp/buffers.hpp
// Memory manager: fixed-block pool, the single global frame buffer, and the
// copy-to-secondary discipline.
//
// Every arriving frame lands in one GlobalBuffer. A handler either works on it
// in place before the next arrival (or transmission) or copies the region it
// needs into a pool block. Views into the global buffer carry the epoch they
// were taken at; reading a view after the buffer moved on is detected.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "ltcp/error.hpp"

namespace ltcp {

/// Ethernet II maximum frame length without FCS.
inline constexpr std::size_t kMtu = 1514;

/// Default secondary pool geometry.
inline constexpr std::size_t kSecondaryBlockCount = 4;

struct BlockHandle {
    std::uint32_t pool_id = 0;
    std::uint32_t index = 0;
    std::uint32_t len = 0;
    std::uint32_t generation = 0;

    friend bool operator==(const BlockHandle&, const BlockHandle&) = default;
};

class BlockPool {
public:
    BlockPool(std::size_t block_size, std::size_t block_count)
        : block_size_(block_size), block_count_(block_count) {
        if (block_size == 0 || block_count == 0) {
            throw Error(Errc::InvalidArgument, "block pool needs nonzero size and count");
        }
        pool_id_ = next_pool_id();
        storage_.assign(block_size * block_count, 0);
        free_.assign(block_count, true);
        generation_.assign(block_count, 0);
    }

    std::size_t block_size() const noexcept { return block_size_; }
    std::size_t block_count() const noexcept { return block_count_; }
    std::uint32_t id() const noexcept { return pool_id_; }
    std::size_t free_count() const noexcept {
        return static_cast<std::size_t>(std::count(free_.begin(), free_.end(), true));
    }
    std::size_t outstanding() const noexcept { return block_count_ - free_count(); }

    /// Lowest-index free block. Throws Errc::Exhausted when none is free.
    BlockHandle alloc() {
        auto it = std::find(free_.begin(), free_.end(), true);
        if (it == free_.end()) {
            throw Error(Errc::Exhausted, "no free block");
        }
        auto index = static_cast<std::uint32_t>(it - free_.begin());
        free_[index] = false;
        return BlockHandle{pool_id_, index, 0, generation_[index]};
    }

    void free(const BlockHandle& h) {
        check(h);
        free_[h.index] = true;
        ++generation_[h.index];
    }

    bool owns(const BlockHandle& h) const noexcept {
        return h.pool_id == pool_id_ && h.index < block_count_ && !free_[h.index] &&
               generation_[h.index] == h.generation;
    }

    /// Full block capacity.
    std::span<std::uint8_t> block(const BlockHandle& h) {
        check(h);
        return {storage_.data() + std::size_t{h.index} * block_size_, block_size_};
    }

    /// The first h.len bytes.
    std::span<const std::uint8_t> bytes(const BlockHandle& h) const {
        check(h);
        return {storage_.data() + std::size_t{h.index} * block_size_, h.len};
    }

    /// Copies src into the block and records its length in the handle.
    void store(BlockHandle& h, std::span<const std::uint8_t> src) {
        if (src.size() > block_size_) {
            throw Error(Errc::SizeError, "payload larger than block");
        }
        auto dst = block(h);
        if (!src.empty()) {
            std::memmove(dst.data(), src.data(), src.size());
        }
        h.len = static_cast<std::uint32_t>(src.size());
    }

private:
    static std::uint32_t next_pool_id() {
        static std::atomic<std::uint32_t> counter{1};
        return counter.fetch_add(1);
    }

    void check(const BlockHandle& h) const {
        if (!owns(h)) {
            throw Error(Errc::InvalidHandle, "handle is not outstanding in this pool");
        }
    }

    std::size_t block_size_;
    std::size_t block_count_;
    std::uint32_t pool_id_ = 0;
    std::vector<std::uint8_t> storage_;
    std::vector<bool> free_;
    std::vector<std::uint32_t> generation_;
};

inline BlockPool init_block(std::size_t block_size, std::size_t block_count) {
    return BlockPool(block_size, block_count);
}

class GlobalBuffer;

/// A region of the global buffer pinned to the epoch it was taken at.
class EpochView {
public:
    EpochView() = default;
    EpochView(const GlobalBuffer* buf, std::size_t offset, std::size_t len, std::uint64_t epoch)
        : buf_(buf), offset_(offset), len_(len), epoch_(epoch) {}

    std::size_t size() const noexcept { return len_; }
    std::size_t offset() const noexcept { return offset_; }
    std::uint64_t epoch() const noexcept { return epoch_; }
    inline bool valid() const noexcept;

    /// Throws Errc::StaleEpoch (and counts the violation) if the buffer has
    /// been overwritten since the view was taken.
    inline std::span<const std::uint8_t> bytes() const;

private:
    const GlobalBuffer* buf_ = nullptr;
    std::size_t offset_ = 0;
    std::size_t len_ = 0;
    std::uint64_t epoch_ = 0;
};

class GlobalBuffer {
public:
    std::size_t size() const noexcept { return len_; }
    std::uint64_t epoch() const noexcept { return epoch_; }
    std::uint64_t epoch_violations() const noexcept { return violations_; }

    /// Starts a new generation and returns the whole writable region. Used by
    /// the driver on arrival and by every transmit path.
    std::span<std::uint8_t> claim() {
        ++epoch_;
        return {data_.data(), data_.size()};
    }

    /// In-place access for the layer that currently owns this epoch.
    std::span<std::uint8_t> writable() noexcept { return {data_.data(), data_.size()}; }
    std::span<const std::uint8_t> data() const noexcept { return {data_.data(), len_}; }

    void set_size(std::size_t len) {
        if (len > kMtu) {
            throw Error(Errc::SizeError, "frame exceeds MTU");
        }
        len_ = len;
    }

    /// Replaces the contents with a new frame (new epoch).
    void place(std::span<const std::uint8_t> frame) {
        if (frame.size() > kMtu) {
            throw Error(Errc::SizeError, "frame exceeds MTU");
        }
        auto dst = claim();
        if (!frame.empty()) {
            std::memcpy(dst.data(), frame.data(), frame.size());
        }
        len_ = frame.size();
    }

    EpochView view(std::size_t offset, std::size_t len) const {
        if (offset + len > kMtu) {
            throw Error(Errc::SizeError, "view outside buffer");
        }
        return EpochView(this, offset, len, epoch_);
    }
    EpochView view() const { return view(0, len_); }

private:
    friend class EpochView;

    std::array<std::uint8_t, kMtu> data_{};
    std::size_t len_ = 0;
    std::uint64_t epoch_ = 0;
    mutable std::uint64_t violations_ = 0;
};

inline bool EpochView::valid() const noexcept {
    return buf_ != nullptr && buf_->epoch_ == epoch_;
}

inline std::span<const std::uint8_t> EpochView::bytes() const {
    if (buf_ == nullptr) {
        return {};
    }
    if (buf_->epoch_ != epoch_) {
        ++buf_->violations_;
        throw Error(Errc::StaleEpoch, "global buffer view read after its epoch expired");
    }
    return {buf_->data_.data() + offset_, len_};
}

/// Copies a view's bytes into a fresh secondary block.
inline BlockHandle copy_to_secondary(const EpochView& view, BlockPool& pool) {
    if (view.size() > pool.block_size()) {
        throw Error(Errc::SizeError, "region larger than secondary block");
    }
    auto src = view.bytes();
    auto h = pool.alloc();
    pool.store(h, src);
    return h;
}

inline BlockHandle copy_to_secondary(const GlobalBuffer& g, BlockPool& pool) {
    return copy_to_secondary(g.view(), pool);
}

}  // namespace ltcp
