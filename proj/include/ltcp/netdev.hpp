// ltcp/netdev.hpp
// Register-mapped Ethernet controller model, its driver verbs, and the
// seeded virtual link that joins two controllers.
//
// Register map (16 x 8-bit):
//   0x0 CTRL      scratch/control, read-write
//   0x1 STATUS    read-only; bit0 initialized, bit1 rx pending
//   0x2 TXLEN_LO  0x3 TXLEN_HI   length of the frame in tx memory
//   0x4 RXLEN_LO  0x5 RXLEN_HI   length of the frame in rx memory
//   0x6 IRQ       bit0 set by the device on arrival, cleared by poll
//   0x7..0xF      reserved, read as 0, writes ignored
//
// The receive side holds one frame. A second arrival before the driver polls
// overwrites the first and bumps the overrun counter.

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "ltcp/buffers.hpp"
#include "ltcp/error.hpp"
#include "ltcp/timers.hpp"
#include "ltcp/wire.hpp"

namespace ltcp {

enum class Reg : std::uint8_t {
    Ctrl = 0x0,
    Status = 0x1,
    TxLenLo = 0x2,
    TxLenHi = 0x3,
    RxLenLo = 0x4,
    RxLenHi = 0x5,
    Irq = 0x6,
};

inline constexpr std::size_t kRegisterCount = 16;
inline constexpr std::uint8_t kStatusInitialized = 0x01;
inline constexpr std::uint8_t kStatusRxPending = 0x02;
inline constexpr std::uint8_t kIrqRx = 0x01;

enum class DevStatus { Ready, NotAttached };

/// Observable stages of a transmit, in the order the driver performs them.
enum class SendStep { SetTxLength, CopyToTxMemory, PhysicalTransfer };

class VirtualLink;

class SimulatedNic {
public:
    explicit SimulatedNic(MacAddress mac = {}) : mac_(mac) {}

    SimulatedNic(const SimulatedNic&) = delete;
    SimulatedNic& operator=(const SimulatedNic&) = delete;

    const MacAddress& mac() const noexcept { return mac_; }
    bool attached() const noexcept { return link_ != nullptr; }

    void hard_reset() noexcept {
        regs_.fill(0);
        tx_memory_.fill(0);
        rx_memory_.fill(0);
        rx_len_ = 0;
    }

    std::uint8_t read_register(std::size_t addr) const {
        if (addr >= kRegisterCount) {
            throw Error(Errc::InvalidRegister, "register address out of range");
        }
        return regs_[addr];
    }
    std::uint8_t read_register(Reg r) const { return read_register(static_cast<std::size_t>(r)); }

    void write_register(std::size_t addr, std::uint8_t value) {
        if (addr >= kRegisterCount) {
            throw Error(Errc::InvalidRegister, "register address out of range");
        }
        if (addr == static_cast<std::size_t>(Reg::Status)) {
            throw Error(Errc::ReadOnly, "STATUS is read-only");
        }
        if (addr > static_cast<std::size_t>(Reg::Irq)) {
            return;
        }
        regs_[addr] = value;
    }
    void write_register(Reg r, std::uint8_t value) { write_register(static_cast<std::size_t>(r), value); }

    DevStatus init() {
        if (link_ == nullptr) {
            return DevStatus::NotAttached;
        }
        reg(Reg::Status) |= kStatusInitialized;
        return DevStatus::Ready;
    }

    bool initialized() const noexcept { return (regs_[1] & kStatusInitialized) != 0; }
    bool rx_pending() const noexcept { return (regs_[1] & kStatusRxPending) != 0; }

    inline void send(const GlobalBuffer& g);

    /// Moves a pending frame into the global buffer (new epoch).
    bool poll(GlobalBuffer& g) {
        require_ready();
        if (!rx_pending()) {
            return false;
        }
        g.place({rx_memory_.data(), rx_len_});
        reg(Reg::RxLenLo) = static_cast<std::uint8_t>(rx_len_ & 0xFF);
        reg(Reg::RxLenHi) = static_cast<std::uint8_t>(rx_len_ >> 8);
        reg(Reg::Status) &= static_cast<std::uint8_t>(~kStatusRxPending);
        reg(Reg::Irq) &= static_cast<std::uint8_t>(~kIrqRx);
        ++frames_received_;
        return true;
    }

    /// Device side: the medium hands over one frame.
    void receive(std::span<const std::uint8_t> frame) {
        if (frame.size() > kMtu) {
            return;
        }
        if (rx_pending()) {
            ++overruns_;
        }
        if (!frame.empty()) {
            std::memcpy(rx_memory_.data(), frame.data(), frame.size());
        }
        rx_len_ = frame.size();
        reg(Reg::Status) |= kStatusRxPending;
        reg(Reg::Irq) |= kIrqRx;
    }

    std::span<const std::uint8_t> tx_memory() const noexcept { return {tx_memory_.data(), tx_memory_.size()}; }
    std::uint64_t overruns() const noexcept { return overruns_; }
    std::uint64_t frames_received() const noexcept { return frames_received_; }
    std::uint64_t frames_sent() const noexcept { return frames_sent_; }

    /// Step trace hook for the transmit pipeline.
    std::function<void(SendStep)> on_send_step;

private:
    friend class VirtualLink;

    std::uint8_t& reg(Reg r) noexcept { return regs_[static_cast<std::size_t>(r)]; }

    void require_ready() const {
        if (!initialized()) {
            throw Error(Errc::NotReady, "device not initialized");
        }
    }

    void trace(SendStep s) {
        if (on_send_step) {
            on_send_step(s);
        }
    }

    MacAddress mac_;
    std::array<std::uint8_t, kRegisterCount> regs_{};
    std::array<std::uint8_t, kMtu> tx_memory_{};
    std::array<std::uint8_t, kMtu> rx_memory_{};
    std::size_t rx_len_ = 0;
    VirtualLink* link_ = nullptr;
    int port_ = -1;
    std::uint64_t overruns_ = 0;
    std::uint64_t frames_received_ = 0;
    std::uint64_t frames_sent_ = 0;
};

struct LinkConfig {
    double loss_rate = 0.0;
    double duplicate_rate = 0.0;
    Tick delay = 0;
    std::uint64_t seed = 0;
};

/// One frame as it left a transmitter.
struct WireRecord {
    Tick tick = 0;
    int from_port = 0;
    std::vector<std::uint8_t> frame;
    bool dropped = false;
};

struct LinkCounters {
    std::uint64_t sent = 0;
    std::uint64_t dropped = 0;
    std::uint64_t duplicated = 0;
    std::uint64_t delivered = 0;
};

/// Point-to-point medium with seeded loss, duplication and fixed delay.
///
/// Randomness: std::mt19937_64 seeded with LinkConfig::seed. Every transmit
/// draws exactly two 64-bit outputs x1, x2 and maps each to u = (x >> 11) * 2^-53.
/// The frame is lost when u1 < loss_rate; otherwise it is duplicated when
/// u2 < duplicate_rate. A delivered frame arrives at now + delay, its
/// duplicate one tick later.
class VirtualLink {
public:
    VirtualLink(LinkConfig cfg, const Clock& clock) : cfg_(cfg), clock_(&clock), rng_(cfg.seed) {
        if (!(cfg.loss_rate >= 0.0 && cfg.loss_rate <= 1.0) ||
            !(cfg.duplicate_rate >= 0.0 && cfg.duplicate_rate <= 1.0)) {
            throw Error(Errc::InvalidArgument, "link rates must lie in [0,1]");
        }
    }

    VirtualLink(const VirtualLink&) = delete;
    VirtualLink& operator=(const VirtualLink&) = delete;

    ~VirtualLink() {
        for (auto* nic : ports_) {
            if (nic != nullptr) {
                nic->link_ = nullptr;
            }
        }
    }

    int attach(SimulatedNic& nic) {
        for (int p = 0; p < 2; ++p) {
            if (ports_[p] == nullptr) {
                ports_[p] = &nic;
                nic.link_ = this;
                nic.port_ = p;
                return p;
            }
        }
        throw Error(Errc::NoSlot, "link already has two ports attached");
    }

    void detach(SimulatedNic& nic) {
        if (nic.link_ == this) {
            ports_[nic.port_] = nullptr;
            nic.link_ = nullptr;
            nic.port_ = -1;
        }
    }

    static double unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

    void transmit(int from_port, std::span<const std::uint8_t> frame) {
        const std::uint64_t ordinal = counters_.sent++;
        const double u_loss = unit(rng_());
        const double u_dup = unit(rng_());
        bool dropped = u_loss < cfg_.loss_rate || drop_ordinals.count(ordinal) != 0 ||
                       (drop_filter && drop_filter(ordinal, from_port, frame));
        if (capture_enabled) {
            capture_.push_back(WireRecord{clock_->now(), from_port, {frame.begin(), frame.end()}, dropped});
        }
        if (dropped) {
            ++counters_.dropped;
            return;
        }
        std::vector<std::uint8_t> copy(frame.begin(), frame.end());
        if (tamper) {
            tamper(ordinal, from_port, copy);
        }
        const Tick at = clock_->now() + cfg_.delay;
        if (u_dup < cfg_.duplicate_rate) {
            ++counters_.duplicated;
            in_flight_.emplace(Key{at + 1, next_key_++}, Pending{from_port, copy});
        }
        in_flight_.emplace(Key{at, next_key_++}, Pending{from_port, std::move(copy)});
    }

    /// Hands every frame due at or before now to the opposite port.
    void step() {
        const Tick now = clock_->now();
        while (!in_flight_.empty() && in_flight_.begin()->first.first <= now) {
            auto node = in_flight_.extract(in_flight_.begin());
            auto& p = node.mapped();
            ++counters_.delivered;
            if (SimulatedNic* dst = ports_[1 - p.from_port]; dst != nullptr) {
                dst->receive(p.frame);
            }
        }
    }

    const LinkCounters& counters() const noexcept { return counters_; }
    std::size_t in_flight() const noexcept { return in_flight_.size(); }
    const std::vector<WireRecord>& capture() const noexcept { return capture_; }
    const LinkConfig& config() const noexcept { return cfg_; }

    bool capture_enabled = true;

    /// Transmit ordinals (0-based, across both ports) that are always lost.
    std::set<std::uint64_t> drop_ordinals;
    /// Extra loss predicate: (ordinal, from_port, frame) -> drop.
    std::function<bool(std::uint64_t, int, std::span<const std::uint8_t>)> drop_filter;
    /// In-transit mutation of delivered copies: (ordinal, from_port, frame).
    std::function<void(std::uint64_t, int, std::vector<std::uint8_t>&)> tamper;

private:
    using Key = std::pair<Tick, std::uint64_t>;
    struct Pending {
        int from_port;
        std::vector<std::uint8_t> frame;
    };

    LinkConfig cfg_;
    const Clock* clock_;
    std::mt19937_64 rng_;
    std::array<SimulatedNic*, 2> ports_{nullptr, nullptr};
    std::map<Key, Pending> in_flight_;
    std::uint64_t next_key_ = 0;
    LinkCounters counters_;
    std::vector<WireRecord> capture_;
};

inline void SimulatedNic::send(const GlobalBuffer& g) {
    require_ready();
    const std::size_t len = g.size();
    if (len < eth::kMinFrame || len > kMtu) {
        throw Error(Errc::FrameSize, "frame length outside 14..1514");
    }
    reg(Reg::TxLenLo) = static_cast<std::uint8_t>(len & 0xFF);
    reg(Reg::TxLenHi) = static_cast<std::uint8_t>(len >> 8);
    trace(SendStep::SetTxLength);
    std::memcpy(tx_memory_.data(), g.data().data(), len);
    trace(SendStep::CopyToTxMemory);
    ++frames_sent_;
    if (link_ != nullptr) {
        link_->transmit(port_, {tx_memory_.data(), len});
    }
    trace(SendStep::PhysicalTransfer);
}

// Free-function driver verbs.
inline void hard_reset(SimulatedNic& nic) { nic.hard_reset(); }
inline DevStatus dev_init(SimulatedNic& nic) { return nic.init(); }
inline void dev_send(SimulatedNic& nic, const GlobalBuffer& g) { nic.send(g); }
inline bool dev_poll(SimulatedNic& nic, GlobalBuffer& g) { return nic.poll(g); }
inline void link_step(VirtualLink& link) { link.step(); }

}  // namespace ltcp
