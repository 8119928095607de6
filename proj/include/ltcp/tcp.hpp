// ltcp/tcp.hpp
// TCP layer: connection table, state machine, segment emission, application
// notification, character send and retransmission.
//
// Flow control is stop-and-wait: each connection has at most one segment that
// consumes sequence space (data, SYN or FIN) unacknowledged at a time. The
// in-flight segment is kept, byte for byte, in a block of the secondary pool so
// a retransmission is identical to the original.
//
// Received data is not acknowledged on arrival. The handler leaves it in the
// global buffer and raises DataArrived; the ACK is scheduled only when the
// application consumes the data (consume()). If the buffer is overwritten
// before that, the data is discarded unacknowledged and the peer resends it.
//
// Pure ACKs are coalesced: handlers set ack_pending and flush_acks() sends one
// ACK per connection at the end of a scheduling round, unless a data segment
// already carried it.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>

#include "ltcp/buffers.hpp"
#include "ltcp/checksum.hpp"
#include "ltcp/error.hpp"
#include "ltcp/ipv4.hpp"
#include "ltcp/timers.hpp"
#include "ltcp/wire.hpp"

namespace ltcp {

namespace tcp {

inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;

inline constexpr std::size_t kHeaderLen = 20;
inline constexpr std::size_t kMssOptionLen = 4;
inline constexpr std::uint16_t kDefaultMss = 1460;
inline constexpr std::uint16_t kDefaultPeerMss = 536;
inline constexpr std::size_t kMaxConnections = 4;
inline constexpr std::uint16_t kFirstEphemeralPort = 49152;
inline constexpr std::uint32_t kIssIncrement = 64000;

inline bool seq_lt(std::uint32_t a, std::uint32_t b) { return static_cast<std::int32_t>(a - b) < 0; }
inline bool seq_le(std::uint32_t a, std::uint32_t b) { return static_cast<std::int32_t>(a - b) <= 0; }
inline bool seq_gt(std::uint32_t a, std::uint32_t b) { return seq_lt(b, a); }

}  // namespace tcp

enum class TcpState : std::uint8_t {
    Closed,
    Listen,
    SynSent,
    SynRcvd,
    Established,
    FinWait1,
    FinWait2,
    Closing,
    TimeWait,
    CloseWait,
    LastAck,
};

constexpr std::string_view to_string(TcpState s) {
    switch (s) {
        case TcpState::Closed: return "Closed";
        case TcpState::Listen: return "Listen";
        case TcpState::SynSent: return "SynSent";
        case TcpState::SynRcvd: return "SynRcvd";
        case TcpState::Established: return "Established";
        case TcpState::FinWait1: return "FinWait1";
        case TcpState::FinWait2: return "FinWait2";
        case TcpState::Closing: return "Closing";
        case TcpState::TimeWait: return "TimeWait";
        case TcpState::CloseWait: return "CloseWait";
        case TcpState::LastAck: return "LastAck";
    }
    return "?";
}

struct TcpHeader {
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint32_t seq = 0;
    std::uint32_t ack = 0;
    std::uint8_t data_offset = 5;  // in 32-bit words
    std::uint8_t flags = 0;
    std::uint16_t window = 0;
    std::uint16_t checksum = 0;
    std::uint16_t urgent = 0;
    std::optional<std::uint16_t> mss;  // MSS option, emitted on SYN only

    std::size_t length() const noexcept { return tcp::kHeaderLen + (mss ? tcp::kMssOptionLen : 0); }

    /// Writes header (+ MSS option) with the checksum field as stored.
    void encode(std::span<std::uint8_t> out) const {
        store_be16(out, 0, src_port);
        store_be16(out, 2, dst_port);
        store_be32(out, 4, seq);
        store_be32(out, 8, ack);
        out[12] = static_cast<std::uint8_t>((length() / 4) << 4);
        out[13] = flags;
        store_be16(out, 14, window);
        store_be16(out, 16, checksum);
        store_be16(out, 18, urgent);
        if (mss) {
            out[20] = 2;
            out[21] = 4;
            store_be16(out, 22, *mss);
        }
    }

    /// Parses the fixed header and the MSS option. Caller guarantees at least
    /// data_offset*4 bytes.
    static TcpHeader decode(std::span<const std::uint8_t> seg) {
        TcpHeader h;
        h.src_port = load_be16(seg, 0);
        h.dst_port = load_be16(seg, 2);
        h.seq = load_be32(seg, 4);
        h.ack = load_be32(seg, 8);
        h.data_offset = seg[12] >> 4;
        h.flags = seg[13] & 0x3F;
        h.window = load_be16(seg, 14);
        h.checksum = load_be16(seg, 16);
        h.urgent = load_be16(seg, 18);
        std::size_t end = std::size_t{h.data_offset} * 4;
        std::size_t i = tcp::kHeaderLen;
        while (i < end) {
            const std::uint8_t kind = seg[i];
            if (kind == 0) {
                break;
            }
            if (kind == 1) {
                ++i;
                continue;
            }
            if (i + 1 >= end) {
                break;
            }
            const std::uint8_t len = seg[i + 1];
            if (len < 2 || i + len > end) {
                break;
            }
            if (kind == 2 && len == 4) {
                h.mss = load_be16(seg, i + 2);
            }
            i += len;
        }
        return h;
    }
};

/// Checksum over the pseudo-header (src, dst, zero, proto 6, length) and the
/// segment with its checksum field as stored.
inline std::uint16_t tcp_checksum_sum(Ipv4Addr src, Ipv4Addr dst, std::span<const std::uint8_t> segment) {
    ChecksumAccumulator acc;
    acc.add32(src);
    acc.add32(dst);
    acc.add16(ip::kProtoTcp);
    acc.add16(static_cast<std::uint16_t>(segment.size()));
    acc.add(segment);
    return acc.folded();
}

inline void tcp_seal_checksum(std::span<std::uint8_t> segment, Ipv4Addr src, Ipv4Addr dst) {
    store_be16(segment, 16, 0);
    store_be16(segment, 16, static_cast<std::uint16_t>(~tcp_checksum_sum(src, dst, segment)));
}

inline bool tcp_checksum_verifies(std::span<const std::uint8_t> segment, Ipv4Addr src, Ipv4Addr dst) {
    return tcp_checksum_sum(src, dst, segment) == 0xFFFF;
}

enum class TcpEvent : std::uint8_t {
    Connected = 0x01,
    DataArrived = 0x02,
    AckedSent = 0x04,
    RemoteClosed = 0x08,
    Aborted = 0x10,
    TimedOut = 0x20,
};

constexpr std::string_view to_string(TcpEvent e) {
    switch (e) {
        case TcpEvent::Connected: return "Connected";
        case TcpEvent::DataArrived: return "DataArrived";
        case TcpEvent::AckedSent: return "AckedSent";
        case TcpEvent::RemoteClosed: return "RemoteClosed";
        case TcpEvent::Aborted: return "Aborted";
        case TcpEvent::TimedOut: return "TimedOut";
    }
    return "?";
}

/// Single-slot event mailbox. Distinct event kinds coexist as bits; a second
/// event of a kind that is still pending counts as an overrun.
struct Mailbox {
    std::uint8_t pending = 0;
    std::size_t data_len = 0;
    EpochView data;
    std::uint32_t data_seq = 0;
    bool data_fin = false;

    bool has(TcpEvent e) const noexcept { return (pending & static_cast<std::uint8_t>(e)) != 0; }
    void clear(TcpEvent e) noexcept { pending &= static_cast<std::uint8_t>(~static_cast<std::uint8_t>(e)); }
    bool empty() const noexcept { return pending == 0; }
};

struct Tcb {
    TcpState state = TcpState::Closed;
    bool owned = false;
    std::uint16_t listen_port = 0;  // nonzero when opened passively
    std::uint16_t local_port = 0;
    std::uint16_t remote_port = 0;
    Ipv4Addr remote_addr = 0;
    std::uint32_t iss = 0;
    std::uint32_t irs = 0;
    std::uint32_t snd_una = 0;
    std::uint32_t snd_nxt = 0;
    std::uint32_t rcv_nxt = 0;
    std::uint16_t mss = tcp::kDefaultMss;
    Timer rtx_timer;
    Timer time_wait_timer;
    unsigned retries = 0;
    std::size_t unacked_len = 0;
    std::uint8_t unacked_ctl = 0;  // SYN/FIN bits of the in-flight segment
    std::optional<BlockHandle> rtx_block;
    bool ack_pending = false;
    std::optional<Tick> rtx_sent_at;
    std::array<std::uint8_t, tcp::kDefaultMss> line{};
    std::size_t line_len = 0;
    Mailbox mailbox;

    bool synchronized() const noexcept {
        return state != TcpState::Closed && state != TcpState::Listen && state != TcpState::SynSent &&
               state != TcpState::SynRcvd;
    }
    bool can_send_data() const noexcept {
        return state == TcpState::Established || state == TcpState::CloseWait;
    }
    /// No sequence-consuming segment is awaiting acknowledgement.
    bool send_idle() const noexcept { return snd_una == snd_nxt; }
};

struct TcpConfig {
    std::uint16_t mss = tcp::kDefaultMss;
    Tick rtx_base = 10;
    unsigned max_retries = 4;
    unsigned backoff_cap = 8;  // multiple of rtx_base
    Tick time_wait = 2 * 60;
};

enum class TcpDrop : std::uint8_t {
    Truncated,
    BadOffset,
    BadChecksum,
    NoConnection,
    Unacceptable,
    NoAck,
    BadAck,
    UnexpectedSyn,
    NoBuffer,
    Ignored,
    Count_,
};

constexpr std::string_view to_string(TcpDrop d) {
    switch (d) {
        case TcpDrop::Truncated: return "Truncated";
        case TcpDrop::BadOffset: return "BadOffset";
        case TcpDrop::BadChecksum: return "BadChecksum";
        case TcpDrop::NoConnection: return "NoConnection";
        case TcpDrop::Unacceptable: return "Unacceptable";
        case TcpDrop::NoAck: return "NoAck";
        case TcpDrop::BadAck: return "BadAck";
        case TcpDrop::UnexpectedSyn: return "UnexpectedSyn";
        case TcpDrop::NoBuffer: return "NoBuffer";
        case TcpDrop::Ignored: return "Ignored";
        case TcpDrop::Count_: break;
    }
    return "?";
}

struct TcpStats {
    std::uint64_t segments_in = 0;
    std::uint64_t segments_out = 0;
    std::uint64_t retransmissions = 0;
    std::uint64_t resets_sent = 0;
    std::uint64_t mailbox_overruns = 0;
    std::uint64_t stale_discards = 0;
    std::uint64_t stop_and_wait_checks = 0;
    std::uint64_t stop_and_wait_violations = 0;
    std::array<std::uint64_t, static_cast<std::size_t>(TcpDrop::Count_)> drops{};

    std::uint64_t drop_count(TcpDrop d) const { return drops[static_cast<std::size_t>(d)]; }
};

/// What the layer needs from the rest of the stack.
struct TcpIo {
    /// Sends the segment placed at ip::kPayloadOffset in the global buffer.
    std::function<void(Ipv4Addr dst, std::size_t segment_len)> output;
    /// Whether a destination has a known link-layer neighbor.
    std::function<bool(Ipv4Addr)> reachable;
};

class TcpLayer {
public:
    using Index = std::size_t;

    TcpLayer(GlobalBuffer& g, BlockPool& pool, const Clock& clock, Ipv4Addr local_addr, std::uint64_t seed,
             TcpIo io, TcpConfig cfg = {})
        : g_(g), pool_(pool), clock_(clock), local_(local_addr), io_(std::move(io)), cfg_(cfg) {
        if (cfg_.mss == 0 || cfg_.mss > tcp::kDefaultMss || cfg_.rtx_base == 0 || cfg_.time_wait == 0) {
            throw Error(Errc::InvalidConfig, "bad TCP configuration");
        }
        std::mt19937_64 gen(seed);
        next_iss_ = static_cast<std::uint32_t>(gen());
    }

    const TcpConfig& config() const noexcept { return cfg_; }
    const TcpStats& stats() const noexcept { return stats_; }
    Tcb& tcb(Index i) { return table_.at(i); }
    const Tcb& tcb(Index i) const { return table_.at(i); }
    static constexpr std::size_t capacity() noexcept { return tcp::kMaxConnections; }

    bool slot_free(Index i) const { return !table_.at(i).owned && table_.at(i).state == TcpState::Closed; }
    std::size_t free_slots() const {
        std::size_t n = 0;
        for (Index i = 0; i < table_.size(); ++i) {
            n += slot_free(i) ? 1 : 0;
        }
        return n;
    }
    std::size_t active_count() const { return capacity() - free_slots(); }

    /// Observer for every event raised (index, event).
    std::function<void(Index, TcpEvent)> on_event;

    // ---- connection table -------------------------------------------------

    Index allocate() {
        for (Index i = 0; i < table_.size(); ++i) {
            if (slot_free(i)) {
                table_[i] = Tcb{};
                table_[i].owned = true;
                table_[i].mss = cfg_.mss;
                return i;
            }
        }
        throw Error(Errc::NoSlot, "connection table full");
    }

    /// Gives up ownership; the slot becomes free once the connection is Closed.
    void release(Index i) { tcb(i).owned = false; }

    void listen(Index i, std::uint16_t port) {
        Tcb& t = tcb(i);
        if (t.state != TcpState::Closed) {
            throw Error(Errc::Contract, "listen on a connection that is not closed");
        }
        if (port == 0) {
            throw Error(Errc::InvalidArgument, "port 0");
        }
        for (const Tcb& o : table_) {
            if (&o != &t && o.state == TcpState::Listen && o.local_port == port) {
                throw Error(Errc::AddrInUse, "port already has a listener");
            }
        }
        t.listen_port = port;
        t.local_port = port;
        t.state = TcpState::Listen;
    }

    void connect(Index i, Ipv4Addr remote_addr, std::uint16_t remote_port) {
        Tcb& t = tcb(i);
        if (t.state != TcpState::Closed) {
            throw Error(Errc::Contract, "connect on a connection that is not closed");
        }
        if (io_.reachable && !io_.reachable(remote_addr)) {
            throw Error(Errc::NoRoute, "no neighbor entry for destination");
        }
        t.local_port = ephemeral_port();
        t.remote_port = remote_port;
        t.remote_addr = remote_addr;
        t.listen_port = 0;
        t.iss = take_iss();
        t.snd_una = t.snd_nxt = t.iss;
        t.rcv_nxt = 0;
        t.state = TcpState::SynSent;
        try {
            tx(i, tcp::kSyn, {});
        } catch (...) {
            t.state = TcpState::Closed;
            throw;
        }
    }

    /// Allocates a slot and listens on it.
    Index open_listen(std::uint16_t port) {
        Index i = allocate();
        try {
            listen(i, port);
        } catch (...) {
            release(i);
            throw;
        }
        return i;
    }

    Index open_connect(Ipv4Addr remote_addr, std::uint16_t remote_port) {
        Index i = allocate();
        try {
            connect(i, remote_addr, remote_port);
        } catch (...) {
            release(i);
            throw;
        }
        return i;
    }

    // ---- transmit ---------------------------------------------------------

    /// Emits one segment at snd_nxt. Data, SYN and FIN segments are retained
    /// for retransmission; at most one may be unacknowledged.
    void tx(Index i, std::uint8_t flags, std::span<const std::uint8_t> payload) {
        Tcb& t = tcb(i);
        const bool consumes = !payload.empty() || (flags & (tcp::kSyn | tcp::kFin)) != 0;
        if (!payload.empty() && !t.can_send_data()) {
            throw Error(Errc::NotConnected, "data send outside Established");
        }
        if (payload.size() > t.mss) {
            throw Error(Errc::SizeError, "payload exceeds MSS");
        }
        if (consumes) {
            ++stats_.stop_and_wait_checks;
            if (!t.send_idle()) {
                throw Error(Errc::WouldBlock, "a segment is already awaiting acknowledgement");
            }
        }
        if (t.state != TcpState::SynSent || (flags & tcp::kSyn) == 0 || (flags & tcp::kAck) != 0) {
            flags |= tcp::kAck;
        }
        TcpHeader h = header_for(t, t.snd_nxt, flags);
        if ((flags & tcp::kSyn) != 0) {
            h.mss = cfg_.mss;
        }
        const std::size_t seg_len = h.length() + payload.size();

        if (!consumes) {
            auto out = g_.claim().subspan(ip::kPayloadOffset, seg_len);
            h.encode(out);
            tcp_seal_checksum(out, local_, t.remote_addr);
            emit(t.remote_addr, seg_len);
            t.ack_pending = false;
            return;
        }

        // Build into the retransmit block first: the payload may be a view of
        // the global buffer, which is about to be overwritten.
        BlockHandle blk;
        try {
            blk = pool_.alloc();
        } catch (const Error&) {
            throw Error(Errc::Exhausted, "no secondary block for the retransmit copy");
        }
        auto seg = pool_.block(blk).first(seg_len);
        if (!payload.empty()) {
            std::memmove(seg.data() + h.length(), payload.data(), payload.size());
        }
        h.encode(seg);
        tcp_seal_checksum(seg, local_, t.remote_addr);
        blk.len = static_cast<std::uint32_t>(seg_len);
        t.rtx_block = blk;

        t.snd_nxt += static_cast<std::uint32_t>(payload.size());
        t.snd_nxt += (flags & tcp::kSyn) ? 1 : 0;
        t.snd_nxt += (flags & tcp::kFin) ? 1 : 0;
        t.unacked_len = payload.size();
        t.unacked_ctl = flags & (tcp::kSyn | tcp::kFin);
        const std::uint32_t expect =
            static_cast<std::uint32_t>(t.unacked_len) + ((t.unacked_ctl & tcp::kSyn) ? 1 : 0) +
            ((t.unacked_ctl & tcp::kFin) ? 1 : 0);
        if (t.snd_nxt - t.snd_una != expect) {
            ++stats_.stop_and_wait_violations;
        }
        t.retries = 0;
        t.rtx_timer.set(clock_, cfg_.rtx_base);
        t.ack_pending = false;
        send_block(t);
    }

    /// Appends one byte to the line buffer; a full buffer is sent as one segment.
    void putch(Index i, std::uint8_t byte) {
        Tcb& t = tcb(i);
        if (!t.can_send_data()) {
            throw Error(Errc::NotConnected, "putch outside Established");
        }
        if (t.line_len >= t.mss) {
            flush(i);  // throws WouldBlock while a segment is unacknowledged
        }
        t.line[t.line_len++] = byte;
        if (t.line_len == t.mss && t.send_idle()) {
            flush(i);
        }
    }

    /// Sends buffered putch bytes as one segment.
    void flush(Index i) {
        Tcb& t = tcb(i);
        if (t.line_len == 0) {
            return;
        }
        tx(i, tcp::kPsh, {t.line.data(), t.line_len});
        t.line_len = 0;
    }

    /// Starts a graceful close. Requires the send side to be idle when a FIN
    /// has to be sent.
    void close(Index i) {
        Tcb& t = tcb(i);
        switch (t.state) {
            case TcpState::Closed:
            case TcpState::Listen:
            case TcpState::SynSent:
                enter_closed(t);
                break;
            case TcpState::SynRcvd:
                send_reset(t.remote_addr, t.local_port, t.remote_port, t.snd_nxt, 0, tcp::kRst);
                enter_closed(t);
                break;
            case TcpState::Established:
                tx(i, tcp::kFin, {});
                t.state = TcpState::FinWait1;
                break;
            case TcpState::CloseWait:
                tx(i, tcp::kFin, {});
                t.state = TcpState::LastAck;
                break;
            default:
                break;
        }
    }

    void abort(Index i) {
        Tcb& t = tcb(i);
        if (t.synchronized() || t.state == TcpState::SynRcvd) {
            send_reset(t.remote_addr, t.local_port, t.remote_port, t.snd_nxt, 0, tcp::kRst);
        }
        enter_closed(t);
    }

    /// Takes pending received data: schedules its ACK and returns the view.
    /// Data whose view expired is dropped unacknowledged.
    std::optional<EpochView> consume(Index i) {
        Tcb& t = tcb(i);
        Mailbox& m = t.mailbox;
        if (!m.has(TcpEvent::DataArrived)) {
            return std::nullopt;
        }
        m.clear(TcpEvent::DataArrived);
        if (!m.data.valid() || m.data_seq != t.rcv_nxt) {
            ++stats_.stale_discards;
            return std::nullopt;
        }
        t.rcv_nxt += static_cast<std::uint32_t>(m.data_len);
        t.ack_pending = true;
        EpochView v = m.data;
        if (m.data_fin) {
            m.data_fin = false;
            process_fin(i);
        }
        return v;
    }

    // ---- receive ----------------------------------------------------------

    /// Processes one segment located in the global buffer. Never throws.
    void handle(Ipv4Addr src, const EpochView& segment_view) noexcept {
        try {
            handle_impl(src, segment_view);
        } catch (const Error&) {
            drop(TcpDrop::Ignored);
        }
    }

    /// Retransmission and TIME-WAIT expiry for every connection.
    void timer() {
        for (Index i = 0; i < table_.size(); ++i) {
            Tcb& t = table_[i];
            if (t.state == TcpState::Closed) {
                continue;
            }
            if (t.state == TcpState::TimeWait) {
                if (t.time_wait_timer.armed() && t.time_wait_timer.expired(clock_)) {
                    enter_closed(t);
                }
                continue;
            }
            if (!t.rtx_timer.armed() || !t.rtx_timer.expired(clock_)) {
                continue;
            }
            if (t.retries >= cfg_.max_retries) {
                if (t.state == TcpState::SynRcvd && t.listen_port != 0) {
                    back_to_listen(t);  // half-open passive connection: nobody to tell
                    continue;
                }
                enter_closed(t);
                notify(i, TcpEvent::TimedOut);
                continue;
            }
            ++t.retries;
            const Tick cap = cfg_.rtx_base * cfg_.backoff_cap;
            const Tick interval = std::min<Tick>(cfg_.rtx_base << std::min(t.retries, 30u), cap);
            t.rtx_timer.set_interval(interval);
            t.rtx_timer.restart(clock_);
            ++stats_.retransmissions;
            t.rtx_sent_at = clock_.now();
            send_block(t);
        }
    }

    /// Sends one pure ACK for every connection that still owes one.
    void flush_acks() {
        for (Index i = 0; i < table_.size(); ++i) {
            Tcb& t = table_[i];
            // The peer's NIC holds one frame: an ACK owed in the round of a
            // retransmission waits one tick instead of overwriting it.
            if (t.ack_pending && t.rtx_sent_at == clock_.now()) {
                continue;
            }
            if (t.ack_pending && (t.synchronized() || t.state == TcpState::SynRcvd)) {
                tx(i, 0, {});
            }
            t.ack_pending = false;
        }
    }

private:
    void handle_impl(Ipv4Addr src, const EpochView& view) {
        ++stats_.segments_in;
        auto seg = view.bytes();
        if (seg.size() < tcp::kHeaderLen) {
            return drop(TcpDrop::Truncated);
        }
        const std::size_t off = std::size_t{static_cast<std::uint8_t>(seg[12] >> 4)} * 4;
        if (off < tcp::kHeaderLen || off > seg.size()) {
            return drop(TcpDrop::BadOffset);
        }
        if (!tcp_checksum_verifies(seg, src, local_)) {
            return drop(TcpDrop::BadChecksum);
        }
        const TcpHeader h = TcpHeader::decode(seg);
        Segment in{h, src, seg.size() - off, view.offset() + off};

        std::optional<Index> match;
        for (Index i = 0; i < table_.size(); ++i) {
            const Tcb& t = table_[i];
            if (t.state != TcpState::Closed && t.state != TcpState::Listen && t.local_port == h.dst_port &&
                t.remote_port == h.src_port && t.remote_addr == src) {
                match = i;
                break;
            }
        }
        if (!match) {
            for (Index i = 0; i < table_.size(); ++i) {
                if (table_[i].state == TcpState::Listen && table_[i].local_port == h.dst_port) {
                    match = i;
                    break;
                }
            }
        }
        if (!match) {
            drop(TcpDrop::NoConnection);
            reset_for(in);
            return;
        }

        switch (tcb(*match).state) {
            case TcpState::Listen: return on_listen(*match, in);
            case TcpState::SynSent: return on_syn_sent(*match, in);
            default: return on_synchronized(*match, in);
        }
    }

    struct Segment {
        TcpHeader h;
        Ipv4Addr src;
        std::size_t data_len;
        std::size_t data_offset;  // absolute offset in the global buffer

        bool has(std::uint8_t f) const noexcept { return (h.flags & f) != 0; }
        std::uint32_t seq_len() const noexcept {
            return static_cast<std::uint32_t>(data_len) + (has(tcp::kSyn) ? 1 : 0) + (has(tcp::kFin) ? 1 : 0);
        }
    };

    void on_listen(Index i, const Segment& in) {
        Tcb& t = tcb(i);
        if (in.has(tcp::kRst)) {
            return drop(TcpDrop::Ignored);
        }
        if (in.has(tcp::kAck)) {
            drop(TcpDrop::BadAck);
            return send_reset(in.src, in.h.dst_port, in.h.src_port, in.h.ack, 0, tcp::kRst);
        }
        if (!in.has(tcp::kSyn)) {
            return drop(TcpDrop::Ignored);
        }
        t.remote_addr = in.src;
        t.remote_port = in.h.src_port;
        t.irs = in.h.seq;
        t.rcv_nxt = in.h.seq + 1;
        t.mss = std::min<std::uint16_t>(cfg_.mss, in.h.mss.value_or(tcp::kDefaultPeerMss));
        t.iss = take_iss();
        t.snd_una = t.snd_nxt = t.iss;
        t.state = TcpState::SynRcvd;
        try {
            tx(i, tcp::kSyn | tcp::kAck, {});
        } catch (const Error&) {
            back_to_listen(t);
            drop(TcpDrop::NoBuffer);
        }
    }

    void on_syn_sent(Index i, const Segment& in) {
        Tcb& t = tcb(i);
        if (in.has(tcp::kAck) && in.h.ack != t.snd_nxt) {
            drop(TcpDrop::BadAck);
            if (!in.has(tcp::kRst)) {
                send_reset(in.src, in.h.dst_port, in.h.src_port, in.h.ack, 0, tcp::kRst);
            }
            return;
        }
        if (in.has(tcp::kRst)) {
            if (in.has(tcp::kAck)) {
                enter_closed(t);
                notify(i, TcpEvent::Aborted);
            } else {
                drop(TcpDrop::Ignored);
            }
            return;
        }
        if (!in.has(tcp::kSyn)) {
            return drop(TcpDrop::Ignored);
        }
        t.irs = in.h.seq;
        t.rcv_nxt = in.h.seq + 1;
        t.mss = std::min<std::uint16_t>(cfg_.mss, in.h.mss.value_or(tcp::kDefaultPeerMss));
        if (in.has(tcp::kAck)) {
            t.snd_una = in.h.ack;
            clear_in_flight(t);
            t.state = TcpState::Established;
            t.ack_pending = true;
            notify(i, TcpEvent::Connected);
            return;
        }
        // Simultaneous open: answer with SYN|ACK at the original ISS.
        clear_in_flight(t);
        t.snd_nxt = t.iss;
        t.state = TcpState::SynRcvd;
        try {
            tx(i, tcp::kSyn | tcp::kAck, {});
        } catch (const Error&) {
            drop(TcpDrop::NoBuffer);
        }
    }

    void on_synchronized(Index i, const Segment& in) {
        Tcb& t = tcb(i);
        if (in.h.seq != t.rcv_nxt) {
            // Old duplicate or out-of-order: re-acknowledge what we have.
            if (!in.has(tcp::kRst) && t.state != TcpState::SynRcvd) {
                t.ack_pending = true;
            }
            return drop(TcpDrop::Unacceptable);
        }
        if (in.has(tcp::kRst)) {
            if (t.state == TcpState::SynRcvd && t.listen_port != 0) {
                back_to_listen(t);
                return;
            }
            enter_closed(t);
            notify(i, TcpEvent::Aborted);
            return;
        }
        if (in.has(tcp::kSyn)) {
            return drop(TcpDrop::UnexpectedSyn);
        }
        if (!in.has(tcp::kAck)) {
            return drop(TcpDrop::NoAck);
        }
        if (t.state == TcpState::SynRcvd) {
            if (in.h.ack != t.snd_nxt) {
                drop(TcpDrop::BadAck);
                return send_reset(in.src, in.h.dst_port, in.h.src_port, in.h.ack, 0, tcp::kRst);
            }
            t.snd_una = in.h.ack;
            clear_in_flight(t);
            t.state = TcpState::Established;
            notify(i, TcpEvent::Connected);
        } else if (!process_ack(i, in.h.ack)) {
            return;
        }

        if (in.data_len > 0) {
            if (t.state == TcpState::Established || t.state == TcpState::FinWait1 ||
                t.state == TcpState::FinWait2) {
                Mailbox& m = t.mailbox;
                const bool refresh = m.has(TcpEvent::DataArrived) && m.data_seq == in.h.seq;
                m.data = g_.view(in.data_offset, in.data_len);
                m.data_len = in.data_len;
                m.data_seq = in.h.seq;
                m.data_fin = in.has(tcp::kFin);
                if (refresh) {
                    return;
                }
                notify(i, TcpEvent::DataArrived);
            } else {
                drop(TcpDrop::Ignored);
            }
            return;
        }
        if (in.has(tcp::kFin)) {
            process_fin(i);
        }
    }

    /// Returns false when the segment must not be processed further.
    bool process_ack(Index i, std::uint32_t ack) {
        Tcb& t = tcb(i);
        if (tcp::seq_gt(ack, t.snd_nxt)) {
            t.ack_pending = true;
            drop(TcpDrop::BadAck);
            return false;
        }
        if (ack == t.snd_nxt && t.snd_una != t.snd_nxt) {
            const bool had_data = t.unacked_len > 0;
            const bool fin_acked = (t.unacked_ctl & tcp::kFin) != 0;
            t.snd_una = ack;
            clear_in_flight(t);
            if (had_data) {
                notify(i, TcpEvent::AckedSent);
            }
            if (fin_acked) {
                switch (t.state) {
                    case TcpState::FinWait1: t.state = TcpState::FinWait2; break;
                    case TcpState::Closing: enter_time_wait(t); break;
                    case TcpState::LastAck: enter_closed(t); return false;
                    default: break;
                }
            }
        }
        return true;
    }

    void process_fin(Index i) {
        Tcb& t = tcb(i);
        t.rcv_nxt += 1;
        t.ack_pending = true;
        switch (t.state) {
            case TcpState::Established:
                t.state = TcpState::CloseWait;
                notify(i, TcpEvent::RemoteClosed);
                break;
            case TcpState::FinWait1: t.state = TcpState::Closing; break;
            case TcpState::FinWait2: enter_time_wait(t); break;
            default: break;
        }
    }

    void notify(Index i, TcpEvent e) {
        Mailbox& m = tcb(i).mailbox;
        if (m.has(e)) {
            ++stats_.mailbox_overruns;
        }
        m.pending |= static_cast<std::uint8_t>(e);
        if (on_event) {
            on_event(i, e);
        }
    }

    TcpHeader header_for(const Tcb& t, std::uint32_t seq, std::uint8_t flags) const {
        TcpHeader h;
        h.src_port = t.local_port;
        h.dst_port = t.remote_port;
        h.seq = seq;
        h.ack = (flags & tcp::kAck) ? t.rcv_nxt : 0;
        h.flags = flags;
        h.window = cfg_.mss;
        return h;
    }

    void send_block(const Tcb& t) {
        auto bytes = pool_.bytes(*t.rtx_block);
        auto out = g_.claim();
        std::memcpy(out.data() + ip::kPayloadOffset, bytes.data(), bytes.size());
        emit(t.remote_addr, bytes.size());
    }

    void send_reset(Ipv4Addr dst, std::uint16_t local_port, std::uint16_t remote_port, std::uint32_t seq,
                    std::uint32_t ack, std::uint8_t flags) {
        TcpHeader h;
        h.src_port = local_port;
        h.dst_port = remote_port;
        h.seq = seq;
        h.ack = ack;
        h.flags = flags;
        auto out = g_.claim().subspan(ip::kPayloadOffset, h.length());
        h.encode(out);
        tcp_seal_checksum(out, local_, dst);
        ++stats_.resets_sent;
        emit(dst, h.length());
    }

    /// RST answer to a segment that matched no connection.
    void reset_for(const Segment& in) {
        if (in.has(tcp::kRst)) {
            return;
        }
        if (in.has(tcp::kAck)) {
            send_reset(in.src, in.h.dst_port, in.h.src_port, in.h.ack, 0, tcp::kRst);
        } else {
            send_reset(in.src, in.h.dst_port, in.h.src_port, 0, in.h.seq + in.seq_len(), tcp::kRst | tcp::kAck);
        }
    }

    void emit(Ipv4Addr dst, std::size_t len) {
        ++stats_.segments_out;
        if (io_.output) {
            io_.output(dst, len);
        }
    }

    void clear_in_flight(Tcb& t) {
        if (t.rtx_block && pool_.owns(*t.rtx_block)) {
            pool_.free(*t.rtx_block);
        }
        t.rtx_block.reset();
        t.rtx_timer.cancel();
        t.retries = 0;
        t.unacked_len = 0;
        t.unacked_ctl = 0;
    }

    void enter_time_wait(Tcb& t) {
        t.state = TcpState::TimeWait;
        clear_in_flight(t);
        t.time_wait_timer.set(clock_, cfg_.time_wait);
    }

    void enter_closed(Tcb& t) {
        clear_in_flight(t);
        t.state = TcpState::Closed;
        t.time_wait_timer.cancel();
        t.ack_pending = false;
        t.line_len = 0;
    }

    void back_to_listen(Tcb& t) {
        clear_in_flight(t);
        t.state = TcpState::Listen;
        t.local_port = t.listen_port;
        t.remote_addr = 0;
        t.remote_port = 0;
        t.ack_pending = false;
    }

    std::uint32_t take_iss() {
        const std::uint32_t iss = next_iss_;
        next_iss_ += tcp::kIssIncrement;
        return iss;
    }

    std::uint16_t ephemeral_port() {
        for (;;) {
            const std::uint16_t p = next_port_;
            next_port_ = next_port_ == 0xFFFF ? tcp::kFirstEphemeralPort : static_cast<std::uint16_t>(next_port_ + 1);
            bool used = false;
            for (const Tcb& t : table_) {
                used = used || (t.state != TcpState::Closed && t.local_port == p);
            }
            if (!used) {
                return p;
            }
        }
    }

    void drop(TcpDrop d) { ++stats_.drops[static_cast<std::size_t>(d)]; }

    GlobalBuffer& g_;
    BlockPool& pool_;
    const Clock& clock_;
    Ipv4Addr local_;
    TcpIo io_;
    TcpConfig cfg_;
    std::array<Tcb, tcp::kMaxConnections> table_{};
    std::uint32_t next_iss_ = 0;
    std::uint16_t next_port_ = tcp::kFirstEphemeralPort;
    TcpStats stats_;
};

}  // namespace ltcp
