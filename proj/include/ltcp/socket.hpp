// ltcp/socket.hpp
// Socket layer: a connection endpoint bound to a protothread.
//
// Blocking verbs block the socket's protothread, never the process. A socket
// body is written as straight-line code with LTCP_SOCK_* macros between
// LTCP_PT_BEGIN/LTCP_PT_END; each macro is one blocking point:
//
//   [&env](ltcp::Protothread& pt, ltcp::Socket& s) {
//       LTCP_PT_BEGIN(pt);
//       LTCP_SOCK_CONNECT(pt, s, peer, 80);
//       if (s.result() != ltcp::SockResult::Ok) LTCP_PT_EXIT(pt);
//       LTCP_SOCK_SEND(pt, s, env.request);
//       LTCP_SOCK_RECV(pt, s);
//       use(s.rx_view().bytes());   // before the next blocking point
//       LTCP_SOCK_END(pt, s);
//       LTCP_PT_END(pt);
//   }
//
// Bytes handed to LTCP_SOCK_SEND must stay alive until the send completes.
// A received view points into the global buffer and expires at the next
// transmission or arrival; copy it (copy_to_secondary) to keep it longer.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>

#include "ltcp/buffers.hpp"
#include "ltcp/error.hpp"
#include "ltcp/protothread.hpp"
#include "ltcp/tcp.hpp"

namespace ltcp {

enum class SocketState : std::uint8_t { Fresh, Active, Ended };

constexpr std::string_view to_string(SocketState s) {
    switch (s) {
        case SocketState::Fresh: return "Fresh";
        case SocketState::Active: return "Active";
        case SocketState::Ended: return "Ended";
    }
    return "?";
}

enum class SockResult : std::uint8_t {
    Ok,
    Pending,
    TimedOut,
    Aborted,
    AddrInUse,
    NoRoute,
    NotConnected,
    EndOfStream,
};

constexpr std::string_view to_string(SockResult r) {
    switch (r) {
        case SockResult::Ok: return "Ok";
        case SockResult::Pending: return "Pending";
        case SockResult::TimedOut: return "TimedOut";
        case SockResult::Aborted: return "Aborted";
        case SockResult::AddrInUse: return "AddrInUse";
        case SockResult::NoRoute: return "NoRoute";
        case SockResult::NotConnected: return "NotConnected";
        case SockResult::EndOfStream: return "EndOfStream";
    }
    return "?";
}

class Socket;
using SocketBody = std::function<PtStatus(Protothread&, Socket&)>;

class Socket {
public:
    Socket(TcpLayer& tcp, TcpLayer::Index index, SocketBody body)
        : tcp_(&tcp), index_(index), body_(std::move(body)) {
        pt_init(thread_);
    }

    SocketState state() const noexcept { return state_; }
    SockResult result() const noexcept { return result_; }
    const Protothread& thread() const noexcept { return thread_; }
    TcpLayer::Index index() const noexcept { return index_; }
    TcpState tcp_state() const { return state_ == SocketState::Ended ? TcpState::Closed : tcb().state; }

    /// Runs the body once. Returns its status.
    PtStatus resume() {
        if (state_ == SocketState::Ended && thread_.status != PtStatus::Exited) {
            thread_.status = PtStatus::Exited;
        }
        return pt_resume(thread_, [this](Protothread& pt) { return body_(pt, *this); });
    }

    bool has_event() const {
        return state_ == SocketState::Active && !tcb().mailbox.empty();
    }
    bool has_data() const {
        return state_ == SocketState::Active && tcb().mailbox.has(TcpEvent::DataArrived);
    }

    // ---- connect / listen -------------------------------------------------

    void connect_begin(Ipv4Addr addr, std::uint16_t port) {
        activate();
        try {
            tcp_->connect(index_, addr, port);
        } catch (const Error& e) {
            result_ = map_error(e.code());
        }
    }

    void listen_begin(std::uint16_t port) {
        activate();
        try {
            tcp_->listen(index_, port);
        } catch (const Error& e) {
            result_ = map_error(e.code());
        }
    }

    /// True once the connection is established or has failed.
    bool connect_settled() {
        if (result_ != SockResult::Pending) {
            return true;
        }
        Mailbox& m = tcb().mailbox;
        if (m.has(TcpEvent::Connected)) {
            m.clear(TcpEvent::Connected);
            result_ = SockResult::Ok;
            return true;
        }
        return failed();
    }

    // ---- send -------------------------------------------------------------

    void send_begin(std::span<const std::uint8_t> bytes) {
        require_active();
        send_buf_ = bytes;
        send_off_ = 0;
        result_ = SockResult::Pending;
        if (!tcb().can_send_data()) {
            result_ = SockResult::NotConnected;
        }
    }

    /// Pushes the next segment whenever the previous one has been
    /// acknowledged. True when every byte is acknowledged or the send failed.
    bool send_pump() {
        if (result_ != SockResult::Pending) {
            return true;
        }
        if (failed()) {
            return true;
        }
        Tcb& t = tcb();
        if (!t.send_idle()) {
            return false;
        }
        t.mailbox.clear(TcpEvent::AckedSent);
        if (send_off_ >= send_buf_.size()) {
            result_ = SockResult::Ok;
            return true;
        }
        if (!t.can_send_data()) {
            result_ = SockResult::NotConnected;
            return true;
        }
        const std::size_t chunk = std::min<std::size_t>(t.mss, send_buf_.size() - send_off_);
        try {
            tcp_->tx(index_, tcp::kPsh, send_buf_.subspan(send_off_, chunk));
        } catch (const Error& e) {
            if (e.code() == Errc::Exhausted || e.code() == Errc::WouldBlock) {
                return false;
            }
            result_ = map_error(e.code());
            return true;
        }
        send_off_ += chunk;
        return false;
    }

    std::size_t sent() const noexcept { return result_ == SockResult::Ok ? send_off_ : 0; }

    // ---- receive ----------------------------------------------------------

    /// True when data is available (result Ok, see rx_view), the peer closed
    /// (EndOfStream) or the connection failed.
    bool recv_poll() {
        require_active();
        Tcb& t = tcb();
        if (t.mailbox.has(TcpEvent::DataArrived)) {
            if (auto v = tcp_->consume(index_)) {
                rx_view_ = *v;
                result_ = SockResult::Ok;
                return true;
            }
        }
        if (failed()) {
            return true;
        }
        if (t.state != TcpState::Established && t.state != TcpState::FinWait1 &&
            t.state != TcpState::FinWait2) {
            result_ = SockResult::EndOfStream;
            return true;
        }
        result_ = SockResult::Pending;
        return false;
    }

    const EpochView& rx_view() const noexcept { return rx_view_; }

    // ---- end --------------------------------------------------------------

    /// Drives a graceful close. True once the socket is Ended.
    bool end_pump() {
        if (state_ == SocketState::Ended) {
            return true;
        }
        if (state_ == SocketState::Fresh) {
            finish();
            return true;
        }
        Tcb& t = tcb();
        if (!close_started_) {
            if (t.state == TcpState::Established || t.state == TcpState::CloseWait) {
                if (!t.send_idle()) {
                    return false;
                }
                try {
                    if (t.line_len > 0) {
                        tcp_->flush(index_);
                        return false;
                    }
                    tcp_->close(index_);
                } catch (const Error& e) {
                    if (e.code() == Errc::Exhausted || e.code() == Errc::WouldBlock) {
                        return false;
                    }
                    throw;
                }
            } else {
                tcp_->close(index_);
            }
            close_started_ = true;
        }
        if (t.state == TcpState::TimeWait || t.state == TcpState::Closed) {
            finish();
            return true;
        }
        return false;
    }

    // TCP-level access for applications that use the character interface.
    TcpLayer& tcp() noexcept { return *tcp_; }
    const Tcb& tcb() const { return tcp_->tcb(index_); }
    Tcb& tcb() { return tcp_->tcb(index_); }

private:
    void activate() {
        if (state_ != SocketState::Fresh) {
            throw Error(Errc::Contract, "connect/listen on a socket that is not fresh");
        }
        state_ = SocketState::Active;
        result_ = SockResult::Pending;
    }

    void require_active() const {
        if (state_ != SocketState::Active) {
            throw Error(Errc::NotConnected, "socket is not active");
        }
    }

    bool failed() {
        const Mailbox& m = tcb().mailbox;
        if (m.has(TcpEvent::Aborted)) {
            result_ = SockResult::Aborted;
            return true;
        }
        if (m.has(TcpEvent::TimedOut)) {
            result_ = SockResult::TimedOut;
            return true;
        }
        return false;
    }

    void finish() {
        tcp_->release(index_);
        state_ = SocketState::Ended;
    }

    static SockResult map_error(Errc e) {
        switch (e) {
            case Errc::AddrInUse: return SockResult::AddrInUse;
            case Errc::NoRoute: return SockResult::NoRoute;
            case Errc::NotConnected: return SockResult::NotConnected;
            default: return SockResult::Aborted;
        }
    }

    TcpLayer* tcp_;
    TcpLayer::Index index_;
    SocketBody body_;
    Protothread thread_;
    SocketState state_ = SocketState::Fresh;
    SockResult result_ = SockResult::Ok;
    std::span<const std::uint8_t> send_buf_;
    std::size_t send_off_ = 0;
    EpochView rx_view_;
    bool close_started_ = false;
};

}  // namespace ltcp

#define LTCP_SOCK_CONNECT(pt, s, addr, port)                   \
    do {                                                       \
        (s).connect_begin((addr), (port));                     \
        LTCP_PT_WAIT_UNTIL(pt, (s).connect_settled());         \
    } while (0)

#define LTCP_SOCK_LISTEN(pt, s, port)                          \
    do {                                                       \
        (s).listen_begin(port);                                \
        LTCP_PT_WAIT_UNTIL(pt, (s).connect_settled());         \
    } while (0)

#define LTCP_SOCK_SEND(pt, s, bytes)                           \
    do {                                                       \
        (s).send_begin(bytes);                                 \
        LTCP_PT_WAIT_UNTIL(pt, (s).send_pump());               \
    } while (0)

#define LTCP_SOCK_RECV(pt, s) LTCP_PT_WAIT_UNTIL(pt, (s).recv_poll())

#define LTCP_SOCK_END(pt, s)                                   \
    do {                                                       \
        LTCP_PT_WAIT_UNTIL(pt, (s).end_pump());                \
        LTCP_PT_EXIT(pt);                                      \
    } while (0)
