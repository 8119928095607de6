// ltcp/stack.hpp
// One network node: driver, global buffer, secondary pool, IP, TCP, sockets
// and the cooperative scheduler that ties them together.
//
// step() is one scheduling round:
//   1. poll the controller; a frame goes through the IP handler to TCP or ICMP
//   2. resume socket bodies (those with pending events first) and plain apps
//   3. run the TCP retransmission/TIME-WAIT timer
//   4. send the ACKs still owed
// Everything runs to completion on the caller's thread.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ltcp/buffers.hpp"
#include "ltcp/icmp.hpp"
#include "ltcp/ipv4.hpp"
#include "ltcp/netdev.hpp"
#include "ltcp/protothread.hpp"
#include "ltcp/socket.hpp"
#include "ltcp/tcp.hpp"
#include "ltcp/timers.hpp"

namespace ltcp {

struct StackConfig {
    IpConfig ip;
    MacAddress mac{};
    std::uint64_t seed = 0;
    TcpConfig tcp;
    std::size_t secondary_blocks = kSecondaryBlockCount;
};

struct FrameResult {
    Disposition ip;
    std::optional<IcmpOutcome::Kind> icmp;
};

struct StackStats {
    std::array<std::uint64_t, 8> ip_drops{};  // indexed by DropReason
    std::uint64_t no_route = 0;
    std::uint64_t icmp_replies_sent = 0;
    std::uint64_t icmp_dropped = 0;

    std::uint64_t ip_drop_count(DropReason r) const { return ip_drops[static_cast<std::size_t>(r)]; }
};

using AppBody = std::function<PtStatus(Protothread&)>;

class Stack {
public:
    Stack(StackConfig cfg, const Clock& clock)
        : cfg_(std::move(cfg)),
          clock_(clock),
          pool_(kMtu, cfg_.secondary_blocks),
          nic_(cfg_.mac),
          ip_(cfg_.ip),
          tcp_(gbuf_, pool_, clock_, cfg_.ip.local_addr, cfg_.seed,
               TcpIo{[this](Ipv4Addr dst, std::size_t len) { ip_output(dst, ip::kProtoTcp, len); },
                     [this](Ipv4Addr dst) { return ip_.neighbor(dst).has_value(); }},
               cfg_.tcp) {}

    Stack(const Stack&) = delete;
    Stack& operator=(const Stack&) = delete;

    SimulatedNic& nic() noexcept { return nic_; }
    GlobalBuffer& buffer() noexcept { return gbuf_; }
    const GlobalBuffer& buffer() const noexcept { return gbuf_; }
    BlockPool& pool() noexcept { return pool_; }
    IpLayer& ip() noexcept { return ip_; }
    TcpLayer& tcp() noexcept { return tcp_; }
    const TcpLayer& tcp() const noexcept { return tcp_; }
    const StackStats& stats() const noexcept { return stats_; }
    const Clock& clock() const noexcept { return clock_; }
    Ipv4Addr addr() const noexcept { return ip_.local_addr(); }

    /// Creates a socket on a free connection slot. Throws Errc::NoSlot.
    Socket& socket_begin(SocketBody body) {
        const auto idx = tcp_.allocate();
        sockets_.emplace_back(tcp_, idx, std::move(body));
        return sockets_.back();
    }

    const std::deque<Socket>& sockets() const noexcept { return sockets_; }

    /// Registers a plain protothread resumed once per step until it exits.
    void add_app(AppBody body) {
        apps_.push_back(App{Protothread{}, std::move(body)});
    }

    bool apps_done() const {
        for (const auto& a : apps_) {
            if (a.pt.status != PtStatus::Exited) {
                return false;
            }
        }
        for (const auto& s : sockets_) {
            if (s.state() != SocketState::Ended) {
                return false;
            }
        }
        return true;
    }

    // ---- ICMP -------------------------------------------------------------

    void ping(Ipv4Addr dst, std::uint16_t id, std::uint16_t seq, std::span<const std::uint8_t> payload) {
        IcmpEcho req;
        req.type = icmp::kEchoRequest;
        req.identifier = id;
        req.sequence = seq;
        req.payload.assign(payload.begin(), payload.end());
        send_icmp(dst, req.serialize());
    }

    const std::vector<IcmpEcho>& echo_replies() const noexcept { return echo_replies_; }

    // ---- data path --------------------------------------------------------

    /// Writes Ethernet and IP headers around a transport payload that is
    /// already at ip::kPayloadOffset in the global buffer, then transmits.
    void ip_output(Ipv4Addr dst, std::uint8_t protocol, std::size_t payload_len) {
        auto mac = ip_.neighbor(dst);
        if (!mac) {
            ++stats_.no_route;
            return;
        }
        eth::write_header(gbuf_.writable(), eth::Header{*mac, nic_.mac(), eth::kTypeIpv4});
        const auto hdr = ip_.fill_hdr(dst, protocol, payload_len);
        IpLayer::fill_packet(gbuf_, hdr, gbuf_.writable().subspan(ip::kPayloadOffset, payload_len));
        nic_.send(gbuf_);
    }

    /// Handles whatever frame currently sits in the global buffer.
    FrameResult handle_frame() {
        FrameResult r;
        r.ip = ip_.handler(gbuf_);
        switch (r.ip.kind) {
            case Disposition::Kind::DeliveredToTcp:
                tcp_.handle(r.ip.src, gbuf_.view(r.ip.offset, r.ip.length));
                break;
            case Disposition::Kind::DeliveredToIcmp: {
                IcmpOutcome out = icmp_input(gbuf_.view(r.ip.offset, r.ip.length).bytes());
                r.icmp = out.kind;
                if (out.kind == IcmpOutcome::Kind::Reply) {
                    send_icmp(r.ip.src, out.message.serialize());
                    ++stats_.icmp_replies_sent;
                } else if (out.kind == IcmpOutcome::Kind::EchoReplyReceived) {
                    echo_replies_.push_back(std::move(out.message));
                } else if (out.kind == IcmpOutcome::Kind::Dropped) {
                    ++stats_.icmp_dropped;
                }
                break;
            }
            case Disposition::Kind::Dropped:
                ++stats_.ip_drops[static_cast<std::size_t>(r.ip.reason)];
                break;
        }
        if (on_frame) {
            on_frame(r);
        }
        return r;
    }

    /// Polls the controller once and handles a delivered frame.
    std::optional<FrameResult> poll() {
        if (!nic_.poll(gbuf_)) {
            return std::nullopt;
        }
        return handle_frame();
    }

    void step() {
        if (!nic_.initialized()) {
            if (nic_.init() != DevStatus::Ready) {
                return;
            }
        }
        poll();
        run_apps();
        tcp_.timer();
        tcp_.flush_acks();
    }

    /// Observer for every handled frame.
    std::function<void(const FrameResult&)> on_frame;

private:
    struct App {
        Protothread pt;
        AppBody body;
    };

    void send_icmp(Ipv4Addr dst, const std::vector<std::uint8_t>& msg) {
        if (msg.size() > ip::kMaxPayload) {
            throw Error(Errc::SizeError, "ICMP message too large");
        }
        auto buf = gbuf_.claim();
        std::copy(msg.begin(), msg.end(), buf.begin() + ip::kPayloadOffset);
        ip_output(dst, ip::kProtoIcmp, msg.size());
    }

    void run_apps() {
        // A socket holding fresh data runs first, while its view is valid.
        std::vector<Socket*> order;
        for (auto& s : sockets_) {
            if (s.has_data()) {
                order.push_back(&s);
            }
        }
        for (auto& s : sockets_) {
            if (!s.has_data()) {
                order.push_back(&s);
            }
        }
        for (Socket* s : order) {
            run_socket(*s);
        }
        for (auto& a : apps_) {
            pt_resume(a.pt, a.body);
        }
    }

    void run_socket(Socket& s) {
        if (s.state() == SocketState::Ended) {
            return;
        }
        if (s.thread().status != PtStatus::Exited) {
            s.resume();
        }
        // A body that returned without ending its socket still closes it.
        if (s.thread().status == PtStatus::Exited && s.state() != SocketState::Ended) {
            s.end_pump();
        }
    }

    StackConfig cfg_;
    const Clock& clock_;
    GlobalBuffer gbuf_;
    BlockPool pool_;
    SimulatedNic nic_;
    IpLayer ip_;
    TcpLayer tcp_;
    StackStats stats_;
    std::deque<Socket> sockets_;
    std::vector<App> apps_;
    std::vector<IcmpEcho> echo_replies_;
};

}  // namespace ltcp
