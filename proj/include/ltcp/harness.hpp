// ltcp/harness.hpp
// Deterministic two-node simulator: canned scenarios, reports, scenario files.
//
// Node A (client) and node B (server) share one Clock and one VirtualLink.
// Each tick runs link.step(), A.step(), B.step(), then advances the clock, so
// a frame sent at tick t is seen by the peer at tick max(t + 1, t + delay).
// Identical scenarios produce identical reports and byte-identical captures.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ltcp/buffers.hpp"
#include "ltcp/error.hpp"
#include "ltcp/netdev.hpp"
#include "ltcp/pcap.hpp"
#include "ltcp/protothread.hpp"
#include "ltcp/socket.hpp"
#include "ltcp/stack.hpp"
#include "ltcp/tcp.hpp"
#include "ltcp/timers.hpp"

namespace ltcp {

enum class ScriptKind { Handshake, Echo, Ping };

constexpr std::string_view to_string(ScriptKind k) {
    switch (k) {
        case ScriptKind::Handshake: return "handshake";
        case ScriptKind::Echo: return "echo";
        case ScriptKind::Ping: return "ping";
    }
    return "?";
}

struct NodeSpec {
    Ipv4Addr addr = 0;
    MacAddress mac{};
};

struct Scenario {
    ScriptKind script = ScriptKind::Handshake;
    std::uint64_t seed = 1;
    double loss_rate = 0.0;
    double duplicate_rate = 0.0;
    Tick delay_ticks = 0;
    Tick max_ticks = 20000;
    NodeSpec node_a{make_ipv4(10, 0, 0, 1), {0x02, 0x00, 0x00, 0x00, 0x00, 0x01}};
    NodeSpec node_b{make_ipv4(10, 0, 0, 2), {0x02, 0x00, 0x00, 0x00, 0x00, 0x02}};
    std::uint16_t port = 7;
    Tick hold_ticks = 10;  // handshake: how long the client keeps the connection open
    std::size_t echo_bytes = 1024;
    std::size_t echo_chunk = 128;
    unsigned ping_count = 3;
    std::size_t ping_payload = 32;
    Tick ping_timeout = 100;
    TcpConfig tcp;
    std::string pcap_out;
};

struct NodeReport {
    Ipv4Addr addr = 0;
    std::vector<TcpState> tcb_states;
    TcpStats tcp;
    StackStats stack;
    std::uint64_t nic_overruns = 0;
    std::uint64_t epoch_violations = 0;
    std::size_t pool_outstanding = 0;
};

struct Report {
    ScriptKind script = ScriptKind::Handshake;
    bool complete = false;
    Tick ticks_elapsed = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_delivered = 0;
    std::uint64_t frames_dropped = 0;
    std::uint64_t frames_duplicated = 0;
    std::uint64_t in_flight_at_end = 0;
    std::uint64_t retransmissions = 0;
    std::uint64_t bytes_transferred = 0;
    std::uint64_t handshake_segments = 0;  // frames on the wire until both ends were Established
    bool both_established = false;
    std::string client_result = "none";
    std::string server_result = "none";
    bool echo_ok = false;
    std::uint64_t content_hash_sent = 0;
    std::uint64_t content_hash_received = 0;
    unsigned pings_sent = 0;
    unsigned ping_replies = 0;
    bool ping_payloads_match = false;
    std::uint64_t stop_and_wait_checks = 0;
    std::uint64_t stop_and_wait_violations = 0;
    std::uint64_t mailbox_overruns = 0;
    std::uint64_t epoch_violations = 0;
    NodeReport a;
    NodeReport b;
    std::vector<WireRecord> capture;

    /// sent + duplicated = delivered + dropped + in flight
    bool conservation_holds() const noexcept {
        return frames_sent + frames_duplicated == frames_delivered + frames_dropped + in_flight_at_end;
    }

    std::vector<PcapRecord> pcap_records() const {
        std::vector<PcapRecord> out;
        out.reserve(capture.size());
        for (const auto& w : capture) {
            out.push_back(PcapRecord{w.tick, w.frame});
        }
        return out;
    }
};

/// 64-bit FNV-1a, used to summarize transferred content in reports.
inline std::uint64_t content_hash(std::span<const std::uint8_t> data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::vector<std::uint8_t> scenario_payload(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 gen(seed ^ 0x5DEECE66DULL);
    std::vector<std::uint8_t> out(n);
    for (auto& b : out) {
        b = static_cast<std::uint8_t>(gen() >> 56);
    }
    return out;
}

namespace detail {

inline NodeReport node_report(Stack& s) {
    NodeReport r;
    r.addr = s.addr();
    for (std::size_t i = 0; i < TcpLayer::capacity(); ++i) {
        r.tcb_states.push_back(s.tcp().tcb(i).state);
    }
    r.tcp = s.tcp().stats();
    r.stack = s.stats();
    r.nic_overruns = s.nic().overruns();
    r.epoch_violations = s.buffer().epoch_violations();
    r.pool_outstanding = s.pool().outstanding();
    return r;
}

inline bool all_closed(const Stack& s) {
    for (std::size_t i = 0; i < TcpLayer::capacity(); ++i) {
        if (s.tcp().tcb(i).state != TcpState::Closed) {
            return false;
        }
    }
    return true;
}

struct EchoClientEnv {
    std::vector<std::uint8_t> data;
    std::vector<std::uint8_t> received;
    std::size_t offset = 0;
    std::size_t chunk_end = 0;
};

struct EchoServerEnv {
    BlockHandle block;
    bool holding = false;
};

struct PingEnv {
    unsigned k = 0;
    Timer timeout;
    std::vector<std::uint8_t> payload;
    std::vector<std::vector<std::uint8_t>> sent_payloads;
};

}  // namespace detail

inline Report run_scenario(const Scenario& sc) {
    if (sc.echo_chunk == 0 || sc.echo_chunk > tcp::kDefaultMss) {
        throw Error(Errc::InvalidArgument, "echo chunk must be in 1..1460");
    }
    Clock clock;
    VirtualLink link(LinkConfig{sc.loss_rate, sc.duplicate_rate, sc.delay_ticks, sc.seed}, clock);

    auto make_cfg = [&](const NodeSpec& self, const NodeSpec& peer, std::uint64_t node_seed) {
        StackConfig c;
        c.ip.local_addr = self.addr;
        c.ip.neighbors[peer.addr] = peer.mac;
        c.mac = self.mac;
        c.seed = node_seed;
        c.tcp = sc.tcp;
        return c;
    };
    Stack a(make_cfg(sc.node_a, sc.node_b, sc.seed * 2 + 1), clock);
    Stack b(make_cfg(sc.node_b, sc.node_a, sc.seed * 2 + 2), clock);
    link.attach(a.nic());
    link.attach(b.nic());
    a.nic().init();
    b.nic().init();

    Report rep;
    rep.script = sc.script;

    detail::EchoClientEnv client;
    detail::EchoServerEnv server;
    detail::PingEnv ping;
    Timer hold_timer;
    Socket* client_sock = nullptr;
    Socket* server_sock = nullptr;
    const Ipv4Addr peer = sc.node_b.addr;
    const std::uint16_t port = sc.port;

    switch (sc.script) {
        case ScriptKind::Handshake: {
            server_sock = &b.socket_begin([port](Protothread& pt, Socket& s) -> PtStatus {
                LTCP_PT_BEGIN(pt);
                LTCP_SOCK_LISTEN(pt, s, port);
                if (s.result() != SockResult::Ok) {
                    LTCP_PT_EXIT(pt);
                }
                // Wait for the client's close, then close our side.
                LTCP_SOCK_RECV(pt, s);
                LTCP_SOCK_END(pt, s);
                LTCP_PT_END(pt);
            });
            const Tick hold = sc.hold_ticks;
            client_sock = &a.socket_begin([peer, port, hold, &hold_timer, &clock](Protothread& pt, Socket& s) -> PtStatus {
                LTCP_PT_BEGIN(pt);
                LTCP_SOCK_CONNECT(pt, s, peer, port);
                if (s.result() == SockResult::Ok && hold > 0) {
                    hold_timer.set(clock, hold);
                    LTCP_PT_WAIT_UNTIL(pt, hold_timer.expired(clock));
                }
                LTCP_SOCK_END(pt, s);
                LTCP_PT_END(pt);
            });
            break;
        }
        case ScriptKind::Echo: {
            client.data = scenario_payload(sc.seed, sc.echo_bytes);
            const std::size_t chunk = sc.echo_chunk;
            server_sock = &b.socket_begin([port, &server, &b](Protothread& pt, Socket& s) -> PtStatus {
                LTCP_PT_BEGIN(pt);
                LTCP_SOCK_LISTEN(pt, s, port);
                if (s.result() != SockResult::Ok) {
                    LTCP_PT_EXIT(pt);
                }
                for (;;) {
                    LTCP_SOCK_RECV(pt, s);
                    if (s.result() != SockResult::Ok) {
                        break;
                    }
                    // Keep the bytes past the next transmission: copy them out.
                    server.block = copy_to_secondary(s.rx_view(), b.pool());
                    server.holding = true;
                    LTCP_SOCK_SEND(pt, s, b.pool().bytes(server.block));
                    b.pool().free(server.block);
                    server.holding = false;
                    if (s.result() != SockResult::Ok) {
                        break;
                    }
                }
                LTCP_SOCK_END(pt, s);
                LTCP_PT_END(pt);
            });
            client_sock = &a.socket_begin([peer, port, chunk, &client](Protothread& pt, Socket& s) -> PtStatus {
                LTCP_PT_BEGIN(pt);
                LTCP_SOCK_CONNECT(pt, s, peer, port);
                if (s.result() != SockResult::Ok) {
                    LTCP_PT_EXIT(pt);
                }
                while (client.offset < client.data.size()) {
                    client.chunk_end = std::min(client.offset + chunk, client.data.size());
                    LTCP_SOCK_SEND(pt, s,
                                   std::span<const std::uint8_t>(client.data).subspan(
                                       client.offset, client.chunk_end - client.offset));
                    if (s.result() != SockResult::Ok) {
                        LTCP_PT_EXIT(pt);
                    }
                    while (client.received.size() < client.chunk_end) {
                        LTCP_SOCK_RECV(pt, s);
                        if (s.result() != SockResult::Ok) {
                            LTCP_PT_EXIT(pt);
                        }
                        {
                            auto bytes = s.rx_view().bytes();
                            client.received.insert(client.received.end(), bytes.begin(), bytes.end());
                        }
                    }
                    client.offset = client.chunk_end;
                }
                LTCP_SOCK_END(pt, s);
                LTCP_PT_END(pt);
            });
            break;
        }
        case ScriptKind::Ping: {
            const unsigned count = sc.ping_count;
            const Tick timeout = sc.ping_timeout;
            ping.payload.resize(sc.ping_payload);
            for (std::size_t i = 0; i < ping.payload.size(); ++i) {
                ping.payload[i] = static_cast<std::uint8_t>('a' + i % 26);
            }
            a.add_app([&ping, &a, &clock, peer, count, timeout](Protothread& pt) -> PtStatus {
                LTCP_PT_BEGIN(pt);
                for (ping.k = 1; ping.k <= count; ++ping.k) {
                    ping.payload[0] = static_cast<std::uint8_t>(ping.k);
                    ping.sent_payloads.push_back(ping.payload);
                    a.ping(peer, 0x1d2e, static_cast<std::uint16_t>(ping.k), ping.payload);
                    ping.timeout.set(clock, timeout);
                    LTCP_PT_WAIT_UNTIL(pt, a.echo_replies().size() >= ping.k || ping.timeout.expired(clock));
                }
                LTCP_PT_END(pt);
            });
            break;
        }
    }

    auto both_established = [&] {
        return client_sock != nullptr && server_sock != nullptr &&
               a.tcp().tcb(client_sock->index()).state == TcpState::Established &&
               b.tcp().tcb(server_sock->index()).state == TcpState::Established;
    };

    bool done = false;
    Tick t = 0;
    for (; t < sc.max_ticks; ++t) {
        link.step();
        a.step();
        b.step();
        if (!rep.both_established && both_established()) {
            rep.both_established = true;
            rep.handshake_segments = link.counters().sent;
        }
        if (a.apps_done() && b.apps_done() && detail::all_closed(a) && detail::all_closed(b)) {
            done = true;
            ++t;
            break;
        }
        clock.advance();
    }

    rep.ticks_elapsed = t;
    const auto& c = link.counters();
    rep.frames_sent = c.sent;
    rep.frames_delivered = c.delivered;
    rep.frames_dropped = c.dropped;
    rep.frames_duplicated = c.duplicated;
    rep.in_flight_at_end = link.in_flight();
    rep.a = detail::node_report(a);
    rep.b = detail::node_report(b);
    rep.retransmissions = rep.a.tcp.retransmissions + rep.b.tcp.retransmissions;
    rep.stop_and_wait_checks = rep.a.tcp.stop_and_wait_checks + rep.b.tcp.stop_and_wait_checks;
    rep.stop_and_wait_violations = rep.a.tcp.stop_and_wait_violations + rep.b.tcp.stop_and_wait_violations;
    rep.mailbox_overruns = rep.a.tcp.mailbox_overruns + rep.b.tcp.mailbox_overruns;
    rep.epoch_violations = rep.a.epoch_violations + rep.b.epoch_violations;
    if (client_sock != nullptr) {
        rep.client_result = std::string(to_string(client_sock->result()));
    }
    if (server_sock != nullptr) {
        rep.server_result = std::string(to_string(server_sock->result()));
    }

    bool success = done;
    switch (sc.script) {
        case ScriptKind::Handshake:
            success = success && rep.both_established && client_sock->result() == SockResult::Ok;
            break;
        case ScriptKind::Echo:
            rep.bytes_transferred = client.received.size();
            rep.content_hash_sent = content_hash(client.data);
            rep.content_hash_received = content_hash(client.received);
            rep.echo_ok = client.received == client.data;
            success = success && rep.echo_ok;
            break;
        case ScriptKind::Ping: {
            rep.pings_sent = static_cast<unsigned>(ping.sent_payloads.size());
            rep.ping_replies = static_cast<unsigned>(a.echo_replies().size());
            bool match = rep.ping_replies == rep.pings_sent;
            for (std::size_t i = 0; match && i < a.echo_replies().size(); ++i) {
                const auto& r = a.echo_replies()[i];
                match = r.sequence == i + 1 && r.payload == ping.sent_payloads[i];
            }
            rep.ping_payloads_match = match;
            rep.bytes_transferred = rep.ping_replies * sc.ping_payload;
            success = success && match && rep.ping_replies == sc.ping_count;
            break;
        }
    }
    rep.complete = success;
    rep.capture = link.capture();
    if (!sc.pcap_out.empty()) {
        pcap_write(sc.pcap_out, rep.pcap_records());
    }
    return rep;
}

inline void print_report(std::ostream& os, const Report& r) {
    auto states = [](const NodeReport& n) {
        std::string s;
        for (std::size_t i = 0; i < n.tcb_states.size(); ++i) {
            s += (i ? "," : "");
            s += to_string(n.tcb_states[i]);
        }
        return s;
    };
    auto drops = [](const NodeReport& n) {
        std::string s;
        for (std::size_t i = 1; i < n.stack.ip_drops.size(); ++i) {
            if (n.stack.ip_drops[i] != 0) {
                s += (s.empty() ? "" : ",");
                s += "ip." + std::string(to_string(static_cast<DropReason>(i))) + ":" +
                     std::to_string(n.stack.ip_drops[i]);
            }
        }
        for (std::size_t i = 0; i < n.tcp.drops.size(); ++i) {
            if (n.tcp.drops[i] != 0) {
                s += (s.empty() ? "" : ",");
                s += "tcp." + std::string(to_string(static_cast<TcpDrop>(i))) + ":" +
                     std::to_string(n.tcp.drops[i]);
            }
        }
        if (n.nic_overruns != 0) {
            s += (s.empty() ? "" : ",");
            s += "nic.overrun:" + std::to_string(n.nic_overruns);
        }
        return s.empty() ? std::string("none") : s;
    };
    os << "scenario=" << to_string(r.script) << '\n'
       << "complete=" << (r.complete ? "true" : "false") << '\n'
       << "ticks_elapsed=" << r.ticks_elapsed << '\n'
       << "frames_sent=" << r.frames_sent << '\n'
       << "frames_delivered=" << r.frames_delivered << '\n'
       << "frames_dropped=" << r.frames_dropped << '\n'
       << "frames_duplicated=" << r.frames_duplicated << '\n'
       << "in_flight_at_end=" << r.in_flight_at_end << '\n'
       << "conservation=" << (r.conservation_holds() ? "ok" : "VIOLATED") << '\n'
       << "retransmissions=" << r.retransmissions << '\n'
       << "bytes_transferred=" << r.bytes_transferred << '\n';
    if (r.script != ScriptKind::Ping) {
        os << "handshake_segments=" << r.handshake_segments << '\n'
           << "client_result=" << r.client_result << '\n'
           << "server_result=" << r.server_result << '\n';
    }
    if (r.script == ScriptKind::Echo) {
        os << "echo_byte_exact=" << (r.echo_ok ? "true" : "false") << '\n';
        char buf[64];
        std::snprintf(buf, sizeof buf, "%016llx/%016llx", static_cast<unsigned long long>(r.content_hash_sent),
                      static_cast<unsigned long long>(r.content_hash_received));
        os << "content_hash_sent/received=" << buf << '\n';
    }
    if (r.script == ScriptKind::Ping) {
        os << "pings_sent=" << r.pings_sent << '\n'
           << "ping_replies=" << r.ping_replies << '\n'
           << "ping_payloads_match=" << (r.ping_payloads_match ? "true" : "false") << '\n';
    }
    os << "stop_and_wait_checks=" << r.stop_and_wait_checks << '\n'
       << "stop_and_wait_violations=" << r.stop_and_wait_violations << '\n'
       << "mailbox_overruns=" << r.mailbox_overruns << '\n'
       << "epoch_violations=" << r.epoch_violations << '\n'
       << "node_a.tcbs=" << states(r.a) << '\n'
       << "node_a.drops=" << drops(r.a) << '\n'
       << "node_b.tcbs=" << states(r.b) << '\n'
       << "node_b.drops=" << drops(r.b) << '\n';
}

// ---- scenario files ---------------------------------------------------------

inline Ipv4Addr parse_ipv4(const std::string& text) {
    unsigned parts[4];
    char tail;
    if (std::sscanf(text.c_str(), "%u.%u.%u.%u%c", &parts[0], &parts[1], &parts[2], &parts[3], &tail) != 4 ||
        parts[0] > 255 || parts[1] > 255 || parts[2] > 255 || parts[3] > 255) {
        throw Error(Errc::InvalidArgument, "bad IPv4 address '" + text + "'");
    }
    return make_ipv4(static_cast<std::uint8_t>(parts[0]), static_cast<std::uint8_t>(parts[1]),
                     static_cast<std::uint8_t>(parts[2]), static_cast<std::uint8_t>(parts[3]));
}

inline MacAddress parse_mac(const std::string& text) {
    unsigned p[6];
    char tail;
    if (std::sscanf(text.c_str(), "%x:%x:%x:%x:%x:%x%c", &p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &tail) != 6) {
        throw Error(Errc::InvalidArgument, "bad MAC address '" + text + "'");
    }
    MacAddress m{};
    for (int i = 0; i < 6; ++i) {
        if (p[i] > 255) {
            throw Error(Errc::InvalidArgument, "bad MAC address '" + text + "'");
        }
        m[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(p[i]);
    }
    return m;
}

/// Parses the flat key=value scenario format. Blank lines and lines starting
/// with '#' are ignored. Unknown keys are errors.
inline Scenario parse_scenario(std::istream& in) {
    Scenario sc;
    std::string line;
    std::size_t lineno = 0;
    auto to_u64 = [&](const std::string& v) {
        std::uint64_t x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || p != v.data() + v.size()) {
            throw ParseError(lineno, "bad integer '" + v + "'");
        }
        return x;
    };
    auto to_rate = [&](const std::string& v) {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size() || !(x >= 0.0 && x <= 1.0)) {
            throw ParseError(lineno, "bad rate '" + v + "'");
        }
        return x;
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(lineno, "expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "script") {
            if (val == "handshake") {
                sc.script = ScriptKind::Handshake;
            } else if (val == "echo") {
                sc.script = ScriptKind::Echo;
            } else if (val == "ping") {
                sc.script = ScriptKind::Ping;
            } else {
                throw ParseError(lineno, "unknown script '" + val + "'");
            }
        } else if (key == "seed") {
            sc.seed = to_u64(val);
        } else if (key == "loss") {
            sc.loss_rate = to_rate(val);
        } else if (key == "dup") {
            sc.duplicate_rate = to_rate(val);
        } else if (key == "delay") {
            sc.delay_ticks = to_u64(val);
        } else if (key == "max_ticks") {
            sc.max_ticks = to_u64(val);
        } else if (key == "port") {
            sc.port = static_cast<std::uint16_t>(to_u64(val));
        } else if (key == "hold") {
            sc.hold_ticks = to_u64(val);
        } else if (key == "bytes") {
            sc.echo_bytes = to_u64(val);
        } else if (key == "chunk") {
            sc.echo_chunk = to_u64(val);
        } else if (key == "count") {
            sc.ping_count = static_cast<unsigned>(to_u64(val));
        } else if (key == "ping_payload") {
            sc.ping_payload = to_u64(val);
        } else if (key == "rtx_base") {
            sc.tcp.rtx_base = to_u64(val);
        } else if (key == "max_retries") {
            sc.tcp.max_retries = static_cast<unsigned>(to_u64(val));
        } else if (key == "node_a.addr") {
            sc.node_a.addr = parse_ipv4(val);
        } else if (key == "node_a.mac") {
            sc.node_a.mac = parse_mac(val);
        } else if (key == "node_b.addr") {
            sc.node_b.addr = parse_ipv4(val);
        } else if (key == "node_b.mac") {
            sc.node_b.mac = parse_mac(val);
        } else if (key == "pcap_out") {
            sc.pcap_out = val;
        } else {
            throw ParseError(lineno, "unknown key '" + key + "'");
        }
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw Error(Errc::InvalidArgument, "cannot open " + path);
    }
    return parse_scenario(f);
}

}  // namespace ltcp
