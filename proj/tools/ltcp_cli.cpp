// ltcp command line: run simulator scenarios and replay pcap captures.
//
//   ltcp handshake [--seed N] [--loss F] [--dup F] [--delay T] [--max-ticks N] [--pcap-out FILE]
//   ltcp echo --bytes N --chunk C [common flags]
//   ltcp ping --count K [common flags]
//   ltcp run --scenario FILE [--pcap-out FILE]
//   ltcp replay --pcap FILE [--addr A.B.C.D] [--listen PORT]
//
// Exit status: 0 success, 1 incomplete scenario, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "ltcp.hpp"

namespace {

struct Common {
    std::uint64_t seed = 1;
    double loss = 0.0;
    double dup = 0.0;
    ltcp::Tick delay = 0;
    ltcp::Tick max_ticks = 20000;
    std::string pcap_out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
    app->add_option("--loss", c.loss, "frame loss probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--dup", c.dup, "frame duplication probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--delay", c.delay, "link delay in ticks")->capture_default_str();
    app->add_option("--max-ticks", c.max_ticks, "tick budget")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--pcap-out", c.pcap_out, "write the wire capture to this pcap file");
}

ltcp::Scenario to_scenario(const Common& c, ltcp::ScriptKind k) {
    ltcp::Scenario sc;
    sc.script = k;
    sc.seed = c.seed;
    sc.loss_rate = c.loss;
    sc.duplicate_rate = c.dup;
    sc.delay_ticks = c.delay;
    sc.max_ticks = c.max_ticks;
    sc.pcap_out = c.pcap_out;
    return sc;
}

int run_and_print(const ltcp::Scenario& sc) {
    const auto rep = ltcp::run_scenario(sc);
    ltcp::print_report(std::cout, rep);
    if (!sc.pcap_out.empty()) {
        std::cout << "pcap_out=" << sc.pcap_out << '\n';
    }
    return rep.complete ? 0 : 1;
}

std::string describe(const ltcp::FrameResult& r) {
    using K = ltcp::Disposition::Kind;
    std::string s(ltcp::to_string(r.ip.kind));
    if (r.ip.kind == K::Dropped) {
        s += "(" + std::string(ltcp::to_string(r.ip.reason)) + ")";
    } else {
        s += " src=" + ltcp::format_ipv4(r.ip.src) + " dst=" + ltcp::format_ipv4(r.ip.dst) +
             " len=" + std::to_string(r.ip.length);
    }
    if (r.icmp) {
        switch (*r.icmp) {
            case ltcp::IcmpOutcome::Kind::Reply: s += " icmp=reply-sent"; break;
            case ltcp::IcmpOutcome::Kind::EchoReplyReceived: s += " icmp=echo-reply"; break;
            case ltcp::IcmpOutcome::Kind::Ignored: s += " icmp=ignored"; break;
            case ltcp::IcmpOutcome::Kind::Dropped: s += " icmp=dropped"; break;
        }
    }
    return s;
}

int replay(const std::string& path, const std::string& addr_text, std::optional<std::uint16_t> listen_port) {
    const auto records = ltcp::pcap_read(path);
    const ltcp::Ipv4Addr addr = ltcp::parse_ipv4(addr_text);

    // Learn neighbours from the capture so the replay node can answer.
    ltcp::StackConfig cfg;
    cfg.ip.local_addr = addr;
    cfg.mac = {0x02, 0x00, 0x00, 0x00, 0x00, 0xfe};
    for (const auto& r : records) {
        if (r.frame.size() < ltcp::ip::kPayloadOffset) {
            continue;
        }
        const auto eh = ltcp::eth::read_header(r.frame);
        if (eh.ethertype != ltcp::eth::kTypeIpv4) {
            continue;
        }
        const ltcp::Ipv4Addr src = ltcp::load_be32(r.frame, 26);
        const ltcp::Ipv4Addr dst = ltcp::load_be32(r.frame, 30);
        if (dst == addr) {
            cfg.mac = eh.dst;
        }
        if (src != addr) {
            cfg.ip.neighbors.emplace(src, eh.src);
        }
    }

    ltcp::Clock clock;
    ltcp::VirtualLink link(ltcp::LinkConfig{}, clock);
    ltcp::Stack stack(cfg, clock);
    link.attach(stack.nic());
    stack.nic().init();
    if (listen_port) {
        const std::uint16_t port = *listen_port;
        stack.socket_begin([port](ltcp::Protothread& pt, ltcp::Socket& s) -> ltcp::PtStatus {
            LTCP_PT_BEGIN(pt);
            LTCP_SOCK_LISTEN(pt, s, port);
            while (s.result() == ltcp::SockResult::Ok) {
                LTCP_SOCK_RECV(pt, s);
            }
            LTCP_PT_END(pt);
        });
    }

    std::optional<ltcp::FrameResult> last;
    stack.on_frame = [&](const ltcp::FrameResult& r) { last = r; };
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.tick > clock.now()) {
            clock.advance(r.tick - clock.now());
        }
        stack.nic().receive(r.frame);
        last.reset();
        stack.step();
        std::cout << "frame=" << n++ << " tick=" << r.tick << " bytes=" << r.frame.size() << ' '
                  << (last ? describe(*last) : std::string("not-handled")) << '\n';
    }
    std::cout << "frames=" << records.size() << '\n' << "replies_sent=" << link.counters().sent << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ltcp: embedded TCP/IP stack simulator"};
    app.require_subcommand(1);

    Common hs_c, echo_c, ping_c;
    auto* hs = app.add_subcommand("handshake", "open and close one connection");
    add_common(hs, hs_c);

    std::size_t bytes = 1024, chunk = 128;
    auto* echo = app.add_subcommand("echo", "echo a byte stream through a server");
    add_common(echo, echo_c);
    echo->add_option("--bytes", bytes, "total bytes to echo")->capture_default_str();
    echo->add_option("--chunk", chunk, "bytes per send")->check(CLI::Range(1, 1460))->capture_default_str();

    unsigned count = 3;
    auto* ping = app.add_subcommand("ping", "ICMP echo request/reply pairs");
    add_common(ping, ping_c);
    ping->add_option("--count", count, "number of requests")->check(CLI::PositiveNumber)->capture_default_str();

    std::string scenario_path, run_pcap;
    auto* run = app.add_subcommand("run", "run a key=value scenario file");
    run->add_option("--scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--pcap-out", run_pcap, "write the wire capture to this pcap file");

    std::string replay_path, replay_addr = "10.0.0.2";
    std::optional<std::uint16_t> listen_port;
    auto* rp = app.add_subcommand("replay", "feed captured frames into one stack");
    rp->add_option("--pcap", replay_path, "pcap file")->required()->check(CLI::ExistingFile);
    rp->add_option("--addr", replay_addr, "local address of the replay node")->capture_default_str();
    rp->add_option("--listen", listen_port, "listen on this TCP port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*hs) {
            return run_and_print(to_scenario(hs_c, ltcp::ScriptKind::Handshake));
        }
        if (*echo) {
            auto sc = to_scenario(echo_c, ltcp::ScriptKind::Echo);
            sc.echo_bytes = bytes;
            sc.echo_chunk = chunk;
            return run_and_print(sc);
        }
        if (*ping) {
            auto sc = to_scenario(ping_c, ltcp::ScriptKind::Ping);
            sc.ping_count = count;
            return run_and_print(sc);
        }
        if (*run) {
            auto sc = ltcp::load_scenario(scenario_path);
            if (!run_pcap.empty()) {
                sc.pcap_out = run_pcap;
            }
            return run_and_print(sc);
        }
        if (*rp) {
            return replay(replay_path, replay_addr, listen_port);
        }
    } catch (const ltcp::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ltcp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ltcp::Errc::InvalidArgument ? 2 : 1;
    }
    return 2;
}
