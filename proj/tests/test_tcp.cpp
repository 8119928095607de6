#include <gtest/gtest.h>

#include "support.hpp"

using namespace ltcp;

namespace {

// A lone TCP layer whose output is captured instead of transmitted.
struct Solo {
    Clock clock;
    GlobalBuffer g;
    BlockPool pool{kMtu, kSecondaryBlockCount};
    std::vector<std::vector<std::uint8_t>> out;
    TcpLayer tcp;

    explicit Solo(TcpConfig cfg = {}, std::uint64_t seed = 1)
        : tcp(g, pool, clock, fixture::kAddrA, seed,
              TcpIo{[this](Ipv4Addr, std::size_t len) {
                        auto d = g.writable().subspan(ip::kPayloadOffset, len);
                        out.emplace_back(d.begin(), d.end());
                    },
                    [](Ipv4Addr) { return true; }},
              cfg) {}

    TcpLayer::Index established(std::uint32_t snd = 5000, std::uint32_t rcv = 777) {
        const auto i = tcp.allocate();
        Tcb& t = tcp.tcb(i);
        t.state = TcpState::Established;
        t.remote_addr = fixture::kAddrB;
        t.local_port = 1234;
        t.remote_port = 80;
        t.snd_una = t.snd_nxt = snd;
        t.rcv_nxt = rcv;
        return i;
    }

    // Delivers a segment from node B as if the IP layer had accepted it.
    void deliver(const std::vector<std::uint8_t>& seg) {
        GlobalBuffer tmp;
        std::vector<std::uint8_t> frame(ip::kPayloadOffset, 0);
        frame.insert(frame.end(), seg.begin(), seg.end());
        g.place(frame);
        tcp.handle(fixture::kAddrB, g.view(ip::kPayloadOffset, seg.size()));
    }

    TcpHeader last() const { return TcpHeader::decode(out.back()); }
};

std::vector<std::uint8_t> seg_from_b(std::uint16_t sport, std::uint16_t dport, std::uint32_t seq,
                                     std::uint32_t ack, std::uint8_t flags,
                                     std::span<const std::uint8_t> payload = {}, int mss = -1) {
    return oracle::tcp_segment(fixture::kAddrB, fixture::kAddrA, sport, dport, seq, ack, flags, 1460, mss,
                               payload);
}

}  // namespace

TEST(TcpInit, EmptyTable) {
    Solo s;
    EXPECT_EQ(s.tcp.active_count(), 0u);
    EXPECT_EQ(s.tcp.free_slots(), 4u);
}

TEST(TcpInit, SameSeedSameIssSequence) {
    auto run = [] {
        Solo s({}, 42);
        std::vector<std::uint32_t> v;
        for (int k = 0; k < 4; ++k) {
            v.push_back(s.tcp.tcb(s.tcp.open_connect(fixture::kAddrB, 80)).iss);
        }
        return v;
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(a[1] - a[0], tcp::kIssIncrement);
}

TEST(TcpInit, FifthConnectionNoSlot) {
    Solo s;
    for (int k = 0; k < 4; ++k) {
        s.tcp.open_connect(fixture::kAddrB, 80);
    }
    try {
        s.tcp.open_connect(fixture::kAddrB, 80);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoSlot);
    }
}

TEST(TcpOpen, ListenTwiceAddrInUse) {
    Solo s;
    s.tcp.open_listen(80);
    try {
        s.tcp.open_listen(80);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::AddrInUse);
    }
    EXPECT_EQ(s.tcp.active_count(), 1u);
}

TEST(TcpOpen, ConnectEmitsSyn) {
    Solo s;
    const auto i = s.tcp.open_connect(fixture::kAddrB, 80);
    const auto h = s.last();
    EXPECT_EQ(h.flags, tcp::kSyn);
    EXPECT_EQ(h.ack, 0u);
    EXPECT_EQ(h.seq, s.tcp.tcb(i).iss);
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::SynSent);
    EXPECT_EQ(h.mss, std::optional<std::uint16_t>(1460));
}

TEST(TcpOpen, SynBytesMatchReferenceEncoder) {
    fixture::Pair p;
    const auto i = p.a.tcp().open_connect(fixture::kAddrB, 80);
    const auto& f = p.link.capture().at(0).frame;
    const std::vector<std::uint8_t> seg(f.begin() + ip::kPayloadOffset, f.end());
    const auto& t = p.a.tcp().tcb(i);
    EXPECT_EQ(seg, oracle::tcp_segment(fixture::kAddrA, fixture::kAddrB, t.local_port, 80, t.iss, 0, tcp::kSyn,
                                       1460, 1460));
    // Frozen from the reference encoder for seed 11.
    const std::vector<std::uint8_t> frozen = {0xc0, 0x00, 0x00, 0x50, 0x27, 0x8d, 0xc3, 0xf3, 0x00, 0x00, 0x00, 0x00,
                                              0x60, 0x02, 0x05, 0xb4, 0xd2, 0x9e, 0x00, 0x00, 0x02, 0x04, 0x05, 0xb4};
    EXPECT_EQ(seg, frozen);
}

TEST(TcpOpen, ConnectWithoutNeighborNoRoute) {
    fixture::Pair p;
    try {
        p.a.tcp().open_connect(make_ipv4(10, 9, 9, 9), 80);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoRoute);
    }
    EXPECT_EQ(p.a.tcp().free_slots(), 4u);
}

TEST(TcpHandler, ListenSynGetsSynAck) {
    Solo s;
    const auto i = s.tcp.open_listen(80);
    s.deliver(seg_from_b(5555, 80, 1000, 0, tcp::kSyn, {}, 1460));
    const auto h = s.last();
    EXPECT_EQ(h.flags, tcp::kSyn | tcp::kAck);
    EXPECT_EQ(h.ack, 1001u);
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::SynRcvd);
    s.deliver(seg_from_b(5555, 80, 1001, h.seq + 1, tcp::kAck));
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::Established);
    EXPECT_TRUE(s.tcp.tcb(i).mailbox.has(TcpEvent::Connected));
}

TEST(TcpHandler, PeerWithoutMssOptionGets536) {
    Solo s;
    const auto i = s.tcp.open_listen(80);
    s.deliver(seg_from_b(5555, 80, 1000, 0, tcp::kSyn));
    EXPECT_EQ(s.tcp.tcb(i).mss, 536);
}

TEST(TcpHandler, RstInEstablishedAborts) {
    Solo s;
    const auto i = s.established();
    s.deliver(seg_from_b(80, 1234, 777, 0, tcp::kRst));
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::Closed);
    EXPECT_TRUE(s.tcp.tcb(i).mailbox.has(TcpEvent::Aborted));
}

TEST(TcpHandler, RstWithBadSeqIgnored) {
    Solo s;
    const auto i = s.established();
    s.deliver(seg_from_b(80, 1234, 9999, 0, tcp::kRst));
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::Established);
}

TEST(TcpHandler, DataArrivedThenAckAfterConsume) {
    Solo s;
    const auto i = s.established();
    const std::vector<std::uint8_t> abc = {'a', 'b', 'c'};
    s.deliver(seg_from_b(80, 1234, 777, 5000, tcp::kAck | tcp::kPsh, abc));
    const Tcb& t = s.tcp.tcb(i);
    ASSERT_TRUE(t.mailbox.has(TcpEvent::DataArrived));
    EXPECT_EQ(t.mailbox.data_len, 3u);
    EXPECT_TRUE(t.mailbox.data.valid());
    EXPECT_EQ(t.rcv_nxt, 777u);  // not yet consumed
    s.tcp.flush_acks();
    EXPECT_TRUE(s.out.empty());
    auto v = s.tcp.consume(i);
    ASSERT_TRUE(v);
    auto bytes = v->bytes();
    EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.end()), abc);
    s.tcp.flush_acks();
    ASSERT_EQ(s.out.size(), 1u);
    EXPECT_EQ(s.last().ack, 780u);
    EXPECT_EQ(s.last().flags, tcp::kAck);
}

TEST(TcpHandler, IgnoredDataGoesStale) {
    Solo s;
    const auto i = s.established();
    s.deliver(seg_from_b(80, 1234, 777, 5000, tcp::kAck, std::vector<std::uint8_t>{1, 2, 3}));
    const EpochView view = s.tcp.tcb(i).mailbox.data;
    s.deliver(seg_from_b(80, 1234, 777, 5000, tcp::kAck));  // next frame overwrites the buffer
    EXPECT_FALSE(view.valid());
    EXPECT_THROW((void)view.bytes(), Error);
    EXPECT_EQ(s.g.epoch_violations(), 1u);
    EXPECT_FALSE(s.tcp.consume(i));  // discarded unacknowledged
    EXPECT_EQ(s.tcp.stats().stale_discards, 1u);
    EXPECT_EQ(s.tcp.tcb(i).rcv_nxt, 777u);
}

TEST(TcpHandler, FinMovesToCloseWait) {
    Solo s;
    const auto i = s.established();
    s.deliver(seg_from_b(80, 1234, 777, 5000, tcp::kAck | tcp::kFin));
    EXPECT_EQ(s.tcp.tcb(i).state, TcpState::CloseWait);
    EXPECT_TRUE(s.tcp.tcb(i).mailbox.has(TcpEvent::RemoteClosed));
    s.tcp.flush_acks();
    EXPECT_EQ(s.last().ack, 778u);
}

TEST(TcpHandler, AckOfInFlightDataRaisesAckedSent) {
    Solo s;
    const auto i = s.established();
    s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(10, 1));
    EXPECT_TRUE(s.tcp.tcb(i).rtx_timer.armed());
    s.deliver(seg_from_b(80, 1234, 777, 5010, tcp::kAck));
    const Tcb& t = s.tcp.tcb(i);
    EXPECT_EQ(t.snd_una, 5010u);
    EXPECT_FALSE(t.rtx_timer.armed());
    EXPECT_TRUE(t.mailbox.has(TcpEvent::AckedSent));
    EXPECT_EQ(s.pool.outstanding(), 0u);
}

TEST(TcpHandler, ClosedPortGetsExactlyOneRst) {
    Solo s;
    s.deliver(seg_from_b(5555, 9, 1000, 0, tcp::kSyn));
    ASSERT_EQ(s.out.size(), 1u);
    const auto h = s.last();
    EXPECT_EQ(h.flags, tcp::kRst | tcp::kAck);
    EXPECT_EQ(h.ack, 1001u);
    EXPECT_EQ(s.tcp.active_count(), 0u);
    s.deliver(seg_from_b(5555, 9, 1000, 0, tcp::kRst));
    EXPECT_EQ(s.out.size(), 1u);  // no RST for a RST
}

TEST(TcpHandler, BadChecksumDropped) {
    Solo s;
    s.tcp.open_listen(80);
    auto seg = seg_from_b(5555, 80, 1000, 0, tcp::kSyn);
    seg[4] ^= 0x80;
    s.deliver(seg);
    EXPECT_TRUE(s.out.empty());
    EXPECT_EQ(s.tcp.stats().drop_count(TcpDrop::BadChecksum), 1u);
}

TEST(TcpTx, SequenceArithmetic) {
    Solo s;
    const auto i = s.established();
    s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(10, 7));
    EXPECT_EQ(s.last().seq, 5000u);
    EXPECT_EQ(s.tcp.tcb(i).snd_nxt, 5010u);
    EXPECT_TRUE(tcp_checksum_verifies(s.out.back(), fixture::kAddrA, fixture::kAddrB));
}

TEST(TcpTx, SecondSendWouldBlock) {
    Solo s;
    const auto i = s.established();
    s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(4, 1));
    try {
        s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(4, 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::WouldBlock);
    }
    EXPECT_EQ(s.tcp.stats().stop_and_wait_checks, 2u);
    EXPECT_EQ(s.tcp.stats().stop_and_wait_violations, 0u);
}

TEST(TcpTx, FinConsumesOne) {
    Solo s;
    const auto i = s.established();
    s.tcp.tx(i, tcp::kFin, {});
    EXPECT_EQ(s.tcp.tcb(i).snd_nxt, 5001u);
}

TEST(TcpTx, OversizeAndNotConnected) {
    Solo s;
    const auto i = s.established();
    try {
        s.tcp.tx(i, 0, std::vector<std::uint8_t>(1461, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SizeError);
    }
    const auto l = s.tcp.open_listen(80);
    EXPECT_THROW(s.tcp.tx(l, 0, std::vector<std::uint8_t>(1, 0)), Error);
}

TEST(TcpPutch, FlushSendsOneByte) {
    Solo s;
    const auto i = s.established();
    s.tcp.putch(i, 'a');
    EXPECT_TRUE(s.out.empty());
    s.tcp.flush(i);
    ASSERT_EQ(s.out.size(), 1u);
    EXPECT_EQ(s.out.back().size(), 21u);
    EXPECT_EQ(s.out.back()[20], 0x61);
}

TEST(TcpPutch, FlushOnFull) {
    Solo s;
    const auto i = s.established();
    s.tcp.tcb(i).mss = 4;
    for (char c : std::string("abcde")) {
        s.tcp.putch(i, static_cast<std::uint8_t>(c));
    }
    ASSERT_EQ(s.out.size(), 1u);
    EXPECT_EQ(s.out.back().size(), 24u);
    EXPECT_EQ(s.tcp.tcb(i).line_len, 1u);
}

TEST(TcpPutch, ListenIsNotConnected) {
    Solo s;
    const auto i = s.tcp.open_listen(80);
    try {
        s.tcp.putch(i, 'x');
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NotConnected);
    }
}

TEST(TcpMailbox, RepeatedEventCountsOverrun) {
    Solo s;
    const auto i = s.established();
    s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(1, 1));
    s.deliver(seg_from_b(80, 1234, 777, 5001, tcp::kAck));
    s.tcp.tx(i, tcp::kPsh, std::vector<std::uint8_t>(1, 1));
    s.deliver(seg_from_b(80, 1234, 777, 5002, tcp::kAck));  // first AckedSent never taken
    EXPECT_EQ(s.tcp.stats().mailbox_overruns, 1u);
}

TEST(TcpHandshake, ThreeSegmentsOverLosslessLink) {
    fixture::Pair p;
    const auto l = p.b.tcp().open_listen(80);
    const auto c = p.a.tcp().open_connect(fixture::kAddrB, 80);
    ASSERT_TRUE(p.run_until([&] {
        return p.a.tcp().tcb(c).state == TcpState::Established && p.b.tcp().tcb(l).state == TcpState::Established;
    }));
    ASSERT_EQ(p.link.capture().size(), 3u);
    EXPECT_EQ(p.tcp_at(0).flags, tcp::kSyn);
    EXPECT_EQ(p.tcp_at(1).flags, tcp::kSyn | tcp::kAck);
    EXPECT_EQ(p.tcp_at(2).flags, tcp::kAck);
    EXPECT_EQ(p.tcp_at(1).ack, p.tcp_at(0).seq + 1);
    EXPECT_EQ(p.tcp_at(2).ack, p.tcp_at(1).seq + 1);
}

TEST(TcpTimer, LostSynRetransmittedWithSameSeq) {
    fixture::Pair p;
    p.link.drop_ordinals = {0};
    const auto l = p.b.tcp().open_listen(80);
    const auto c = p.a.tcp().open_connect(fixture::kAddrB, 80);
    ASSERT_TRUE(p.run_until([&] {
        return p.a.tcp().tcb(c).state == TcpState::Established && p.b.tcp().tcb(l).state == TcpState::Established;
    }));
    const auto& cap = p.link.capture();
    ASSERT_EQ(cap.size(), 4u);
    EXPECT_EQ(p.tcp_at(0).flags, tcp::kSyn);
    EXPECT_EQ(p.tcp_at(1).flags, tcp::kSyn);
    EXPECT_EQ(p.tcp_at(0).seq, p.tcp_at(1).seq);
    EXPECT_EQ(cap[0].frame.size(), cap[1].frame.size());
    EXPECT_EQ(cap[1].tick - cap[0].tick, 10u);
}

TEST(TcpTimer, BackoffScheduleAndTimeout) {
    fixture::Pair p;
    p.link.drop_filter = [](std::uint64_t, int port, std::span<const std::uint8_t> f) {
        return port == 0 && f.size() > ip::kPayloadOffset + 24;  // every data segment from A
    };
    const auto l = p.b.tcp().open_listen(80);
    const auto c = p.a.tcp().open_connect(fixture::kAddrB, 80);
    ASSERT_TRUE(p.run_until([&] { return p.a.tcp().tcb(c).state == TcpState::Established; }));
    (void)l;
    const std::vector<std::uint8_t> data(100, 0xAA);
    p.a.tcp().tx(c, tcp::kPsh, data);
    ASSERT_TRUE(p.run_until([&] { return p.a.tcp().tcb(c).state == TcpState::Closed; }, 1000));
    EXPECT_TRUE(p.a.tcp().tcb(c).mailbox.has(TcpEvent::TimedOut));

    std::vector<Tick> ticks;
    std::vector<std::vector<std::uint8_t>> copies;
    for (const auto& w : p.link.capture()) {
        if (w.from_port == 0 && w.frame.size() == ip::kPayloadOffset + 20 + data.size()) {
            ticks.push_back(w.tick);
            copies.push_back(w.frame);
        }
    }
    ASSERT_EQ(ticks.size(), 5u);  // original + 4 retries
    std::vector<Tick> gaps;
    for (std::size_t k = 1; k < ticks.size(); ++k) {
        gaps.push_back(ticks[k] - ticks[k - 1]);
    }
    EXPECT_EQ(gaps, (std::vector<Tick>{10, 20, 40, 80}));
    // Retransmissions are byte-identical apart from the IP identification
    // and header checksum, which belong to the IP layer.
    for (auto& f : copies) {
        std::vector<std::uint8_t> tcp_part(f.begin() + ip::kPayloadOffset, f.end());
        std::vector<std::uint8_t> first(copies[0].begin() + ip::kPayloadOffset, copies[0].end());
        EXPECT_EQ(tcp_part, first);
    }
    EXPECT_EQ(p.a.tcp().stats().retransmissions, 4u);
}

TEST(TcpTimer, AckOwedDuringRetransmissionWaitsOneTick) {
    Solo s;
    const auto i = s.established();
    const std::vector<std::uint8_t> x = {'x'};
    s.tcp.tx(i, tcp::kPsh, x);
    const auto original = s.out.back();
    const std::vector<std::uint8_t> abc = {'a', 'b', 'c'};
    s.deliver(seg_from_b(80, 1234, 777, 5000, tcp::kAck | tcp::kPsh, abc));
    s.tcp.consume(i);
    s.clock.advance(10);
    s.out.clear();
    s.tcp.timer();
    s.tcp.flush_acks();
    ASSERT_EQ(s.out.size(), 1u);
    EXPECT_EQ(s.out.back(), original);  // byte-identical, old ack included
    s.clock.advance();
    s.tcp.timer();
    s.tcp.flush_acks();
    ASSERT_EQ(s.out.size(), 2u);
    EXPECT_EQ(s.last().flags, tcp::kAck);
    EXPECT_EQ(s.last().ack, 780u);
}

TEST(TcpTimer, TimeWaitExpiresAfter120) {
    fixture::Pair p;
    const auto l = p.b.tcp().open_listen(80);
    const auto c = p.a.tcp().open_connect(fixture::kAddrB, 80);
    ASSERT_TRUE(p.run_until([&] { return p.b.tcp().tcb(l).state == TcpState::Established; }));
    p.a.tcp().close(c);
    ASSERT_TRUE(p.run_until([&] { return p.b.tcp().tcb(l).state == TcpState::CloseWait; }));
    p.b.tcp().close(l);
    ASSERT_TRUE(p.run_until([&] { return p.a.tcp().tcb(c).state == TcpState::TimeWait; }));
    const Tick entered = p.clock.now();
    ASSERT_TRUE(p.run_until([&] { return p.a.tcp().tcb(c).state == TcpState::Closed; }, 500));
    EXPECT_GE(p.clock.now() - entered, 119u);
    EXPECT_LE(p.clock.now() - entered, 121u);
    EXPECT_EQ(p.b.tcp().tcb(l).state, TcpState::Closed);
}

TEST(TcpFuzz, RandomSegmentsNeverEstablishListener) {
    std::mt19937_64 rng(31);
    Solo s;
    const auto l = s.tcp.open_listen(80);
    for (int k = 0; k < 10000; ++k) {
        const std::uint8_t flags = static_cast<std::uint8_t>(rng() & 0x3F);
        const auto payload = oracle::random_bytes(rng, rng() % 40);
        auto seg = seg_from_b(static_cast<std::uint16_t>(rng()), (rng() % 2) ? 80 : static_cast<std::uint16_t>(rng()),
                              static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng()), flags, payload);
        s.deliver(seg);
        s.tcp.timer();
        s.tcp.flush_acks();
        for (std::size_t i = 0; i < TcpLayer::capacity(); ++i) {
            ASSERT_NE(s.tcp.tcb(i).state, TcpState::Established);
        }
        if (s.tcp.tcb(l).state == TcpState::SynRcvd && rng() % 8 == 0) {
            s.clock.advance(1000);  // let the half-open connection time out
        }
        ASSERT_EQ(s.pool.free_count() + s.pool.outstanding(), s.pool.block_count());
    }
}

TEST(TcpFuzz, HandlerTotalOnGarbage) {
    std::mt19937_64 rng(32);
    Solo s;
    s.tcp.open_listen(80);
    s.established();
    for (int k = 0; k < 10000; ++k) {
        const auto seg = oracle::random_bytes(rng, rng() % 80);
        EXPECT_NO_THROW(s.deliver(seg));
    }
}

TEST(TcpState, Names) {
    EXPECT_EQ(to_string(TcpState::TimeWait), "TimeWait");
    EXPECT_TRUE(tcp::seq_lt(0xFFFFFFF0u, 5u));
    EXPECT_TRUE(tcp::seq_gt(5u, 0xFFFFFFF0u));
}
