#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include "pwrdist/netproto.hpp"
#include "support.hpp"

using namespace pwrdist;
using namespace pwrdist::net;
using pwrdist::testing::data_path;

namespace {

std::vector<Milliwatts> idle(int n) { return std::vector<Milliwatts>(n, 1000); }

PowerDistributor three_node_engine() {
  return PowerDistributor(12000, 3, BudgetMode::Reported, idle(3));
}

Message random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> u32;
  switch (rng() % 4) {
    case 0: return ReportMessage::running(u32(rng));
    case 1: {
      std::vector<NodeId> blockers(rng() % 9);
      for (NodeId& b : blockers) b = u32(rng);
      return ReportMessage::blocked(u32(rng), blockers, u32(rng));
    }
    case 2: return DistributeMessage{u32(rng), u32(rng)};
    default: return PingMessage{rng() % 2 == 0, u32(rng), u32(rng)};
  }
}

// Feeds scheduled reports into a fresh engine and concatenates its replies.
std::vector<DistributeMessage> in_process(const std::vector<ScheduledReport>& plan) {
  PowerDistributor pd = three_node_engine();
  std::vector<DistributeMessage> out;
  for (const auto& s : plan)
    for (const auto& d : pd.process_message(s.report)) out.push_back(d);
  return out;
}

}  // namespace

TEST_CASE("report layout") {
  Bytes b = encode(ReportMessage::blocked(2, {1}, 3000));
  REQUIRE(b.size() == 18);
  const Bytes expected{'P', 'D', 1, 1, 0, 0, 0, 2, 1, 0, 0, 0x0b, 0xb8, 1, 0, 0, 0, 1};
  CHECK(b == expected);
  CHECK(encode(ReportMessage::running(2)).size() == 14);
  CHECK(report_size(3) == 26);

  Bytes d = encode(DistributeMessage{3, 7000});
  CHECK(d == Bytes{'P', 'D', 1, 2, 0, 0, 0, 3, 0, 0, 0x1b, 0x58});
  Bytes p = encode(PingMessage{true, 1, 9});
  CHECK(p == Bytes{'P', 'D', 1, 4, 0, 0, 0, 1, 0, 0, 0, 9});
}

TEST_CASE("encode rejects values that do not fit") {
  CHECK_THROWS_AS(encode(ReportMessage::blocked(1, std::vector<NodeId>(256, 2), 0)),
                  std::invalid_argument);
  CHECK_NOTHROW(encode(ReportMessage::blocked(1, std::vector<NodeId>(255, 2), 0)));
  CHECK_THROWS_AS(encode(ReportMessage::blocked(1, {2}, -1)), std::invalid_argument);
  CHECK_THROWS_AS(encode(DistributeMessage{1, Milliwatts{1} << 32}), std::invalid_argument);
}

TEST_CASE("round trip over random messages") {
  std::mt19937_64 rng(77);
  for (int k = 0; k < 20000; ++k) {
    Message m = random_message(rng);
    CHECK(decode(encode(m)) == m);
  }
}

TEST_CASE("decode rejects malformed datagrams") {
  const Bytes good = encode(ReportMessage::blocked(2, {1, 3}, 3000));
  auto rejects = [](Bytes b) { CHECK_THROWS_AS(decode(b), MalformedDatagram); };

  Bytes bad_magic = good;
  bad_magic[0] = 'X';
  rejects(bad_magic);
  Bytes bad_version = good;
  bad_version[2] = 2;
  rejects(bad_version);
  Bytes bad_type = good;
  bad_type[3] = 9;
  rejects(bad_type);
  rejects(Bytes(good.begin(), good.end() - 1));
  rejects(Bytes(good.begin(), good.begin() + 3));
  Bytes extra = good;
  extra.push_back(0);
  rejects(extra);
  Bytes bad_state = good;
  bad_state[8] = 2;
  rejects(bad_state);
  rejects(Bytes{});
  rejects(Bytes(kMaxDatagram + 1, 0));

  // Running with a gain or blockers breaks the state invariant.
  Bytes running = encode(ReportMessage::running(2));
  running[12] = 1;
  rejects(running);
  Bytes dist = encode(DistributeMessage{1, 4000});
  dist.pop_back();
  rejects(dist);
}

TEST_CASE("decode never fails other than by MalformedDatagram") {
  std::mt19937_64 rng(5150);
  std::uniform_int_distribution<int> byte(0, 255);
  int accepted = 0;
  for (int k = 0; k < 20000; ++k) {
    Bytes b;
    if (k % 2 == 0) {
      b.resize(rng() % 40);
      for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
    } else {
      // Valid encoding with a few flipped bytes, so the header usually survives.
      b = encode(random_message(rng));
      for (int flips = 1 + rng() % 3; flips > 0; --flips)
        b[rng() % b.size()] = static_cast<std::uint8_t>(byte(rng));
    }
    try {
      Message m = decode(b);
      CHECK(encode(m) == b);
      ++accepted;
    } catch (const MalformedDatagram&) {
    }
  }
  CHECK(accepted > 0);
}

TEST_CASE("power to frequency") {
  PowerTable t = testing::ladder_table({500, 1000}, {2000, 4000});
  CHECK(power_to_frequency(t, 1, 4000) == 1000);
  CHECK(power_to_frequency(t, 1, 3999) == 500);
  CHECK(power_to_frequency(t, 1, 2000) == 500);
  CHECK_THROWS_AS(power_to_frequency(t, 1, 1999), InfeasibleError);
}

TEST_CASE("report manager examples") {
  SUBCASE("a block and unblock inside the window cancel") {
    ReportManagerBuffer buf(1.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    buf.enqueue(ReportMessage::running(1), 0.5);
    CHECK(buf.flush(10.0).empty());
    CHECK(buf.cancelled() == 2);
    CHECK(buf.pending() == 0);
  }
  SUBCASE("a lone block is released once the timeout passes") {
    ReportManagerBuffer buf(1.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    CHECK(buf.flush(0.999).empty());
    auto out = buf.flush(1.0);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == ReportMessage::blocked(1, {2}, 100));
  }
  SUBCASE("block, unblock, block keeps only the last block") {
    ReportManagerBuffer buf(1.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    buf.enqueue(ReportMessage::running(1), 0.2);
    buf.enqueue(ReportMessage::blocked(1, {3}, 100), 0.4);
    auto out = buf.flush(5.0);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == ReportMessage::blocked(1, {3}, 100));
  }
  SUBCASE("other nodes do not interfere") {
    ReportManagerBuffer buf(1.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    buf.enqueue(ReportMessage::blocked(3, {2}, 100), 0.1);
    buf.enqueue(ReportMessage::running(1), 0.2);
    auto out = buf.flush(5.0);
    REQUIRE(out.size() == 1);
    CHECK(out[0].node == 3);
  }
  SUBCASE("an unblock after the window does not cancel") {
    ReportManagerBuffer buf(1.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    buf.enqueue(ReportMessage::running(1), 1.0);
    CHECK(buf.flush(5.0).size() == 2);
  }
  SUBCASE("zero timeout releases immediately") {
    ReportManagerBuffer buf(0.0);
    buf.enqueue(ReportMessage::blocked(1, {2}, 100), 0.0);
    CHECK(buf.flush(0.0).size() == 1);
  }
}

TEST_CASE("report manager conservation") {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 300; ++trial) {
    ReportManagerBuffer buf(0.1 + static_cast<double>(rng() % 10) / 10.0);
    std::vector<bool> blocked(4, false);
    std::size_t enqueued = 0, released = 0;
    double now = 0.0;
    for (int k = 0; k < 40; ++k) {
      now += static_cast<double>(rng() % 5) / 10.0;
      const NodeId node = 1 + rng() % 3;
      if (blocked[node])
        buf.enqueue(ReportMessage::running(node), now);
      else
        buf.enqueue(ReportMessage::blocked(node, {node % 3 + 1}, 10), now);
      blocked[node] = !blocked[node];
      ++enqueued;
      if (rng() % 3 == 0) released += buf.flush(now).size();
    }
    released += buf.flush(now + 100.0).size();
    CHECK(buf.pending() == 0);
    CHECK(buf.emitted() == released);
    CHECK(buf.cancelled() % 2 == 0);
    CHECK(released + buf.cancelled() == enqueued);
  }
}

TEST_CASE("trace parsing") {
  auto rows = load_trace(data_path("three_step.trace"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].report == ReportMessage::blocked(2, {1}, 3000));
  CHECK(rows[1].time == 1.0);
  CHECK(rows[2].report == ReportMessage::running(2));

  const std::string header = "time_s,node,state,blockers,gain_mw\n";
  CHECK(parse_trace(header).empty());
  CHECK(parse_trace(header + "0,1,1,2;3,5\n")[0].report == ReportMessage::blocked(1, {2, 3}, 5));
  CHECK_THROWS_AS(parse_trace("node,time\n"), ParseError);
  CHECK_THROWS_AS(parse_trace(header + "0,1,Sleeping,,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace(header + "1,1,Blocked,2,0\n0,1,Running,,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace(header + "0,1,Running,2,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace(header + "0,x,Running,,0\n"), ParseError);
  try {
    parse_trace(header + "0,1,Running,,0\nbad\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
}

TEST_CASE("replay plans") {
  auto trace = load_trace(data_path("three_step.trace"));
  SUBCASE("short timeout keeps every row") {
    auto plan = plan_replay(trace, 0.25);
    REQUIRE(plan.size() == 3);
    CHECK(plan[0].time == 0.25);
    CHECK(plan[2].time == 2.25);
    CHECK(in_process(plan) == std::vector<DistributeMessage>{{1, 7000}, {1, 10000}, {1, 7000}});
  }
  SUBCASE("empty trace sends nothing") { CHECK(plan_replay({}, 1.0).empty()); }
  SUBCASE("churn below the timeout is cancelled") {
    const std::string header = "time_s,node,state,blockers,gain_mw\n";
    auto churn = parse_trace(header +
                             "0,2,Blocked,1,3000\n0.1,2,Running,,0\n"
                             "0.2,2,Blocked,1,3000\n0.3,2,Running,,0\n"
                             "0.4,3,Blocked,1,3000\n");
    auto plan = plan_replay(churn, 0.5);
    CHECK(plan.size() < churn.size());
    REQUIRE(plan.size() == 1);
    CHECK(plan[0].report.node == 3);
  }
}

TEST_CASE("an unblock exactly at the round trip gains nothing") {
  const double rtt = 0.5;
  const std::string header = "time_s,node,state,blockers,gain_mw\n";
  auto trace = parse_trace(header + "0,2,Blocked,1,3000\n0.5,2,Running,,0\n");
  auto plan = plan_replay(trace, rtt);
  // Not inside the window, so both reports go out.
  REQUIRE(plan.size() == 2);
  // The boost for node 1 leaves no earlier than the unblock, so it never
  // overlaps the block it was meant to cover.
  CHECK(plan[0].time >= trace[1].time);

  PowerDistributor pd = three_node_engine();
  std::map<NodeId, Milliwatts> bounds;
  for (const auto& s : plan)
    for (const auto& d : pd.process_message(s.report)) bounds[d.node] = d.bound;
  for (const auto& [node, bound] : bounds) CHECK(bound == pd.nominal_bound());
}

TEST_CASE("controller core") {
  ControllerCore core(three_node_engine());

  SUBCASE("first contact registers the sender") {
    core.handle(encode(ReportMessage::running(1)), "10.0.0.1:1");
    auto out = core.handle(encode(ReportMessage::blocked(2, {1}, 3000)), "10.0.0.2:2");
    REQUIRE(out.size() == 1);
    CHECK(out[0].address == "10.0.0.1:1");
    CHECK(decode(out[0].payload) == Message{DistributeMessage{1, 7000}});
    CHECK(core.address_of(2) == "10.0.0.2:2");
  }
  SUBCASE("a duplicate datagram produces no second burst") {
    core.handle(encode(ReportMessage::running(1)), "a:1");
    const Bytes b = encode(ReportMessage::blocked(2, {1}, 3000));
    CHECK(core.handle(b, "b:2").size() == 1);
    CHECK(core.handle(b, "b:2").empty());
    CHECK(core.accepted() == 3);
  }
  SUBCASE("out of range ids are dropped") {
    CHECK(core.handle(encode(ReportMessage::running(4)), "a:1").empty());
    CHECK(core.handle(encode(ReportMessage::running(0)), "a:1").empty());
    CHECK(core.handle(encode(ReportMessage::blocked(1, {7}, 0)), "a:1").empty());
    CHECK(core.handle(encode(PingMessage{false, 9, 1}), "a:1").empty());
    CHECK(core.dropped() == 4);
    CHECK(core.engine().vertices().empty());
  }
  SUBCASE("malformed and misdirected datagrams are dropped") {
    std::vector<std::string> lines;
    ControllerCore logged(three_node_engine(), [&](const std::string& l) { lines.push_back(l); });
    CHECK(logged.handle(Bytes{'x'}, "a:1").empty());
    CHECK(logged.handle(encode(DistributeMessage{1, 4000}), "a:1").empty());
    CHECK(logged.dropped() == 2);
    CHECK(lines.size() == 2);
  }
  SUBCASE("ping registers and echoes") {
    auto out = core.handle(encode(PingMessage{false, 2, 42}), "h:9");
    REQUIRE(out.size() == 1);
    CHECK(out[0].address == "h:9");
    CHECK(decode(out[0].payload) == Message{PingMessage{true, 2, 42}});
    CHECK(core.address_of(2) == "h:9");
  }
  SUBCASE("static map wins over first contact") {
    core.load_address_map("# cluster\n1 10.0.0.1:5000\n");
    core.handle(encode(ReportMessage::running(1)), "elsewhere:1");
    CHECK(core.address_of(1) == "10.0.0.1:5000");
    CHECK_THROWS_AS(core.load_address_map("5 h:1\n"), ParseError);
    CHECK_THROWS_AS(core.load_address_map("1\n"), ParseError);
  }
  SUBCASE("unknown addresses are skipped") {
    auto out = core.handle(encode(ReportMessage::blocked(2, {1}, 3000)), "b:2");
    CHECK(out.empty());
    CHECK(core.engine().vertices().at(1).bound == 7000);
  }
  SUBCASE("status") {
    core.handle(encode(ReportMessage::blocked(2, {1}, 3000)), "b:2");
    const std::string s = core.status();
    CHECK(s.find("accepted 1 dropped 0 sent 0") != std::string::npos);
    CHECK(s.find("address 2 b:2") != std::string::npos);
  }
}

TEST_CASE("address parsing") {
  CHECK(split_address("127.0.0.1:9400") == std::pair<std::string, std::uint16_t>{"127.0.0.1", 9400});
  CHECK_THROWS_AS(split_address("localhost"), std::invalid_argument);
  CHECK_THROWS_AS(split_address("h:70000"), std::invalid_argument);
}

TEST_CASE("UDP replay matches the in-process engine") {
  UdpController ctrl("127.0.0.1:0", ControllerCore(three_node_engine()));
  std::atomic<bool> stop{false};
  std::thread server([&] { ctrl.run(stop); });
  const std::string addr = ctrl.local_address();

  auto trace = load_trace(data_path("three_step.trace"));
  ReplayOptions opts;
  opts.timeout = 0.25;
  ReplayResult r;
  std::string error;
  try {
    r = replay_trace(trace, addr, opts);

    UdpSocket probe;
    CHECK(measure_rtt(probe, addr, 1, 3) > 0.0);
    // Oversized datagrams are dropped rather than truncated into something valid.
    Bytes big(kMaxDatagram + 16, 0);
    probe.send_to(addr, big);
    probe.send_to(addr, encode(PingMessage{false, 1, 77}));
    auto pong = probe.receive(std::chrono::milliseconds(2000));
    REQUIRE(pong.has_value());
    CHECK(decode(pong->payload) == Message{PingMessage{true, 1, 77}});
  } catch (const std::exception& e) {
    error = e.what();
  }
  stop = true;
  server.join();
  REQUIRE(error.empty());

  CHECK(r.trace_rows == 3);
  CHECK(r.sent.size() == 3);
  const auto expected = in_process(plan_replay(trace, 0.25));
  REQUIRE(r.distributes.size() == expected.size());
  for (std::size_t k = 0; k < expected.size(); ++k)
    CHECK(encode(r.distributes[k]) == encode(expected[k]));
  CHECK(ctrl.core().dropped() >= 1);
}

TEST_CASE("replay of an empty trace sends nothing") {
  ReplayResult r = replay_trace({}, "127.0.0.1:9");
  CHECK(r.sent.empty());
  CHECK(r.distributes.empty());
}
