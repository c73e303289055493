#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "evptam/events.hpp"

using namespace evptam;

namespace {

Event ev(double seconds, int x = 0, int y = 0, int p = 1) {
  return Event{seconds_to_ns(seconds), static_cast<std::uint16_t>(x),
               static_cast<std::uint16_t>(y), static_cast<std::int8_t>(p)};
}

E3ctConfig small_config() {
  E3ctConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  return cfg;
}

}  // namespace

TEST_CASE("fusion timestamps follow mid-exposure arithmetic") {
  const SyncSchedule s = compute_fusion_timestamps({10.000, 10.050}, 0.004);
  REQUIRE(s.t_f.size() == 2);
  CHECK(s.t_f[0] == doctest::Approx(10.002).epsilon(1e-12));
  CHECK(s.t_f[1] == doctest::Approx(10.052).epsilon(1e-12));
  REQUIRE(s.delta_t.size() == 1);
  CHECK(s.delta_t[0] == doctest::Approx(0.050).epsilon(1e-12));
}

TEST_CASE("zero exposure keeps the camera timestamps") {
  const SyncSchedule s = compute_fusion_timestamps({1.0, 1.1, 1.25}, 0.0);
  CHECK(s.t_f == std::vector<double>{1.0, 1.1, 1.25});
}

TEST_CASE("non-monotonic frame stamps are rejected") {
  CHECK_THROWS_AS(compute_fusion_timestamps({1.0, 1.0}, 0.004), NonMonotonicTimestamps);
  CHECK_THROWS_AS(compute_fusion_timestamps({2.0, 1.0}, 0.0), NonMonotonicTimestamps);
}

TEST_CASE("window slicing boundary semantics") {
  EventStream stream({ev(0.9), ev(1.1), ev(1.9), ev(2.1)});
  const EventVolume v = stream.slice(1.0, 2.0);
  REQUIRE(v.events.size() == 2);
  CHECK(v.events[0].t == seconds_to_ns(1.1));
  CHECK(v.events[1].t == seconds_to_ns(1.9));
}

TEST_CASE("an empty stream yields empty volumes") {
  EventStream stream({});
  const EventVolume v = stream.slice(1.0, 2.0);
  CHECK(v.events.empty());
  CHECK(stream.slice(2.0, 3.0).events.empty());
}

TEST_CASE("a finished source raises StreamExhausted") {
  EventStream stream({ev(0.5), ev(0.6)});
  CHECK_THROWS_AS(stream.slice(1.0, 2.0), StreamExhausted);
}

TEST_CASE("slicing a million random events matches the naive filter") {
  std::mt19937 gen(42);
  std::uniform_int_distribution<std::uint64_t> stamp(0, 3'000'000'000ull);
  std::vector<Event> events(1'000'000);
  for (auto& e : events) e = Event{stamp(gen), 0, 0, 1};

  EventStream stream(events);
  const EventVolume v = stream.slice(1.0, 2.0);

  std::vector<std::uint64_t> naive;
  for (const Event& e : events) {
    if (e.t >= seconds_to_ns(1.0) && e.t < seconds_to_ns(2.0)) naive.push_back(e.t);
  }
  std::sort(naive.begin(), naive.end());

  REQUIRE(v.events.size() == naive.size());
  bool all_equal = true;
  for (std::size_t i = 0; i < naive.size(); ++i) all_equal &= v.events[i].t == naive[i];
  CHECK(all_equal);
}

TEST_CASE("decay kernel peak and edge values") {
  const double alpha = 0.5, eta = 0.030;
  CHECK(decay_weight(eta / 2.0, alpha, eta) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(decay_weight(0.0, alpha, eta) == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
  CHECK(decay_weight(eta, alpha, eta) == doctest::Approx(std::exp(-4.5)).epsilon(1e-12));
  CHECK(std::exp(-4.5) == doctest::Approx(0.011109).epsilon(1e-4));
}

TEST_CASE("decay weights rise to the mid-span peak and fall after it") {
  const double alpha = 0.5, eta = 0.030;
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double w = decay_weight(eta / 2.0 * i / 100.0, alpha, eta);
    CHECK(w > prev);
    prev = w;
  }
  prev = 2.0;
  for (int i = 0; i <= 100; ++i) {
    const double w = decay_weight(eta / 2.0 + eta / 2.0 * i / 100.0, alpha, eta);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("trilinear vote apex and symmetry") {
  const double dt = 0.01;
  SUBCASE("event exactly at a channel center") {
    const auto w = trilinear_weights(1.5 * dt, dt);  // center of channel 1
    CHECK(w[0] == doctest::Approx(0.0));
    CHECK(w[1] == doctest::Approx(1.0));
    CHECK(w[2] == doctest::Approx(0.0));
  }
  SUBCASE("event midway between centers 0 and 1") {
    const auto w = trilinear_weights(1.0 * dt, dt);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
    CHECK(w[2] == doctest::Approx(0.0));
  }
}

TEST_CASE("trilinear vote touches at most two adjacent channels, sum <= 1") {
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> t(0.0, 3.0 * 0.01);
  for (int i = 0; i < 10'000; ++i) {
    const auto w = trilinear_weights(t(gen), 0.01);
    const double sum = w[0] + w[1] + w[2];
    CHECK(sum <= 1.0 + 1e-12);
    CHECK(w[0] >= 0.0);
    CHECK(w[1] >= 0.0);
    CHECK(w[2] >= 0.0);
    CHECK(!(w[0] > 0.0 && w[2] > 0.0));  // non-adjacent channels never share an event
  }
}

TEST_CASE("median filter matches the naive re-sort oracle") {
  std::mt19937 gen(11);
  std::uniform_real_distribution<float> val(0.f, 1.f);
  for (int radius : {1, 2}) {
    Grid g(14, 17);
    for (int y = 0; y < g.rows(); ++y) {
      for (int x = 0; x < g.cols(); ++x) g(y, x) = val(gen);
    }
    const Grid filtered = median_filter(g, radius);

    // naive oracle: gather the clamped window, sort, take the middle element
    for (int y = 0; y < g.rows(); ++y) {
      for (int x = 0; x < g.cols(); ++x) {
        std::vector<float> window;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = std::clamp<int>(y + dy, 0, static_cast<int>(g.rows()) - 1);
            const int xx = std::clamp<int>(x + dx, 0, static_cast<int>(g.cols()) - 1);
            window.push_back(g(yy, xx));
          }
        }
        std::sort(window.begin(), window.end());
        CHECK(filtered(y, x) == window[window.size() / 2]);
      }
    }
  }
}

TEST_CASE("post-processing removes salt noise and binarizes") {
  E3CT t = E3CT::zero(16, 16, 0.0);
  SUBCASE("all-zero tensor stays zero") {
    const E3CT out = postprocess(t, 1, 0.05);
    for (int c = 0; c < 3; ++c) CHECK((out.channels[c] == 0.f).all());
  }
  SUBCASE("single isolated hot pixel dies under radius 1") {
    t.channels[0](8, 8) = 1.0f;
    const E3CT out = postprocess(t, 1, 0.05);
    CHECK((out.channels[0] == 0.f).all());
  }
  SUBCASE("dense block survives and becomes binary") {
    for (int y = 4; y < 9; ++y) {
      for (int x = 4; x < 9; ++x) t.channels[1](y, x) = 0.4f;
    }
    const E3CT out = postprocess(t, 1, 0.05);
    CHECK(out.channels[1](6, 6) == 1.0f);
    CHECK(((out.channels[1] == 0.f) || (out.channels[1] == 1.f)).all());
  }
  SUBCASE("idempotent on separated dense blobs") {
    for (const auto [by, bx] : {std::pair{2, 3}, {2, 10}, {9, 3}, {9, 10}}) {
      for (int y = by; y < by + 4; ++y) {
        for (int x = bx; x < bx + 4; ++x) t.channels[2](y, x) = 0.6f;
      }
    }
    const E3CT once = postprocess(t, 1, 0.05);
    const E3CT twice = postprocess(once, 1, 0.05);
    for (int c = 0; c < 3; ++c) CHECK((once.channels[c] == twice.channels[c]).all());
  }
}

TEST_CASE("event file formats round-trip") {
  std::mt19937 gen(13);
  std::uniform_int_distribution<std::uint64_t> stamp(0, 1'000'000'000ull);
  std::uniform_int_distribution<int> coord(0, 639);
  std::vector<Event> events(5000);
  for (auto& e : events) {
    e = Event{stamp(gen), static_cast<std::uint16_t>(coord(gen)),
              static_cast<std::uint16_t>(coord(gen)),
              static_cast<std::int8_t>(coord(gen) % 2 == 0 ? 1 : -1)};
  }
  const auto dir = std::filesystem::temp_directory_path();

  const std::string bin = (dir / "events_test.bin").string();
  write_events_binary(events, bin);
  const auto back_bin = read_events_binary(bin);
  REQUIRE(back_bin.size() == events.size());
  bool ok = true;
  for (std::size_t i = 0; i < events.size(); ++i) {
    ok &= back_bin[i].t == events[i].t && back_bin[i].x == events[i].x &&
          back_bin[i].y == events[i].y && back_bin[i].polarity == events[i].polarity;
  }
  CHECK(ok);

  const std::string csv = (dir / "events_test.csv").string();
  write_events_csv(events, csv);
  const auto back_csv = read_events_csv(csv);
  REQUIRE(back_csv.size() == events.size());
  ok = true;
  for (std::size_t i = 0; i < events.size(); ++i) {
    ok &= back_csv[i].t == events[i].t && back_csv[i].polarity == events[i].polarity;
  }
  CHECK(ok);
}

TEST_CASE("full tensor construction") {
  std::mt19937 gen(17);
  std::uniform_int_distribution<std::uint64_t> stamp(0, 100'000'000ull);  // 0.1 s
  std::uniform_int_distribution<int> coord(0, 15);
  std::vector<Event> events(3000);
  for (auto& e : events) {
    e = Event{stamp(gen), static_cast<std::uint16_t>(coord(gen)),
              static_cast<std::uint16_t>(coord(gen)),
              static_cast<std::int8_t>(coord(gen) % 2 == 0 ? 1 : -1)};
  }
  const E3ctConfig cfg = small_config();
  const SyncSchedule schedule = compute_fusion_timestamps({0.0, 0.05, 0.1}, 0.0);

  SUBCASE("identical left/right streams give bitwise-identical tensors") {
    EventStream left(events), right(events);
    const auto tensors = build_e3ct(left, right, schedule, cfg);
    REQUIRE(tensors.size() == 3);
    for (const auto& pair : tensors) {
      for (int c = 0; c < 3; ++c) {
        CHECK((pair[0].channels[c] == pair[1].channels[c]).all());
      }
    }
  }

  SUBCASE("three runs are bitwise identical") {
    std::vector<std::vector<std::array<E3CT, 2>>> runs;
    for (int run = 0; run < 3; ++run) {
      EventStream left(events), right(events);
      runs.push_back(build_e3ct(left, right, schedule, cfg));
    }
    for (int run = 1; run < 3; ++run) {
      for (std::size_t k = 0; k < runs[0].size(); ++k) {
        for (int s = 0; s < 2; ++s) {
          for (int c = 0; c < 3; ++c) {
            CHECK((runs[run][k][s].channels[c] == runs[0][k][s].channels[c]).all());
          }
        }
      }
    }
  }

  SUBCASE("a window with zero events produces a zero tensor and continues") {
    const std::vector<Event> sparse{ev(0.001, 3, 3), ev(0.2, 4, 4)};
    EventStream left(sparse), right(sparse);
    const auto tensors = build_e3ct(left, right, schedule, cfg);
    REQUIRE(tensors.size() == 3);
    for (int c = 0; c < 3; ++c) CHECK((tensors[2][0].channels[c] == 0.f).all());
  }

  SUBCASE("a source that ends early propagates StreamExhausted") {
    EventStream left({ev(0.001, 3, 3)}), right({ev(0.001, 3, 3)});
    CHECK_THROWS_AS(build_e3ct(left, right, schedule, cfg), StreamExhausted);
  }

  SUBCASE("tensors are invariant under polarity flip") {
    std::vector<Event> flipped = events;
    for (auto& e : flipped) e.polarity = static_cast<std::int8_t>(-e.polarity);
    EventStream a(events), b(flipped);
    const EventVolume va = a.slice(0.0, 0.05);
    const EventVolume vb = b.slice(0.0, 0.05);
    const E3CT ta = build_tensor(va, cfg, 0.05);
    const E3CT tb = build_tensor(vb, cfg, 0.05);
    for (int c = 0; c < 3; ++c) CHECK((ta.channels[c] == tb.channels[c]).all());
  }

  SUBCASE("accumulation is linear over disjoint event sets (pre-postprocess)") {
    std::vector<Event> a_events, b_events;
    for (std::size_t i = 0; i < events.size(); ++i) {
      (i % 2 == 0 ? a_events : b_events).push_back(events[i]);
    }
    auto raw_tensor = [&](const std::vector<Event>& evs) {
      EventStream s(evs);
      EventVolume v = s.slice(0.0, 0.1);
      v.window_end = seconds_to_ns(0.1);
      const auto weights = decay_kernel(v, cfg.alpha, cfg.eta);
      return trilinear_vote(v, weights, 0.1 / 3.0, cfg.height, cfg.width, 0.1);
    };
    const E3CT whole = raw_tensor(events);
    const E3CT part_a = raw_tensor(a_events);
    const E3CT part_b = raw_tensor(b_events);
    for (int c = 0; c < 3; ++c) {
      const Grid sum = part_a.channels[c] + part_b.channels[c];
      CHECK(((whole.channels[c] - sum).abs() < 1e-5f).all());
    }
  }

  SUBCASE("halving the window width never increases per-window event counts") {
    EventStream wide(events);
    EventStream narrow(events);
    const std::size_t wide_count = wide.slice(0.0, 0.05).events.size();
    const std::size_t narrow_count = narrow.slice(0.025, 0.05).events.size();
    CHECK(narrow_count <= wide_count);
  }
}
