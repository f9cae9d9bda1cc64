#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtap/data.hpp"
#include "mtap/serial.hpp"

using namespace mtap;

namespace {

// Degenerate closed polyline along the x axis: out and back over y = 0.
Track straight_track() {
  Track t;
  t.points = {{-5.0, 0.0}, {5.0, 0.0}};
  return t;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("config validation rejects broken geometry") {
  SimConfig ok;
  CHECK_NOTHROW(ok.validate());

  SimConfig c = ok;
  c.cruise_speed = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = ok;
  c.cruise_speed = c.max_wheel_speed + 0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = ok;
  c.sensor_far = c.sensor_near;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = ok;
  c.noise_sigma = -0.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = ok;
  c.frame_height = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("stock tracks exist and unknown names are rejected") {
  CHECK(make_track("loop").points.size() > 3);
  CHECK(make_track("s-curve").points.size() > 3);
  CHECK_THROWS_AS(make_track("figure-eight"), std::invalid_argument);
}

TEST_CASE("track distance and nearest agree on a simple segment") {
  Track t = straight_track();
  CHECK(t.distance(0.0, 2.0) == doctest::Approx(2.0));
  auto n = t.nearest(0.3, -1.0);
  CHECK(n[0] == doctest::Approx(0.3));
  CHECK(n[1] == doctest::Approx(0.0));
}

TEST_CASE("a robot centered on a straight line sees a symmetric frame") {
  SimConfig cfg;
  Track t = straight_track();
  RobotPose pose;  // origin, heading +x, line directly underneath

  double off = 1.0;
  CHECK(line_offset(t, cfg, pose, &off));
  CHECK(off == 0.0);

  Grid frame = render_frame(t, cfg, pose);
  REQUIRE(frame.shape() == std::vector<int>{1, cfg.frame_height, cfg.frame_width});
  for (int r = 0; r < cfg.frame_height; ++r)
    for (int c = 0; c < cfg.frame_width; ++c)
      CHECK(frame.at(0, r, c) == frame.at(0, r, cfg.frame_width - 1 - c));

  // The line is visible: both intensities must be present.
  double lo = 1.0, hi = 0.0;
  for (double v : frame) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.5);
  CHECK(hi > 0.5);
}

TEST_CASE("a robot displaced to the left steers back rightward") {
  SimConfig cfg;
  Track t = straight_track();
  RobotPose pose{0.0, 0.05, 0.0};  // to the left of the line, heading along it

  double off = 0.0;
  REQUIRE(line_offset(t, cfg, pose, &off));
  CHECK(off == doctest::Approx(-0.05).epsilon(1e-12));  // line on the right

  const double vl = cfg.cruise_speed - cfg.steer_gain * off * cfg.wheel_base * 0.5;
  const double vr = cfg.cruise_speed + cfg.steer_gain * off * cfg.wheel_base * 0.5;
  CHECK(vl > vr);  // left wheel faster = clockwise = rightward turn

  RobotPose next = integrate(pose, vl, vr, cfg.wheel_base, cfg.dt);
  CHECK(next.theta < 0.0);
  CHECK(next.theta == doctest::Approx(cfg.dt * (vr - vl) / cfg.wheel_base));
  // One more step now moves it toward the line.
  RobotPose after = integrate(next, vl, vr, cfg.wheel_base, cfg.dt);
  CHECK(after.y < pose.y);
}

TEST_CASE("euler kinematics match the closed forms") {
  RobotPose p{1.0, 2.0, 0.5};
  RobotPose q = integrate(p, 0.4, 0.6, 0.1, 0.02);
  CHECK(q.x == doctest::Approx(1.0 + 0.02 * 0.5 * std::cos(0.5)));
  CHECK(q.y == doctest::Approx(2.0 + 0.02 * 0.5 * std::sin(0.5)));
  CHECK(q.theta == doctest::Approx(0.5 + 0.02 * (0.6 - 0.4) / 0.1));
  // Equal wheel speeds drive straight.
  RobotPose s = integrate(p, 0.5, 0.5, 0.1, 0.02);
  CHECK(s.theta == p.theta);
}

TEST_CASE("rendering is a pure function of the pose") {
  SimConfig cfg;
  Track t = make_track("loop");
  RobotPose pose{0.1, -0.5, 0.3};
  CHECK(bit_identical(render_frame(t, cfg, pose), render_frame(t, cfg, pose)));
}

TEST_CASE("simulation is deterministic and stays on the line") {
  SimConfig cfg;
  Sequence a = simulate(cfg, 120);
  Sequence b = simulate(cfg, 120);
  REQUIRE(a.size() == 120);
  REQUIRE(b.size() == 120);
  CHECK(a.fallback_steps.empty());
  for (int t = 0; t < a.size(); ++t) {
    CHECK(bit_identical(a.frames[t], b.frames[t]));
    CHECK(bit_identical(a.actions[t], b.actions[t]));
  }
}

TEST_CASE("noise-free pixels stay inside the two surface intensities") {
  // Supersample averaging can land one rounding step past the rails.
  Sequence seq = simulate(SimConfig{}, 60);
  for (const Grid& f : seq.frames)
    for (double v : f) {
      CHECK(v >= 0.1 - 1e-12);
      CHECK(v <= 0.9 + 1e-12);
    }
}

TEST_CASE("actions are normalized wheel speeds") {
  SimConfig cfg;
  Sequence seq = simulate(cfg, 60);
  for (const Grid& a : seq.actions) {
    REQUIRE(a.size() == 2);
    CHECK(std::fabs(a[0]) <= 1.0);
    CHECK(std::fabs(a[1]) <= 1.0);
  }
}

TEST_CASE("pixel noise is seeded, clamped, and optional") {
  SimConfig noisy;
  noisy.noise_sigma = 0.2;
  Sequence a = simulate(noisy, 10);
  Sequence b = simulate(noisy, 10);
  Sequence clean = simulate(SimConfig{}, 10);
  CHECK(bit_identical(a.frames[3], b.frames[3]));
  CHECK_FALSE(bit_identical(a.frames[3], clean.frames[3]));
  for (double v : a.frames[3]) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("losing the line falls back to driving straight and is recorded") {
  SimConfig cfg;
  cfg.track = "s-curve";
  cfg.capture_range = 1e-7;  // probe error on a curve always exceeds this
  Sequence seq = simulate(cfg, 5);
  CHECK(seq.fallback_steps.size() == 5);
  // Straight fallback: both wheels at cruise.
  CHECK(seq.actions[0][0] == doctest::Approx(cfg.cruise_speed / cfg.max_wheel_speed));
  CHECK(seq.actions[0][1] == doctest::Approx(cfg.cruise_speed / cfg.max_wheel_speed));
}

TEST_CASE("random sequences are seeded and in range") {
  Sequence a = random_sequence(1, 4, 6, 2, 9, 123);
  Sequence b = random_sequence(1, 4, 6, 2, 9, 123);
  Sequence c = random_sequence(1, 4, 6, 2, 9, 124);
  REQUIRE(a.size() == 9);
  CHECK(bit_identical(a.frames[0], b.frames[0]));
  CHECK_FALSE(bit_identical(a.frames[0], c.frames[0]));
  for (double v : a.frames[5]) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (double v : a.actions[5]) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  SimConfig cfg;
  cfg.track = "s-curve";
  cfg.capture_range = 0.02;  // force a few recorded fallbacks
  Sequence seq = simulate(cfg, 12);
  TempFile f("tmp_roundtrip.mtds");
  save_dataset(seq, f.path);
  Sequence back = load_dataset(f.path);

  REQUIRE(back.size() == seq.size());
  CHECK(back.dt == seq.dt);
  CHECK(back.fallback_steps == seq.fallback_steps);
  for (int t = 0; t < seq.size(); ++t) {
    CHECK(bit_identical(back.frames[t], seq.frames[t]));
    CHECK(bit_identical(back.actions[t], seq.actions[t]));
  }
}

TEST_CASE("dataset corruption produces specific errors") {
  Sequence seq = simulate(SimConfig{}, 8);
  TempFile f("tmp_corrupt.mtds");
  save_dataset(seq, f.path);
  const std::string good = read_file(f.path);

  auto code_of = [&](const std::string& bytes) {
    write_file(f.path, bytes);
    try {
      load_dataset(f.path);
      FAIL("expected io_error");
      return io_errc::io;
    } catch (const io_error& e) {
      return e.code();
    }
  };

  std::string bad = good;
  bad[0] = 'X';
  CHECK(code_of(bad) == io_errc::bad_magic);

  bad = good;
  bad[4] = 9;  // unsupported version
  CHECK(code_of(bad) == io_errc::bad_version);

  CHECK(code_of(good.substr(0, good.size() - 11)) == io_errc::truncated);

  // A frame sample outside [0,1].
  bad = good;
  const size_t frame0 = 4 + 4 + 5 * 4 + 8 + 1;  // header + dt + empty flag list
  const double big = 7.5;
  std::memcpy(&bad[frame0], &big, sizeof big);
  CHECK(code_of(bad) == io_errc::range);
}

TEST_CASE("out-of-range fallback flags are inconsistent") {
  Sequence seq = simulate(SimConfig{}, 8);
  seq.fallback_steps = {200};  // beyond the 8 recorded steps
  TempFile f("tmp_flags.mtds");
  save_dataset(seq, f.path);
  try {
    load_dataset(f.path);
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(e.code() == io_errc::inconsistent);
  }
}

TEST_CASE("pgm export maps the unit interval onto bytes") {
  Grid g = Grid::image(1, 2, 2);
  g.at(0, 0, 0) = 0.0;
  g.at(0, 0, 1) = 1.0;
  g.at(0, 1, 0) = 0.5;
  g.at(0, 1, 1) = 0.9;
  TempFile f("tmp_frame.pgm");
  write_pgm(g, 0, f.path);
  const std::string bytes = read_file(f.path);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(bytes.compare(0, header.size(), header) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 128);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 230);

  Grid bad = Grid::image(1, 1, 1, 1.5);
  CHECK_THROWS_AS(write_pgm(bad, 0, f.path), std::invalid_argument);
}
