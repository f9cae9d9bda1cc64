#include "mtap/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "mtap/serial.hpp"

namespace mtap {

namespace {

constexpr double kLineIntensity = 0.1;
constexpr double kGroundIntensity = 0.9;
constexpr int kSupersample = 4;

double point_segment_dist2(double px, double py, const std::array<double, 2>& a,
                           const std::array<double, 2>& b, double* tx, double* ty) {
  const double abx = b[0] - a[0], aby = b[1] - a[1];
  const double apx = px - a[0], apy = py - a[1];
  const double len2 = abx * abx + aby * aby;
  double t = len2 > 0.0 ? (apx * abx + apy * aby) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = a[0] + t * abx, cy = a[1] + t * aby;
  *tx = cx;
  *ty = cy;
  const double dx = px - cx, dy = py - cy;
  return dx * dx + dy * dy;
}

}  // namespace

double Track::distance(double x, double y) const {
  double best = std::numeric_limits<double>::infinity();
  double cx, cy;
  const size_t n = points.size();
  for (size_t i = 0; i < n; ++i) {
    const double d2 = point_segment_dist2(x, y, points[i], points[(i + 1) % n], &cx, &cy);
    best = std::min(best, d2);
  }
  return std::sqrt(best);
}

std::array<double, 2> Track::nearest(double x, double y) const {
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 2> out{x, y};
  double cx, cy;
  const size_t n = points.size();
  for (size_t i = 0; i < n; ++i) {
    const double d2 = point_segment_dist2(x, y, points[i], points[(i + 1) % n], &cx, &cy);
    if (d2 < best) {
      best = d2;
      out = {cx, cy};
    }
  }
  return out;
}

Track make_track(const std::string& name) {
  Track t;
  if (name == "loop") {
    // Rounded rectangle: 1.3 x 1.0 outer span, corner radius 0.3.
    const double hx = 0.35, hy = 0.2, r = 0.3;  // straight half-extents + radius
    const int arc_steps = 24;
    auto arc = [&](double cx, double cy, double a0, double a1) {
      for (int i = 0; i <= arc_steps; ++i) {
        const double a = a0 + (a1 - a0) * i / arc_steps;
        t.points.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
      }
    };
    const double pi = std::acos(-1.0);
    t.points.push_back({hx, -(hy + r)});
    t.points.push_back({-hx, -(hy + r)});  // bottom straight (leftward)
    arc(-hx, -hy, -pi / 2, -pi);
    t.points.push_back({-(hx + r), hy});  // left straight (upward)
    arc(-hx, hy, pi, pi / 2);
    t.points.push_back({hx, hy + r});  // top straight (rightward)
    arc(hx, hy, pi / 2, 0.0);
    t.points.push_back({hx + r, -hy});  // right straight (downward)
    arc(hx, -hy, 0.0, -pi / 2);
  } else if (name == "s-curve") {
    // Wavy circle: alternating left/right curvature along the lap.
    const double R = 0.55, A = 0.10;
    const int n = 360;
    const double pi = std::acos(-1.0);
    for (int i = 0; i < n; ++i) {
      const double phi = 2.0 * pi * i / n;
      const double rad = R + A * std::sin(3.0 * phi);
      t.points.push_back({rad * std::cos(phi), rad * std::sin(phi)});
    }
  } else {
    throw std::invalid_argument("make_track: unknown track \"" + name + "\"");
  }
  return t;
}

void SimConfig::validate() const {
  if (line_half_width <= 0 || wheel_base <= 0 || max_wheel_speed <= 0 || cruise_speed <= 0 ||
      steer_gain <= 0 || sensor_half_width <= 0 || capture_range <= 0 || dt <= 0)
    throw std::invalid_argument("SimConfig: geometry and rate parameters must be positive");
  if (sensor_far <= sensor_near || sensor_near < 0)
    throw std::invalid_argument("SimConfig: sensor footprint must satisfy 0 <= near < far");
  if (frame_height <= 0 || frame_width <= 0)
    throw std::invalid_argument("SimConfig: frame extents must be positive");
  if (noise_sigma < 0) throw std::invalid_argument("SimConfig: noise sigma must be >= 0");
  if (cruise_speed > max_wheel_speed)
    throw std::invalid_argument("SimConfig: cruise speed exceeds max wheel speed");
}

bool line_offset(const Track& track, const SimConfig& cfg, const RobotPose& pose,
                 double* offset) {
  const double mid = 0.5 * (cfg.sensor_near + cfg.sensor_far);
  const double px = pose.x + mid * std::cos(pose.theta);
  const double py = pose.y + mid * std::sin(pose.theta);
  const auto n = track.nearest(px, py);
  // Project onto the robot's left axis (-sin, cos).
  const double e = -(n[0] - px) * std::sin(pose.theta) + (n[1] - py) * std::cos(pose.theta);
  *offset = e;
  return std::fabs(e) <= cfg.capture_range;
}

RobotPose integrate(const RobotPose& pose, double v_left, double v_right,
                    double wheel_base, double dt) {
  const double v = 0.5 * (v_left + v_right);
  RobotPose next;
  next.x = pose.x + dt * v * std::cos(pose.theta);
  next.y = pose.y + dt * v * std::sin(pose.theta);
  next.theta = pose.theta + dt * (v_right - v_left) / wheel_base;
  return next;
}

Grid render_frame(const Track& track, const SimConfig& cfg, const RobotPose& pose) {
  const int h = cfg.frame_height, w = cfg.frame_width;
  Grid frame = Grid::image(1, h, w);
  const double ct = std::cos(pose.theta), st = std::sin(pose.theta);
  const double depth = cfg.sensor_far - cfg.sensor_near;
  const double span = 2.0 * cfg.sensor_half_width;

  // Candidate segments near the patch, gathered once per frame.
  const double mid_fwd = 0.5 * (cfg.sensor_near + cfg.sensor_far);
  const double cx = pose.x + mid_fwd * ct, cy = pose.y + mid_fwd * st;
  const double reach = 0.5 * std::hypot(depth, span) + cfg.line_half_width;
  std::vector<size_t> cand;
  const size_t n = track.points.size();
  double dummy_x, dummy_y;
  for (size_t i = 0; i < n; ++i) {
    const auto& a = track.points[i];
    const auto& b = track.points[(i + 1) % n];
    const double d2 = point_segment_dist2(cx, cy, a, b, &dummy_x, &dummy_y);
    if (d2 <= (reach + 0.05) * (reach + 0.05)) cand.push_back(i);
  }
  auto near_line = [&](double x, double y) {
    const double lim2 = cfg.line_half_width * cfg.line_half_width;
    for (size_t i : cand) {
      const auto& a = track.points[i];
      const auto& b = track.points[(i + 1) % n];
      if (point_segment_dist2(x, y, a, b, &dummy_x, &dummy_y) <= lim2) return true;
    }
    return false;
  };

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          // Row 0 is the far edge; column 0 is the robot's left.
          const double fy = (r + (sy + 0.5) / kSupersample) / h;
          const double fx = (c + (sx + 0.5) / kSupersample) / w;
          const double fwd = cfg.sensor_far - fy * depth;
          const double lat = cfg.sensor_half_width - fx * span;
          const double wx = pose.x + fwd * ct - lat * st;
          const double wy = pose.y + fwd * st + lat * ct;
          acc += near_line(wx, wy) ? kLineIntensity : kGroundIntensity;
        }
      }
      frame.at(0, r, c) = acc / (kSupersample * kSupersample);
    }
  }
  return frame;
}

Sequence simulate(const SimConfig& cfg, int steps) {
  return simulate(cfg, make_track(cfg.track), steps);
}

Sequence simulate(const SimConfig& cfg, const Track& track, int steps) {
  cfg.validate();
  if (steps < 2) throw std::invalid_argument("simulate: need at least 2 steps");

  // Start on the track, heading along it.
  RobotPose pose;
  {
    const auto& p0 = track.points[0];
    const auto& p1 = track.points[1];
    pose.x = p0[0];
    pose.y = p0[1];
    pose.theta = std::atan2(p1[1] - p0[1], p1[0] - p0[0]);
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Sequence seq;
  seq.dt = cfg.dt;
  seq.frames.reserve(static_cast<size_t>(steps));
  seq.actions.reserve(static_cast<size_t>(steps));

  for (int t = 0; t < steps; ++t) {
    Grid frame = render_frame(track, cfg, pose);
    if (cfg.noise_sigma > 0.0) {
      for (int i = 0; i < frame.size(); ++i)
        frame[i] = std::clamp(frame[i] + cfg.noise_sigma * noise(rng), 0.0, 1.0);
    }

    double offset = 0.0;
    const bool captured = line_offset(track, cfg, pose, &offset);
    if (!captured) {
      offset = 0.0;  // straight-ahead fallback keeps the stream unbroken
      seq.fallback_steps.push_back(static_cast<uint32_t>(t));
    }
    const double vl =
        std::clamp(cfg.cruise_speed - cfg.steer_gain * offset * cfg.wheel_base * 0.5,
                   -cfg.max_wheel_speed, cfg.max_wheel_speed);
    const double vr =
        std::clamp(cfg.cruise_speed + cfg.steer_gain * offset * cfg.wheel_base * 0.5,
                   -cfg.max_wheel_speed, cfg.max_wheel_speed);

    Grid action = Grid::vec(2);
    action[0] = vl / cfg.max_wheel_speed;
    action[1] = vr / cfg.max_wheel_speed;

    seq.frames.push_back(std::move(frame));
    seq.actions.push_back(std::move(action));
    pose = integrate(pose, vl, vr, cfg.wheel_base, cfg.dt);
  }
  return seq;
}

Sequence random_sequence(int channels, int height, int width, int action_dim, int steps,
                         uint64_t seed) {
  if (steps < 2) throw std::invalid_argument("random_sequence: need at least 2 steps");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sequence seq;
  for (int t = 0; t < steps; ++t) {
    Grid f = Grid::image(channels, height, width);
    for (double& v : f) v = unit(rng);
    Grid a = Grid::vec(action_dim);
    for (double& v : a) v = 2.0 * unit(rng) - 1.0;
    seq.frames.push_back(std::move(f));
    seq.actions.push_back(std::move(a));
  }
  return seq;
}

void save_dataset(const Sequence& seq, const std::string& path) {
  if (seq.size() < 2) throw std::invalid_argument("save_dataset: sequence too short");
  const Grid& f0 = seq.frames[0];
  const int adim = seq.actions[0].size();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error(io_errc::io, "save_dataset: cannot open " + path);
  os.write("MTDS", 4);
  write_u32(os, 1);  // version
  write_u32(os, static_cast<uint32_t>(seq.size()));
  write_u32(os, static_cast<uint32_t>(f0.channels()));
  write_u32(os, static_cast<uint32_t>(f0.height()));
  write_u32(os, static_cast<uint32_t>(f0.width()));
  write_u32(os, static_cast<uint32_t>(adim));
  write_f64(os, seq.dt);
  // Flag count is a single byte; an overflowing list keeps its first 255.
  const size_t nflags = std::min<size_t>(seq.fallback_steps.size(), 255);
  write_u8(os, static_cast<uint8_t>(nflags));
  for (size_t i = 0; i < nflags; ++i) write_u32(os, seq.fallback_steps[i]);
  for (const Grid& f : seq.frames)
    for (int i = 0; i < f.size(); ++i) write_f64(os, f[i]);
  for (const Grid& a : seq.actions)
    for (int i = 0; i < a.size(); ++i) write_f64(os, a[i]);
  if (!os) throw io_error(io_errc::io, "save_dataset: write failed");
}

Sequence load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error(io_errc::io, "load_dataset: cannot open " + path);
  expect_magic(is, "MTDS", "dataset");
  const uint32_t version = read_u32(is);
  if (version != 1)
    throw io_error(io_errc::bad_version,
                   "dataset: unsupported version " + std::to_string(version));
  const uint32_t steps = read_u32(is);
  const uint32_t channels = read_u32(is);
  const uint32_t height = read_u32(is);
  const uint32_t width = read_u32(is);
  const uint32_t adim = read_u32(is);
  if (steps < 2) throw io_error(io_errc::range, "dataset: fewer than 2 timesteps");
  if (channels == 0 || height == 0 || width == 0 || adim == 0)
    throw io_error(io_errc::range, "dataset: zero extent in header");

  Sequence seq;
  seq.dt = read_f64(is);
  const uint8_t nflags = read_u8(is);
  for (int i = 0; i < nflags; ++i) {
    const uint32_t step = read_u32(is);
    if (step >= steps)
      throw io_error(io_errc::inconsistent, "dataset: fallback flag beyond sequence end");
    seq.fallback_steps.push_back(step);
  }
  for (uint32_t t = 0; t < steps; ++t) {
    Grid f = Grid::image(static_cast<int>(channels), static_cast<int>(height),
                         static_cast<int>(width));
    for (int i = 0; i < f.size(); ++i) {
      f[i] = read_f64(is);
      if (!(f[i] >= 0.0 && f[i] <= 1.0))
        throw io_error(io_errc::range, "dataset: frame value outside [0,1] at t=" +
                                           std::to_string(t));
    }
    seq.frames.push_back(std::move(f));
  }
  for (uint32_t t = 0; t < steps; ++t) {
    Grid a = Grid::vec(static_cast<int>(adim));
    for (int i = 0; i < a.size(); ++i) {
      a[i] = read_f64(is);
      if (!(a[i] >= -1.0 && a[i] <= 1.0))
        throw io_error(io_errc::range, "dataset: action value outside [-1,1] at t=" +
                                           std::to_string(t));
    }
    seq.actions.push_back(std::move(a));
  }
  return seq;
}

void write_pgm(const Grid& g, int channel, const std::string& path) {
  const int h = g.height(), w = g.width();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error(io_errc::io, "write_pgm: cannot open " + path);
  char header[64];
  std::snprintf(header, sizeof header, "P5\n%d %d\n255\n", w, h);
  os << header;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = g.at(channel, y, x);
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("write_pgm: value outside [0,1]");
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
  if (!os) throw io_error(io_errc::io, "write_pgm: write failed");
}

void export_frames(const std::vector<Grid>& frames, const std::string& directory,
                   const std::string& prefix) {
  std::filesystem::create_directories(directory);
  char name[64];
  for (size_t t = 0; t < frames.size(); ++t) {
    std::snprintf(name, sizeof name, "%s_%05zu.pgm", prefix.c_str(), t);
    write_pgm(frames[t], 0, directory + "/" + name);
  }
}

}  // namespace mtap
