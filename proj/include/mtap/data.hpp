// Synthetic line-tracer recording: differential-drive kinematics, a
// proportional line follower, and a supersampled ground-patch renderer,
// plus the dataset container and PGM frame export.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtap/grid.hpp"

namespace mtap {

// Paired frame/action stream. Frames are C x H x W grids in [0,1]; actions
// are wheel velocities normalized to [-1,1].
struct Sequence {
  std::vector<Grid> frames;
  std::vector<Grid> actions;
  double dt = 0.02;
  std::vector<uint32_t> fallback_steps;  // timesteps the line left capture range

  int size() const { return static_cast<int>(frames.size()); }
};

// Closed planar centerline, stored as a densely sampled polyline.
struct Track {
  std::vector<std::array<double, 2>> points;

  // Distance from (x, y) to the nearest centerline segment.
  double distance(double x, double y) const;
  // Closest centerline point to (x, y).
  std::array<double, 2> nearest(double x, double y) const;
};

// Stock tracks: "loop" is a rounded rectangle, "s-curve" a wavy circle with
// alternating curvature.
Track make_track(const std::string& name);

struct SimConfig {
  std::string track = "loop";
  double line_half_width = 0.035;  // world units
  double wheel_base = 0.10;
  double max_wheel_speed = 0.80;
  double cruise_speed = 0.50;      // controller operating speed
  // Turn rate per unit lateral offset. Cornering needs a sustained rate of
  // cruise_speed / corner_radius, so the gain must keep the matching
  // steady-state offset well inside capture_range.
  double steer_gain = 30.0;
  // Ground patch the virtual camera renders, in the robot frame.
  double sensor_near = 0.04;
  double sensor_far = 0.28;
  double sensor_half_width = 0.18;
  double capture_range = 0.18;     // lateral offset beyond which the line is lost
  int frame_height = 8;
  int frame_width = 12;
  double dt = 0.02;
  uint64_t seed = 0;
  double noise_sigma = 0.0;        // optional Gaussian pixel noise

  void validate() const;  // throws std::invalid_argument
};

struct RobotPose {
  double x = 0.0, y = 0.0, theta = 0.0;
};

// Signed lateral offset of the track centerline from the robot's sensor
// probe point; positive means the line lies to the robot's left. Returns
// false when the nearest centerline point is beyond capture range.
bool line_offset(const Track& track, const SimConfig& cfg, const RobotPose& pose,
                 double* offset);

// One Euler step of differential-drive kinematics:
// x' = v cos(theta), y' = v sin(theta), theta' = (v_r - v_l) / wheel_base.
RobotPose integrate(const RobotPose& pose, double v_left, double v_right,
                    double wheel_base, double dt);

// Renders the ground patch ahead of `pose` at the configured resolution with
// 4x4 supersampled area coverage; line intensity 0.1 on 0.9 ground.
Grid render_frame(const Track& track, const SimConfig& cfg, const RobotPose& pose);

// Deterministic closed-loop recording of `steps` frames and wheel commands.
Sequence simulate(const SimConfig& cfg, int steps);
// Same, on a caller-supplied track (cfg.track name is ignored).
Sequence simulate(const SimConfig& cfg, const Track& track, int steps);

// Uniform-random stream (frames in [0,1], actions in [-1,1]) for gradient
// probes and property tests.
Sequence random_sequence(int channels, int height, int width, int action_dim, int steps,
                         uint64_t seed);

void save_dataset(const Sequence& seq, const std::string& path);
Sequence load_dataset(const std::string& path);

// Binary PGM (P5, maxval 255) per frame, <prefix>_%05d.pgm. Values must lie
// in [0,1]; v maps to round(255 v).
void export_frames(const std::vector<Grid>& frames, const std::string& directory,
                   const std::string& prefix = "frame");
void write_pgm(const Grid& channel_plane, int channel, const std::string& path);

}  // namespace mtap
