// mtap: command-line surface for the predictive-coding engine. Every
// subcommand is seed-deterministic and writes a JSON run manifest next to
// its primary output.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtap/data.hpp"
#include "mtap/gradcheck.hpp"
#include "mtap/network.hpp"
#include "mtap/serial.hpp"
#include "mtap/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGradcheck = 3;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent_dir(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw mtap::io_error(mtap::io_errc::io, "cannot open for writing: " + path);
  os << text;
  os.flush();
  if (!os) throw mtap::io_error(mtap::io_errc::io, "failed writing: " + path);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const std::string& path, const std::string& command, const json& config,
                    uint64_t seed, const std::vector<std::string>& artifacts,
                    double wall_seconds, const json& metrics) {
  json j{{"command", command}, {"config", config},           {"seed", seed},
         {"artifacts", artifacts}, {"wall_seconds", wall_seconds}, {"metrics", metrics}};
  write_text(path, j.dump(2) + "\n");
}

json sim_config_json(const mtap::SimConfig& sc, int steps) {
  return json{{"steps", steps},
              {"track", sc.track},
              {"line_half_width", sc.line_half_width},
              {"wheel_base", sc.wheel_base},
              {"max_wheel_speed", sc.max_wheel_speed},
              {"cruise_speed", sc.cruise_speed},
              {"steer_gain", sc.steer_gain},
              {"sensor_near", sc.sensor_near},
              {"sensor_far", sc.sensor_far},
              {"sensor_half_width", sc.sensor_half_width},
              {"capture_range", sc.capture_range},
              {"frame_height", sc.frame_height},
              {"frame_width", sc.frame_width},
              {"dt", sc.dt},
              {"seed", sc.seed},
              {"noise_sigma", sc.noise_sigma}};
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string out;
  int steps = 1000;
  uint64_t seed = 0;
  std::string track = "loop";
  double noise = 0.0;
};

int cmd_gen_data(const GenDataArgs& a) {
  Stopwatch watch;
  mtap::SimConfig sc;
  sc.track = a.track;
  sc.seed = a.seed;
  sc.noise_sigma = a.noise;
  mtap::Sequence seq = mtap::simulate(sc, a.steps);
  ensure_parent_dir(a.out);
  mtap::save_dataset(seq, a.out);
  std::cout << "wrote " << a.out << " (" << seq.size() << " steps, "
            << seq.fallback_steps.size() << " fallback steps)\n";
  write_manifest(a.out + ".manifest.json", "gen-data", sim_config_json(sc, a.steps), a.seed,
                 {a.out}, watch.seconds(),
                 json{{"timesteps", seq.size()},
                      {"fallback_steps", seq.fallback_steps.size()}});
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = 200;
  double lr = 1e-3;
  int window = 20;
  int windows_per_epoch = 8;
  double clip = 5.0;
  std::vector<double> tau{1.0, 1.3, 2.0};
  std::vector<int> channels{1, 8, 16};
  std::vector<int> rchannels{8, 16, 32};
  int gus = 2;
  std::string gating = "mixture";
  std::vector<double> lambda{1.0, 0.1, 0.1};
  int gate_hidden = 16;
  bool no_blend = false;
  uint64_t seed = 0;
};

mtap::GatingMode parse_gating(const std::string& s) {
  return s == "mixture" ? mtap::GatingMode::Mixture : mtap::GatingMode::ChannelGate;
}

mtap::NetworkConfig network_config_from(const TrainArgs& a, const mtap::Sequence& data) {
  mtap::NetworkConfig nc;
  nc.layers = static_cast<int>(a.tau.size());
  nc.taus = a.tau;
  nc.channels = a.channels;
  nc.rchannels = a.rchannels;
  nc.units_per_layer = a.gus;
  nc.gating = parse_gating(a.gating);
  nc.loss_weights = a.lambda;
  nc.gate_hidden = a.gate_hidden;
  nc.leaky_blend_enabled = !a.no_blend;
  nc.input_channels = data.frames.at(0).channels();
  nc.input_height = data.frames.at(0).height();
  nc.input_width = data.frames.at(0).width();
  nc.action_dim = data.actions.at(0).size();
  nc.validate();
  for (const std::string& w : nc.warnings()) std::cerr << "warning: " << w << "\n";
  return nc;
}

int cmd_train(const TrainArgs& a) {
  Stopwatch watch;
  mtap::Sequence data = mtap::load_dataset(a.data);
  mtap::NetworkConfig nc = network_config_from(a, data);
  mtap::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.window = a.window;
  tc.windows_per_epoch = a.windows_per_epoch;
  tc.learning_rate = a.lr;
  tc.clip_norm = a.clip;
  tc.seed = a.seed;
  tc.validate();

  mtap::NetworkParams params = mtap::init_params(nc, a.seed);
  const int stride = std::max(1, a.epochs / 20);
  mtap::TrainResult tr = mtap::train(
      params, nc, data, tc, nullptr, [&](int epoch, double loss) {
        if (epoch % stride == 0 || epoch == a.epochs - 1)
          std::cout << "epoch " << epoch << "  loss " << loss << "\n";
      });

  ensure_parent_dir(a.out);
  mtap::save_checkpoint(a.out, params, nc, tc, &tr.adam);
  std::string csv = "epoch,loss\n";
  for (size_t e = 0; e < tr.loss_history.size(); ++e)
    csv += std::to_string(e) + "," + fmt(tr.loss_history[e]) + "\n";
  const std::string csv_path = a.out + ".loss.csv";
  write_text(csv_path, csv);

  mtap::EvalMetrics em = mtap::evaluate(params, nc, data);
  std::cout << "one-step mse " << em.one_step_mse << "  copy-last baseline "
            << em.baseline_mse << "\n";
  json metrics{{"first_epoch_loss",
                tr.loss_history.empty() ? json() : json(tr.loss_history.front())},
               {"final_epoch_loss",
                tr.loss_history.empty() ? json() : json(tr.loss_history.back())},
               {"one_step_mse", em.one_step_mse},
               {"baseline_mse", em.baseline_mse},
               {"smoothness", em.smoothness}};
  write_manifest(a.out + ".manifest.json", "train",
                 json{{"network", nc}, {"train", tc}, {"data", a.data}}, a.seed,
                 {a.out, csv_path}, watch.seconds(), metrics);
  return kExitOk;
}

// -------------------------------------------------------- predict / rollout

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int prime = 50;     // rollout only
  int horizon = 100;  // rollout only
};

void write_mse_csv(const std::string& path, const std::vector<mtap::Grid>& preds,
                   const mtap::Sequence& data, int count) {
  std::string csv = "t,mse,baseline_mse\n";
  for (int t = 1; t < count; ++t) {
    double mse = 0.0, base = 0.0;
    const mtap::Grid& truth = data.frames[static_cast<size_t>(t)];
    const mtap::Grid& prev = data.frames[static_cast<size_t>(t - 1)];
    const mtap::Grid& pred = preds[static_cast<size_t>(t)];
    for (int i = 0; i < truth.size(); ++i) {
      mse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
      base += (prev[i] - truth[i]) * (prev[i] - truth[i]);
    }
    csv += std::to_string(t) + "," + fmt(mse / truth.size()) + "," +
           fmt(base / truth.size()) + "\n";
  }
  write_text(path, csv);
}

int cmd_predict_impl(const PredictArgs& a, bool closed_loop) {
  Stopwatch watch;
  mtap::Checkpoint cp = mtap::load_checkpoint(a.checkpoint);
  mtap::Sequence data = mtap::load_dataset(a.data);
  const int prime = closed_loop ? a.prime : data.size();
  const int horizon = closed_loop ? a.horizon : 0;
  std::vector<mtap::Grid> preds = mtap::rollout(cp.params, cp.net, data, prime, horizon);

  fs::create_directories(a.out);
  const int count = static_cast<int>(preds.size());
  std::vector<mtap::Grid> truth(data.frames.begin(), data.frames.begin() + count);
  mtap::export_frames(truth, a.out, "true");
  mtap::export_frames(preds, a.out, "pred");
  const std::string csv_path = a.out + "/mse.csv";
  write_mse_csv(csv_path, preds, data, count);

  double mse = 0.0, base = 0.0;
  for (int t = 1; t < count; ++t) {
    const mtap::Grid& f = data.frames[static_cast<size_t>(t)];
    const mtap::Grid& p = preds[static_cast<size_t>(t)];
    const mtap::Grid& prev = data.frames[static_cast<size_t>(t - 1)];
    for (int i = 0; i < f.size(); ++i) {
      mse += (p[i] - f[i]) * (p[i] - f[i]) / f.size();
      base += (prev[i] - f[i]) * (prev[i] - f[i]) / f.size();
    }
  }
  mse /= std::max(1, count - 1);
  base /= std::max(1, count - 1);
  std::cout << (closed_loop ? "rollout" : "predict") << ": " << count << " frames, mean mse "
            << mse << (closed_loop ? "" : ", baseline ") << (closed_loop ? "" : fmt(base))
            << "\n";

  json config{{"checkpoint", a.checkpoint},
              {"data", a.data},
              {"network", cp.net},
              {"prime", prime},
              {"horizon", horizon}};
  write_manifest(a.out + "/manifest.json", closed_loop ? "rollout" : "predict", config,
                 cp.train.seed, {a.out, csv_path}, watch.seconds(),
                 json{{"frames", count}, {"mean_mse", mse}, {"mean_baseline_mse", base}});
  return kExitOk;
}

// --------------------------------------------------------------- dump-reps

struct DumpArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int layer = 0;
  int gu = 0;
  int steps = 0;  // 0 = whole dataset
};

int cmd_dump_reps(const DumpArgs& a) {
  Stopwatch watch;
  mtap::Checkpoint cp = mtap::load_checkpoint(a.checkpoint);
  mtap::Sequence data = mtap::load_dataset(a.data);
  if (a.layer < 0 || a.layer >= cp.net.layers)
    throw std::invalid_argument("dump-reps: --layer out of range (network has " +
                                std::to_string(cp.net.layers) + " layers)");
  if (a.gu < 0 || a.gu >= cp.net.units_per_layer)
    throw std::invalid_argument("dump-reps: --gu out of range (network has " +
                                std::to_string(cp.net.units_per_layer) + " units per layer)");
  const int steps = a.steps > 0 ? std::min(a.steps, data.size()) : data.size();

  fs::create_directories(a.out);
  mtap::Runner runner(cp.params, cp.net);
  std::vector<std::vector<mtap::Grid>> repr_series(static_cast<size_t>(cp.net.layers));
  char name[64];
  for (int t = 0; t < steps; ++t) {
    mtap::StepTrace tr = runner.step(data.frames[static_cast<size_t>(t)],
                                     data.actions[static_cast<size_t>(t)]);
    for (int l = 0; l < cp.net.layers; ++l)
      repr_series[static_cast<size_t>(l)].push_back(tr.layers[static_cast<size_t>(l)].repr);
    mtap::Grid img = mtap::layer_image(cp.params, cp.net, tr, a.layer, a.gu);
    if (a.layer > 0) img = mtap::clamp01_val(img);  // PGM export needs [0,1]
    if (img.channels() == 1) {
      std::snprintf(name, sizeof name, "gu_%05d.pgm", t);
      mtap::write_pgm(img, 0, a.out + "/" + name);
    } else {
      for (int c = 0; c < img.channels(); ++c) {
        std::snprintf(name, sizeof name, "gu_%05d_c%02d.pgm", t, c);
        mtap::write_pgm(img, c, a.out + "/" + name);
      }
    }
  }

  std::string csv = "layer,tau,smoothness\n";
  json smooth = json::array();
  for (int l = 0; l < cp.net.layers; ++l) {
    const double s = mtap::temporal_smoothness(repr_series[static_cast<size_t>(l)]);
    csv += std::to_string(l) + "," + fmt(cp.net.taus[static_cast<size_t>(l)]) + "," + fmt(s) +
           "\n";
    smooth.push_back(s);
  }
  const std::string csv_path = a.out + "/smoothness.csv";
  write_text(csv_path, csv);
  std::cout << "dumped " << steps << " steps of layer " << a.layer << " gu " << a.gu << " to "
            << a.out << "\n";

  write_manifest(a.out + "/manifest.json", "dump-reps",
                 json{{"checkpoint", a.checkpoint},
                      {"data", a.data},
                      {"layer", a.layer},
                      {"gu", a.gu},
                      {"steps", steps},
                      {"network", cp.net}},
                 cp.train.seed, {a.out, csv_path}, watch.seconds(),
                 json{{"smoothness", smooth}});
  return kExitOk;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::vector<double> tau{1.0, 1.3, 2.0};
  uint64_t seed = 0;
  int steps = 5;
  int samples = 32;
  double tolerance = 1e-4;
  std::string report = "gradcheck_report.txt";
};

int cmd_gradcheck(const GradcheckArgs& a) {
  Stopwatch watch;
  mtap::NetworkConfig nc;
  nc.layers = static_cast<int>(a.tau.size());
  nc.taus = a.tau;
  if (nc.layers != 3)
    throw std::invalid_argument("gradcheck: --tau must list 3 values for the default geometry");
  nc.validate();

  // Finite differences are only conclusive away from relu/clamp kinks and
  // pooling ties; redraw the probe data until every activation clears the
  // perturbation by a safe factor, and redraw again if a perturbed pass
  // still grazes a kink.
  const double margin_needed = 3.0 * 1e-5;
  mtap::NetworkParams params;
  mtap::Sequence seq;
  mtap::GradCheckReport report;
  uint64_t used_seed = a.seed;
  bool ran = false;
  for (int attempt = 0; attempt < 200; ++attempt) {
    used_seed = a.seed + static_cast<uint64_t>(attempt);
    params = mtap::init_params(nc, used_seed);
    seq = mtap::random_sequence(nc.input_channels, nc.input_height, nc.input_width,
                                nc.action_dim, a.steps, used_seed ^ 0x5eedULL);
    mtap::WindowResult probe = mtap::run_sequence(params, nc, seq, 0, a.steps, true);
    if (probe.kink_margin < margin_needed) continue;
    // A draw whose pixel head saturates everywhere (clamped plane constant
    // for the whole window) leaves the layer-0 parameters with identically
    // zero gradient; require live pixels so the check exercises every path.
    int live = 0;
    for (const auto& tr : probe.traces)
      for (double v : tr.layers[0].pred)
        if (v > 0.0 && v < 1.0) ++live;
    if (live < 8) continue;

    std::vector<mtap::ParamRef> refs;
    mtap::for_each_tensor(
        params, [&](const std::string& name, mtap::Grid& g) { refs.push_back({name, &g}); });
    auto builder = [&](mtap::Tape& tape) {
      mtap::WindowLoss wl = mtap::build_window_loss(tape, params, nc, seq, 0, a.steps);
      return mtap::BuiltLoss{wl.loss, wl.params};
    };
    mtap::GradCheckOptions opt;
    opt.samples_per_group = a.samples;
    opt.sample_seed = used_seed;
    report = mtap::grad_check(refs, builder, opt);
    ran = true;
    if (report.passed(a.tolerance) || report.kink_margin >= 1e-5) break;
    ran = false;  // failure attributable to a grazed kink: try other data
  }
  if (!ran)
    throw std::runtime_error("gradcheck: no kink-free probe data found; geometry unsuitable");

  std::string text;
  text += "gradient check: " + std::to_string(report.groups.size()) + " parameter groups, " +
          "T=" + std::to_string(a.steps) + ", seed " + std::to_string(used_seed) + "\n";
  for (const auto& g : report.groups)
    text += "  " + g.name + "  max_rel_err " + fmt(g.max_rel_err) + "  (" +
            std::to_string(g.elements_checked) + " elements)\n";
  text += "max relative error: " + fmt(report.max_rel_err) + "\n";
  text += "kink margin: " + fmt(report.kink_margin) + "\n";
  const bool ok = report.passed(a.tolerance);
  text += ok ? "PASS\n" : "FAIL\n";
  std::cout << text;
  write_text(a.report, text);

  write_manifest(a.report + ".manifest.json", "gradcheck",
                 json{{"tau", a.tau},
                      {"steps", a.steps},
                      {"samples_per_group", a.samples},
                      {"tolerance", a.tolerance},
                      {"requested_seed", a.seed},
                      {"used_seed", used_seed}},
                 a.seed, {a.report}, watch.seconds(),
                 json{{"max_rel_err", report.max_rel_err},
                      {"kink_margin", report.kink_margin},
                      {"passed", ok}});
  return ok ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtap: hierarchical predictive-coding engine for sensorimotor streams"};
  app.require_subcommand(1);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "Record a synthetic line-tracer dataset");
  gen->add_option("--out", gd.out, "Output dataset path")->required();
  gen->add_option("--steps", gd.steps, "Number of timesteps")
      ->check(CLI::Range(2, 1000000000))
      ->capture_default_str();
  gen->add_option("--seed", gd.seed, "Simulation seed")->capture_default_str();
  gen->add_option("--track", gd.track, "Track shape")
      ->check(CLI::IsMember({"loop", "s-curve"}))
      ->capture_default_str();
  gen->add_option("--noise", gd.noise, "Gaussian pixel noise sigma")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "Train a network on a recorded dataset");
  tr->add_option("--data", ta.data, "Input dataset path")->required();
  tr->add_option("--out", ta.out, "Output checkpoint path")->required();
  tr->add_option("--epochs", ta.epochs, "Training epochs")
      ->check(CLI::Range(0, 1000000))
      ->capture_default_str();
  tr->add_option("--lr", ta.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tr->add_option("--window", ta.window, "Truncated window length")
      ->check(CLI::Range(2, 1000000))
      ->capture_default_str();
  tr->add_option("--windows-per-epoch", ta.windows_per_epoch, "Optimizer steps per epoch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tr->add_option("--clip", ta.clip, "Global gradient-norm clip (0 disables)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  tr->add_option("--tau", ta.tau, "Per-layer time constants")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--channels", ta.channels, "Per-layer target channels")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--rchannels", ta.rchannels, "Per-layer representation channels")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--gus", ta.gus, "Generative units per layer")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tr->add_option("--gating", ta.gating, "Action gating mode")
      ->check(CLI::IsMember({"mixture", "channel", "channel-gate"}))
      ->capture_default_str();
  tr->add_option("--lambda", ta.lambda, "Per-layer loss weights")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--gate-hidden", ta.gate_hidden, "Gating MLP hidden width")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tr->add_flag("--no-blend", ta.no_blend, "Disable the leaky time-scale blend");
  tr->add_option("--seed", ta.seed, "Init + window-sampling seed")->capture_default_str();

  PredictArgs pa;
  CLI::App* pr = app.add_subcommand("predict", "One-step predictions over a dataset");
  pr->add_option("--checkpoint", pa.checkpoint, "Trained checkpoint")->required();
  pr->add_option("--data", pa.data, "Input dataset path")->required();
  pr->add_option("--out", pa.out, "Output directory")->required();

  PredictArgs ra;
  CLI::App* ro = app.add_subcommand("rollout", "Closed-loop prediction after a primed prefix");
  ro->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint")->required();
  ro->add_option("--data", ra.data, "Input dataset path")->required();
  ro->add_option("--out", ra.out, "Output directory")->required();
  ro->add_option("--prime", ra.prime, "Teacher-forced prefix length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ro->add_option("--horizon", ra.horizon, "Closed-loop steps after the prefix")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  DumpArgs da;
  CLI::App* du = app.add_subcommand("dump-reps", "Decode generative-unit states to images");
  du->add_option("--checkpoint", da.checkpoint, "Trained checkpoint")->required();
  du->add_option("--data", da.data, "Input dataset path")->required();
  du->add_option("--out", da.out, "Output directory")->required();
  du->add_option("--layer", da.layer, "Layer index")->capture_default_str();
  du->add_option("--gu", da.gu, "Generative unit index")->capture_default_str();
  du->add_option("--steps", da.steps, "Timesteps to dump (0 = all)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  GradcheckArgs ga;
  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "Compare reverse-mode gradients with finite differences");
  gc->add_option("--tau", ga.tau, "Per-layer time constants")
      ->delimiter(',')
      ->capture_default_str();
  gc->add_option("--seed", ga.seed, "Probe seed (bumped if data grazes a kink)")
      ->capture_default_str();
  gc->add_option("--steps", ga.steps, "Sequence length")
      ->check(CLI::Range(2, 1000))
      ->capture_default_str();
  gc->add_option("--samples", ga.samples, "Sampled elements per parameter group (0 = all)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gc->add_option("--tolerance", ga.tolerance, "Max allowed relative error")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gc->add_option("--report", ga.report, "Report text file")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // --help exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gd);
    if (tr->parsed()) return cmd_train(ta);
    if (pr->parsed()) return cmd_predict_impl(pa, false);
    if (ro->parsed()) return cmd_predict_impl(ra, true);
    if (du->parsed()) return cmd_dump_reps(da);
    if (gc->parsed()) return cmd_gradcheck(ga);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
