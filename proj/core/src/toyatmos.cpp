#include "toycast/toyatmos.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "toycast/array_io.hpp"
#include "toycast/error.hpp"
#include "toycast/rng.hpp"

namespace toycast {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDegToRad = std::numbers::pi / 180.0;

// Seed-stream tags, kept distinct so no two streams share a key.
enum : uint64_t { kStreamInit = 1, kStreamForcing = 2, kStreamStatic = 3 };

void check_channel_vector(const std::vector<double>& v, int64_t c, const char* name) {
  if (static_cast<int64_t>(v.size()) != c) {
    throw InvalidArgument(std::string(name) + " must have n_channels entries");
  }
}

// Conservative latitude diffusion coefficients: flux across the interface
// between rows h and h+1 is c[h] * (x[h+1] - x[h]), divided by the row's
// raw area. c[-1] = c[H-1] = 0 (no flux through the poles).
struct LatStencil {
  std::vector<double> inv_area;   // 1 / raw area weight
  std::vector<double> interface;  // H - 1 entries
  double max_ratio = 0.0;         // max_h (c[h-1] + c[h]) / a_h
};

LatStencil make_lat_stencil(const GridSpec& grid) {
  const auto w = area_weights(grid);
  const auto centers = grid.lat_centers();
  LatStencil s;
  s.inv_area.resize(grid.n_lat);
  s.interface.resize(std::max<int64_t>(grid.n_lat - 1, 0));
  for (int64_t h = 0; h + 1 < grid.n_lat; ++h) {
    const double dphi = (centers[h + 1] - centers[h]) * kDegToRad;
    s.interface[h] = std::cos(grid.lat_upper[h] * kDegToRad) * dphi;
  }
  for (int64_t h = 0; h < grid.n_lat; ++h) {
    s.inv_area[h] = 1.0 / w.raw[h];
    double flux = 0.0;
    if (h > 0) flux += s.interface[h - 1];
    if (h + 1 < grid.n_lat) flux += s.interface[h];
    s.max_ratio = std::max(s.max_ratio, flux * s.inv_area[h]);
  }
  return s;
}

// Smooth random field: a handful of low-order modes keyed by `key`.
void add_modes(std::vector<double>& field, const GridSpec& grid, const CounterRng& rng,
               int n_modes, int64_t max_k, int64_t max_l, double amplitude, bool decay) {
  const auto centers = grid.lat_centers();
  const auto H = grid.n_lat;
  const auto W = grid.n_lon;
  for (int j = 0; j < n_modes; ++j) {
    const uint64_t base = 16 * static_cast<uint64_t>(j);
    const int64_t k = 1 + static_cast<int64_t>(rng.uniform(base) * static_cast<double>(max_k));
    const int64_t l = 1 + static_cast<int64_t>(rng.uniform(base + 1) * static_cast<double>(max_l));
    const double phase_lon = kTwoPi * rng.uniform(base + 2);
    const double phase_lat = kTwoPi * rng.uniform(base + 3);
    double amp = amplitude * rng.normal(base + 4);
    if (decay) amp /= std::sqrt(static_cast<double>(k * k + l * l));
    for (int64_t h = 0; h < H; ++h) {
      const double lat_part = std::cos(static_cast<double>(l) * centers[h] * kDegToRad + phase_lat);
      for (int64_t w = 0; w < W; ++w) {
        field[h * W + w] += amp * lat_part *
                            std::cos(kTwoPi * static_cast<double>(k * w) / static_cast<double>(W) + phase_lon);
      }
    }
  }
}

torch::Tensor per_channel_view(const std::vector<double>& v, const torch::Tensor& like) {
  return torch::tensor(v, torch::TensorOptions().dtype(torch::kFloat64))
      .to(like.scalar_type())
      .view({static_cast<int64_t>(v.size()), 1, 1});
}

}  // namespace

// ---------------------------------------------------------------------------
// DynamicsParams

DynamicsParams DynamicsParams::desk_default() {
  DynamicsParams p;
  p.n_channels = 4;
  p.advection_speed = {0.5, -0.75, 1.0, 0.25};
  p.diffusion_coeff = {0.05, 0.02, 0.08, 0.04};
  p.forcing_amplitude = 0.05;
  p.coupling_strength = 0.02;
  p.damping = 0.01;
  p.seed = 0;
  return p;
}

void DynamicsParams::validate() const {
  if (n_channels < 1) throw InvalidArgument("n_channels must be >= 1");
  check_channel_vector(advection_speed, n_channels, "advection_speed");
  check_channel_vector(diffusion_coeff, n_channels, "diffusion_coeff");
  for (double d : diffusion_coeff) {
    if (!(d >= 0.0)) throw InvalidArgument("diffusion_coeff must be >= 0");
    if (d > 0.25) throw InvalidArgument("diffusion_coeff exceeds the explicit stability bound 0.25");
  }
  for (double u : advection_speed) {
    if (!std::isfinite(u)) throw InvalidArgument("advection_speed must be finite");
  }
  if (!(forcing_amplitude >= 0.0)) throw InvalidArgument("forcing_amplitude must be >= 0");
  if (!(coupling_strength >= 0.0)) throw InvalidArgument("coupling_strength must be >= 0");
  if (!(damping >= 0.0 && damping < 1.0)) throw InvalidArgument("damping must be in [0, 1)");
}

nlohmann::json DynamicsParams::to_json() const {
  return {{"n_channels", n_channels},           {"advection_speed", advection_speed},
          {"diffusion_coeff", diffusion_coeff}, {"forcing_amplitude", forcing_amplitude},
          {"coupling_strength", coupling_strength}, {"damping", damping},
          {"seed", seed}};
}

DynamicsParams DynamicsParams::from_json(const nlohmann::json& doc) {
  DynamicsParams p;
  p.n_channels = doc.at("n_channels").get<int64_t>();
  p.advection_speed = doc.at("advection_speed").get<std::vector<double>>();
  p.diffusion_coeff = doc.at("diffusion_coeff").get<std::vector<double>>();
  p.forcing_amplitude = doc.at("forcing_amplitude").get<double>();
  p.coupling_strength = doc.at("coupling_strength").get<double>();
  p.damping = doc.value("damping", 0.0);
  p.seed = doc.at("seed").get<uint64_t>();
  return p;
}

// ---------------------------------------------------------------------------
// Trajectory

StateTensor Trajectory::at(int64_t i) const {
  return StateTensor{states[i], start_time + i, channel_names};
}

Trajectory Trajectory::slice(int64_t begin, int64_t end) const {
  if (begin < 0 || end > size() || begin > end) throw InvalidArgument("trajectory slice out of range");
  return Trajectory{grid, channel_names, states.slice(0, begin, end), start_time + begin};
}

std::vector<std::string> default_channel_names(int64_t n_channels) {
  std::vector<std::string> names;
  for (int64_t c = 0; c < n_channels; ++c) names.push_back("var" + std::to_string(c));
  return names;
}

torch::Tensor initial_condition(const GridSpec& grid, const DynamicsParams& params) {
  grid.validate();
  params.validate();
  const auto H = grid.n_lat;
  const auto W = grid.n_lon;
  auto out = torch::zeros({params.n_channels, H, W}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (int64_t c = 0; c < params.n_channels; ++c) {
    std::vector<double> field(H * W, 0.0);
    const CounterRng rng(mix_seed({params.seed, kStreamInit, static_cast<uint64_t>(c)}));
    add_modes(field, grid, rng, 8, std::max<int64_t>(1, W / 8), 4, 1.0, true);
    const double scale = 1.0 + 0.5 * static_cast<double>(c);
    const double offset = 2.0 * static_cast<double>(c);
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) acc[c][h][w] = offset + scale * field[h * W + w];
  }
  return out;
}

Trajectory simulate(const GridSpec& grid, const DynamicsParams& params, int64_t n_steps) {
  return simulate(grid, params, n_steps, initial_condition(grid, params));
}

Trajectory simulate(const GridSpec& grid, const DynamicsParams& params, int64_t n_steps,
                    const torch::Tensor& initial, torch::ScalarType storage) {
  grid.validate();
  params.validate();
  if (n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
  const auto C = params.n_channels;
  const auto H = grid.n_lat;
  const auto W = grid.n_lon;
  if (initial.dim() != 3 || initial.size(0) != C || initial.size(1) != H || initial.size(2) != W) {
    throw InvalidArgument("initial condition must have shape [C, H, W] matching grid and params");
  }

  const auto lat = make_lat_stencil(grid);
  for (double d : params.diffusion_coeff) {
    if (d * (lat.max_ratio + 2.0) > 1.0 + 1e-12) {
      throw InvalidArgument("diffusion_coeff " + std::to_string(d) +
                            " is unstable on this grid (needs d * (" + std::to_string(lat.max_ratio) +
                            " + 2) <= 1)");
    }
  }

  const auto plane = H * W;
  std::vector<double> cur(C * plane);
  {
    auto src = initial.to(torch::kFloat64).contiguous();
    std::copy_n(src.data_ptr<double>(), C * plane, cur.begin());
  }
  std::vector<double> next(C * plane), adv(plane), forcing(plane);

  // Coupling and damping act on anomalies about each channel's initial
  // area-weighted mean level.
  const auto weights = area_weights(grid);
  std::vector<double> level(C, 0.0);
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t w = 0; w < W; ++w) level[c] += weights.normalized[h] * cur[c * plane + h * W + w];
    }
    level[c] /= static_cast<double>(plane);
  }

  if (storage != torch::kFloat32 && storage != torch::kFloat64) {
    throw InvalidArgument("trajectory storage must be float32 or float64");
  }
  auto out = torch::empty({n_steps, C, H, W}, storage);
  auto store = [&](int64_t step) {
    if (storage == torch::kFloat64) {
      std::copy(cur.begin(), cur.end(), out.data_ptr<double>() + step * C * plane);
    } else {
      std::transform(cur.begin(), cur.end(), out.data_ptr<float>() + step * C * plane,
                     [](double v) { return static_cast<float>(v); });
    }
  };
  store(0);

  for (int64_t step = 1; step < n_steps; ++step) {
    for (int64_t c = 0; c < C; ++c) {
      const double* x = cur.data() + c * plane;
      double* y = next.data() + c * plane;

      // Semi-Lagrangian advection: departure point w - u, linear interpolation.
      const double u = params.advection_speed[c];
      const double fl = std::floor(u);
      const double frac = u - fl;
      const auto shift = static_cast<int64_t>(fl);
      for (int64_t h = 0; h < H; ++h) {
        const double* row = x + h * W;
        for (int64_t w = 0; w < W; ++w) {
          const int64_t a = ((w - shift) % W + W) % W;
          const int64_t b = ((w - shift - 1) % W + W) % W;
          adv[h * W + w] = (1.0 - frac) * row[a] + frac * row[b];
        }
      }

      // Conservative explicit diffusion on the advected field.
      const double d = params.diffusion_coeff[c];
      for (int64_t h = 0; h < H; ++h) {
        for (int64_t w = 0; w < W; ++w) {
          const double center = adv[h * W + w];
          const double east = adv[h * W + (w + 1) % W];
          const double west = adv[h * W + (w + W - 1) % W];
          double lat_flux = 0.0;
          if (h + 1 < H) lat_flux += lat.interface[h] * (adv[(h + 1) * W + w] - center);
          if (h > 0) lat_flux -= lat.interface[h - 1] * (center - adv[(h - 1) * W + w]);
          y[h * W + w] = center + d * (east - 2.0 * center + west) + d * lat.inv_area[h] * lat_flux;
        }
      }

      // Quadratic coupling and damping act on the pre-step state.
      if (params.coupling_strength != 0.0 || params.damping != 0.0) {
        const auto c1 = (c + 1) % C;
        const auto c2 = (c + 2) % C;
        const double* p = cur.data() + c1 * plane;
        const double* q = cur.data() + c2 * plane;
        for (int64_t i = 0; i < plane; ++i) {
          y[i] += params.coupling_strength * (p[i] - level[c1]) * (q[i] - level[c2]) -
                  params.damping * (x[i] - level[c]);
        }
      }

      if (params.forcing_amplitude != 0.0) {
        std::fill(forcing.begin(), forcing.end(), 0.0);
        const CounterRng rng(mix_seed({params.seed, kStreamForcing, static_cast<uint64_t>(step),
                                       static_cast<uint64_t>(c)}));
        add_modes(forcing, grid, rng, 6, std::max<int64_t>(1, W / 8), 3,
                  params.forcing_amplitude / std::sqrt(6.0), false);
        for (int64_t i = 0; i < plane; ++i) y[i] += forcing[i];
      }
    }
    cur.swap(next);
    store(step);
  }

  return Trajectory{grid, default_channel_names(C), out, 0};
}

// ---------------------------------------------------------------------------
// Normalization

std::vector<double> NormStats::residual_scale() const {
  std::vector<double> s(mean.size());
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = diff_stddev[c] / stddev[c];
  return s;
}

nlohmann::json NormStats::to_json() const {
  return {{"mean", mean}, {"stddev", stddev}, {"diff_stddev", diff_stddev}};
}

NormStats NormStats::from_json(const nlohmann::json& doc) {
  NormStats s;
  s.mean = doc.at("mean").get<std::vector<double>>();
  s.stddev = doc.at("stddev").get<std::vector<double>>();
  s.diff_stddev = doc.at("diff_stddev").get<std::vector<double>>();
  if (s.stddev.size() != s.mean.size() || s.diff_stddev.size() != s.mean.size()) {
    throw FormatError("norm stats arrays have mismatched lengths");
  }
  return s;
}

NormStats fit_norm_stats(const Trajectory& trajectory) {
  if (trajectory.size() < 1) throw InvalidArgument("cannot fit normalization on an empty trajectory");
  const auto x = trajectory.states.to(torch::kFloat64);
  const auto C = x.size(1);
  NormStats s;
  const auto per_channel = x.transpose(0, 1).reshape({C, -1});
  const auto mean = per_channel.mean(1);
  const auto std = per_channel.std(1, /*unbiased=*/false);
  for (int64_t c = 0; c < C; ++c) {
    const double m = mean[c].item<double>();
    const double sd = std[c].item<double>();
    if (!(sd > 1e-12 * (1.0 + std::abs(m)))) {
      throw InvalidArgument("channel " + std::to_string(c) + " has zero variance; cannot standardize");
    }
    s.mean.push_back(m);
    s.stddev.push_back(sd);
  }
  if (trajectory.size() >= 2) {
    const auto diff = (x.slice(0, 1) - x.slice(0, 0, -1)).transpose(0, 1).reshape({C, -1});
    const auto dstd = diff.std(1, false);
    for (int64_t c = 0; c < C; ++c) {
      const double v = dstd[c].item<double>();
      // Frozen channels have no step-to-step variability; fall back to the
      // state scale so the residual scale stays positive.
      s.diff_stddev.push_back(v > 1e-12 * s.stddev[c] ? v : s.stddev[c]);
    }
  } else {
    s.diff_stddev = s.stddev;
  }
  return s;
}

torch::Tensor normalize(const torch::Tensor& values, const NormStats& stats) {
  if (values.size(-3) != static_cast<int64_t>(stats.mean.size())) {
    throw InvalidArgument("channel count does not match norm stats");
  }
  return (values - per_channel_view(stats.mean, values)) / per_channel_view(stats.stddev, values);
}

torch::Tensor denormalize(const torch::Tensor& values, const NormStats& stats) {
  if (values.size(-3) != static_cast<int64_t>(stats.mean.size())) {
    throw InvalidArgument("channel count does not match norm stats");
  }
  return values * per_channel_view(stats.stddev, values) + per_channel_view(stats.mean, values);
}

StateTensor normalize(const StateTensor& state, const NormStats& stats) {
  return StateTensor{normalize(state.values, stats), state.time_index, state.channel_names};
}

StateTensor denormalize(const StateTensor& state, const NormStats& stats) {
  return StateTensor{denormalize(state.values, stats), state.time_index, state.channel_names};
}

// ---------------------------------------------------------------------------
// Forcings and windows

ForcingBuilder::ForcingBuilder(const GridSpec& grid, int64_t clock_period, uint64_t static_seed)
    : grid_(grid), clock_period_(clock_period), static_seed_(static_seed) {
  if (clock_period < 1) throw InvalidArgument("clock_period must be >= 1");
  const auto H = grid.n_lat;
  const auto W = grid.n_lon;
  std::vector<double> oro(H * W, 0.0);
  add_modes(oro, grid, CounterRng(mix_seed({static_seed, kStreamStatic})), 12,
            std::max<int64_t>(1, W / 4), 6, 1.0, true);
  auto oro_t = torch::tensor(oro, torch::kFloat64).view({H, W});
  const double sd = oro_t.std(false).item<double>();
  oro_t = (oro_t - oro_t.mean()) / (sd > 0 ? sd : 1.0);
  auto mask = (oro_t > 0).to(torch::kFloat64);
  statics_ = torch::stack({oro_t, mask}).to(torch::kFloat32);
}

torch::Tensor ForcingBuilder::at(int64_t t) const {
  const double phase = kTwoPi * static_cast<double>(((t % clock_period_) + clock_period_) % clock_period_) /
                       static_cast<double>(clock_period_);
  const auto H = grid_.n_lat;
  const auto W = grid_.n_lon;
  auto clock = torch::stack({torch::full({H, W}, std::sin(phase), torch::kFloat32),
                             torch::full({H, W}, std::cos(phase), torch::kFloat32)});
  return torch::cat({clock, statics_}, 0);
}

WindowSet::WindowSet(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
                     uint64_t static_seed)
    : start_time_(trajectory.start_time),
      stats_(stats),
      forcings_grid_(trajectory.grid),
      forcings_(trajectory.grid, clock_period, static_seed) {
  if (trajectory.size() < 3) {
    throw InvalidArgument("a trajectory needs at least 3 states to form a window, got " +
                          std::to_string(trajectory.size()));
  }
  normalized_ = normalize(trajectory.states.to(torch::kFloat32), stats).contiguous();
}

TrainingWindow WindowSet::at(int64_t i) const {
  if (i < 0 || i >= size()) throw InvalidArgument("window index out of range");
  TrainingWindow w;
  w.states = torch::cat({normalized_[i], normalized_[i + 1]}, 0);
  w.time_index = time_of(i);
  w.forcings = forcings_.at(w.time_index);
  w.target_residual = normalized_[i + 2] - normalized_[i + 1];
  return w;
}

std::pair<torch::Tensor, torch::Tensor> WindowSet::batch(const std::vector<int64_t>& indices) const {
  std::vector<torch::Tensor> inputs, targets;
  inputs.reserve(indices.size());
  targets.reserve(indices.size());
  for (auto i : indices) {
    const auto w = at(i);
    inputs.push_back(w.network_input());
    targets.push_back(w.target_residual);
  }
  return {torch::stack(inputs), torch::stack(targets)};
}

WindowSet make_windows(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
                       uint64_t static_seed) {
  return WindowSet(trajectory, stats, clock_period, static_seed);
}

SplitRanges split_ranges(int64_t n_states) {
  const int64_t train_end = (n_states * 8) / 10;
  const int64_t val_end = (n_states * 9) / 10;
  return SplitRanges{0, train_end, train_end, val_end, val_end, n_states};
}

// ---------------------------------------------------------------------------
// Persistence

void save_trajectory(const std::filesystem::path& dir, const Trajectory& trajectory,
                     const TrajectoryManifest& manifest) {
  std::filesystem::create_directories(dir);
  nlohmann::json chunks = nlohmann::json::array();
  const auto n = trajectory.size();
  for (int64_t begin = 0, k = 0; begin < n; begin += kTrajectoryChunk, ++k) {
    const auto end = std::min(n, begin + kTrajectoryChunk);
    char name[32];
    std::snprintf(name, sizeof(name), "chunk_%05lld.f32", static_cast<long long>(k));
    io::write_raw(dir / name, trajectory.states.slice(0, begin, end).to(torch::kFloat32));
    chunks.push_back({{"file", name}, {"steps", end - begin}});
  }
  nlohmann::json doc = {
      {"format", "toycast-trajectory"},
      {"version", kTrajectoryFormatVersion},
      {"grid", manifest.grid.to_json()},
      {"params", manifest.params.to_json()},
      {"channel_names", manifest.channel_names},
      {"norm_stats", manifest.stats.to_json()},
      {"n_steps", n},
      {"start_time", trajectory.start_time},
      {"chunk_steps", kTrajectoryChunk},
      {"layout", "C x H x W row-major per step, little-endian float32"},
      {"clock_period", manifest.clock_period},
      {"static_seed", manifest.static_seed},
      {"grid_layout_note", "cell-centered latitude bands, no pole row"},
      {"chunks", chunks},
  };
  io::write_json(dir / "manifest.json", doc);
}

TrajectoryManifest read_trajectory_manifest(const std::filesystem::path& dir) {
  const auto doc = io::read_json(dir / "manifest.json");
  try {
    if (doc.at("format").get<std::string>() != "toycast-trajectory") {
      throw FormatError("not a trajectory manifest: " + dir.string());
    }
    if (doc.at("version").get<int>() != kTrajectoryFormatVersion) {
      throw FormatError("trajectory format version " + std::to_string(doc.at("version").get<int>()) +
                        " is not supported (expected " + std::to_string(kTrajectoryFormatVersion) + ")");
    }
    TrajectoryManifest m;
    m.grid = GridSpec::from_json(doc.at("grid"));
    m.params = DynamicsParams::from_json(doc.at("params"));
    m.channel_names = doc.at("channel_names").get<std::vector<std::string>>();
    m.stats = NormStats::from_json(doc.at("norm_stats"));
    m.n_steps = doc.at("n_steps").get<int64_t>();
    m.clock_period = doc.at("clock_period").get<int64_t>();
    m.static_seed = doc.at("static_seed").get<uint64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt trajectory manifest in " + dir.string() + ": " + e.what());
  }
}

Trajectory load_trajectory(const std::filesystem::path& dir) {
  const auto m = read_trajectory_manifest(dir);
  const auto doc = io::read_json(dir / "manifest.json");
  const auto C = static_cast<int64_t>(m.channel_names.size());
  std::vector<torch::Tensor> parts;
  for (const auto& chunk : doc.at("chunks")) {
    const auto steps = chunk.at("steps").get<int64_t>();
    parts.push_back(io::read_raw(dir / chunk.at("file").get<std::string>(), "f32",
                                 {steps, C, m.grid.n_lat, m.grid.n_lon}));
  }
  auto states = torch::cat(parts, 0);
  if (states.size(0) != m.n_steps) throw FormatError("trajectory chunks do not add up to n_steps");
  return Trajectory{m.grid, m.channel_names, states, doc.value("start_time", int64_t{0})};
}

}  // namespace toycast
