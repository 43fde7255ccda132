#include "toycast/rollout.hpp"

#include <cstdio>
#include <limits>

#include "toycast/array_io.hpp"
#include "toycast/error.hpp"
#include "toycast/rng.hpp"

namespace toycast {

namespace fs = std::filesystem;

std::string to_string(MaskSchedule schedule) {
  return schedule == MaskSchedule::per_step ? "per_step" : "frozen";
}

MaskSchedule mask_schedule_from_string(const std::string& name) {
  if (name == "per_step") return MaskSchedule::per_step;
  if (name == "frozen") return MaskSchedule::frozen;
  throw InvalidArgument("unknown mask schedule '" + name + "' (expected per_step or frozen)");
}

bool EnsembleForecast::truncated() const {
  for (auto v : valid_leads) {
    if (v < n_leads()) return true;
  }
  return false;
}

torch::Tensor rollout_normalized(UNetImpl& model, const ForcingBuilder& forcings, const torch::Tensor& prev,
                                 const torch::Tensor& cur, const std::vector<int64_t>& times,
                                 const std::vector<uint64_t>& member_seeds, bool stochastic, int64_t n_steps,
                                 MaskSchedule schedule, std::vector<int64_t>* valid_steps) {
  if (n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
  const auto B = prev.size(0);
  if (cur.sizes() != prev.sizes() || static_cast<int64_t>(times.size()) != B ||
      static_cast<int64_t>(member_seeds.size()) != B) {
    throw InvalidArgument("rollout batch components disagree in size");
  }
  torch::NoGradGuard guard;
  const bool enabled = stochastic && model.config().stochastic_mode != StochasticMode::deterministic;
  const auto dtype = model.parameters().front().scalar_type();

  auto x_prev = prev.to(dtype);
  auto x_cur = cur.to(dtype);
  std::vector<torch::Tensor> outputs;
  std::vector<StochasticTag> tags(static_cast<std::size_t>(B));
  for (int64_t s = 0; s < n_steps; ++s) {
    std::vector<torch::Tensor> inputs;
    inputs.reserve(static_cast<std::size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
      const auto t = times[b] + s;
      inputs.push_back(torch::cat({x_prev[b], x_cur[b], forcings.at(t).to(dtype)}, 0));
      const uint64_t base = mix_seed({member_seeds[b], static_cast<uint64_t>(times[b])});
      tags[b] = StochasticTag{schedule == MaskSchedule::per_step ? mix_seed({base, static_cast<uint64_t>(s)}) : base,
                              enabled};
    }
    const auto residual = model.forward(torch::stack(inputs), std::span<const StochasticTag>(tags));
    auto next = x_cur + residual;
    outputs.push_back(next);
    x_prev = x_cur;
    x_cur = next;
  }
  auto out = torch::stack(outputs, 1).to(torch::kFloat32).contiguous();  // [B, L, C, H, W]

  const auto finite = torch::isfinite(out).flatten(2).all(2);  // [B, L]
  auto acc = finite.accessor<bool, 2>();
  std::vector<int64_t> valid(static_cast<std::size_t>(B), n_steps);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t s = 0; s < n_steps; ++s) {
      if (!acc[b][s]) {
        valid[b] = s;
        out[b].slice(0, s).fill_(std::numeric_limits<float>::quiet_NaN());
        break;
      }
    }
  }
  if (valid_steps) *valid_steps = std::move(valid);
  return out;
}

namespace {

void check_compatible(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw InvalidArgument("roll_forward needs at least one checkpoint");
  const auto& first = checkpoints.front();
  for (const auto& c : checkpoints) {
    if (!(c.grid == first.grid)) throw InvalidArgument("checkpoints disagree on the grid");
    if (c.stats.mean != first.stats.mean || c.stats.stddev != first.stats.stddev) {
      throw InvalidArgument("checkpoints disagree on normalization statistics");
    }
    if (c.clock_period != first.clock_period || c.static_seed != first.static_seed) {
      throw InvalidArgument("checkpoints disagree on forcing configuration");
    }
  }
}

}  // namespace

std::vector<EnsembleForecast> roll_forward(const std::vector<Checkpoint>& checkpoints,
                                           const std::vector<TrainingWindow>& init_windows, int64_t n_steps,
                                           int64_t members_per_checkpoint, uint64_t seed,
                                           const RolloutOptions& options) {
  check_compatible(checkpoints);
  if (n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
  if (members_per_checkpoint < 1) throw InvalidArgument("members_per_checkpoint must be >= 1");
  if (options.max_batch < 1) throw InvalidArgument("max_batch must be >= 1");
  const auto& ref = checkpoints.front();
  const int64_t K = static_cast<int64_t>(checkpoints.size());
  const int64_t N = members_per_checkpoint;
  const int64_t I = static_cast<int64_t>(init_windows.size());
  const ForcingBuilder forcings(ref.grid, ref.clock_period, ref.static_seed);

  std::vector<MemberId> ids;
  for (int64_t k = 0; k < K; ++k) {
    for (int64_t n = 0; n < N; ++n) {
      ids.push_back({k, mix_seed({seed, static_cast<uint64_t>(k), static_cast<uint64_t>(n)})});
    }
  }

  // [I][K*N] trajectories, each [L, C, H, W].
  std::vector<std::vector<torch::Tensor>> traj(static_cast<std::size_t>(I),
                                               std::vector<torch::Tensor>(static_cast<std::size_t>(K * N)));
  std::vector<std::vector<int64_t>> valid(static_cast<std::size_t>(I),
                                          std::vector<int64_t>(static_cast<std::size_t>(K * N)));
  for (int64_t k = 0; k < K; ++k) {
    auto model = instantiate(checkpoints[k], options.use_ema);
    model->eval();
    const int64_t C = model->config().out_channels;
    // Flattened (init, member) work items in deterministic order.
    std::vector<std::pair<int64_t, int64_t>> items;
    for (int64_t i = 0; i < I; ++i) {
      for (int64_t n = 0; n < N; ++n) items.emplace_back(i, n);
    }
    for (std::size_t begin = 0; begin < items.size(); begin += static_cast<std::size_t>(options.max_batch)) {
      const auto end = std::min(items.size(), begin + static_cast<std::size_t>(options.max_batch));
      std::vector<torch::Tensor> prev, cur;
      std::vector<int64_t> times;
      std::vector<uint64_t> seeds;
      for (auto j = begin; j < end; ++j) {
        const auto& w = init_windows[static_cast<std::size_t>(items[j].first)];
        if (w.states.size(0) != 2 * C) throw InvalidArgument("init window channel count does not match the model");
        prev.push_back(w.states.slice(0, 0, C));
        cur.push_back(w.states.slice(0, C, 2 * C));
        times.push_back(w.time_index);
        seeds.push_back(ids[static_cast<std::size_t>(k * N + items[j].second)].member_seed);
      }
      std::vector<int64_t> ok;
      const auto out = rollout_normalized(*model, forcings, torch::stack(prev), torch::stack(cur), times, seeds,
                                          options.stochastic, n_steps, options.mask_schedule, &ok);
      for (auto j = begin; j < end; ++j) {
        const auto [i, n] = items[j];
        traj[i][k * N + n] = out[static_cast<int64_t>(j - begin)];
        valid[i][k * N + n] = ok[j - begin];
      }
    }
  }

  std::vector<EnsembleForecast> result;
  result.reserve(static_cast<std::size_t>(I));
  for (int64_t i = 0; i < I; ++i) {
    EnsembleForecast f;
    f.members = denormalize(torch::stack(traj[i]), ref.stats).to(torch::kFloat32).contiguous();
    f.init_time = init_windows[i].time_index;
    f.member_ids = ids;
    for (int64_t l = 1; l <= n_steps; ++l) f.lead_steps.push_back(l);
    f.physical_units = true;
    f.grid = ref.grid;
    f.stats = ref.stats;
    f.channel_names = ref.channel_names;
    f.valid_leads = valid[i];
    result.push_back(std::move(f));
  }
  return result;
}

EnsembleForecast roll_forward(const std::vector<Checkpoint>& checkpoints, const TrainingWindow& init_window,
                              int64_t n_steps, int64_t members_per_checkpoint, uint64_t seed,
                              const RolloutOptions& options) {
  return roll_forward(checkpoints, std::vector<TrainingWindow>{init_window}, n_steps, members_per_checkpoint, seed,
                      options)
      .front();
}

void write_archive(const EnsembleForecast& forecast, const fs::path& dir) {
  if (!forecast.members.defined() || forecast.members.dim() != 5) {
    throw InvalidArgument("forecast members must be [M, L, C, H, W]");
  }
  if (static_cast<int64_t>(forecast.member_ids.size()) != forecast.n_members()) {
    throw InvalidArgument("member_ids length does not match member count");
  }
  fs::create_directories(dir);
  nlohmann::json members = nlohmann::json::array();
  for (int64_t m = 0; m < forecast.n_members(); ++m) {
    char name[32];
    std::snprintf(name, sizeof name, "member_%04lld.f32", static_cast<long long>(m));
    io::write_raw(dir / name, forecast.members[m].to(torch::kFloat32));
    const auto& id = forecast.member_ids[static_cast<std::size_t>(m)];
    members.push_back({{"file", name},
                       {"checkpoint_index", id.checkpoint_index},
                       {"member_seed", id.member_seed},
                       {"valid_leads", forecast.valid_leads.empty() ? forecast.n_leads()
                                                                    : forecast.valid_leads[static_cast<std::size_t>(m)]}});
  }
  const auto s = forecast.members.sizes();
  nlohmann::json doc{{"format", "toycast-forecast"},
                     {"version", kForecastFormatVersion},
                     {"n_members", s[0]},
                     {"n_leads", s[1]},
                     {"n_channels", s[2]},
                     {"n_lat", s[3]},
                     {"n_lon", s[4]},
                     {"init_time", forecast.init_time},
                     {"lead_steps", forecast.lead_steps},
                     {"units", forecast.physical_units ? "physical" : "normalized"},
                     {"channel_names", forecast.channel_names},
                     {"grid", forecast.grid.to_json()},
                     {"norm_stats", forecast.stats.to_json()},
                     {"members", members}};
  io::write_json(dir / "manifest.json", doc);
}

EnsembleForecast read_archive(const fs::path& dir) {
  const auto doc = io::read_json(dir / "manifest.json");
  if (doc.value("format", "") != "toycast-forecast") {
    throw FormatError(dir.string() + " is not a forecast archive (manifest format field missing or wrong)");
  }
  const int version = doc.value("version", -1);
  if (version != kForecastFormatVersion) {
    throw FormatError("forecast archive version " + std::to_string(version) + " in " + dir.string() +
                      " is not supported (expected " + std::to_string(kForecastFormatVersion) + ")");
  }
  try {
    EnsembleForecast f;
    const std::vector<int64_t> shape{doc.at("n_leads").get<int64_t>(), doc.at("n_channels").get<int64_t>(),
                                     doc.at("n_lat").get<int64_t>(), doc.at("n_lon").get<int64_t>()};
    const auto M = doc.at("n_members").get<int64_t>();
    const auto& members = doc.at("members");
    if (static_cast<int64_t>(members.size()) != M) throw FormatError("member list length disagrees with n_members");
    std::vector<torch::Tensor> arrays;
    for (const auto& m : members) {
      arrays.push_back(io::read_raw(dir / m.at("file").get<std::string>(), "f32", shape));
      f.member_ids.push_back({m.at("checkpoint_index").get<int64_t>(), m.at("member_seed").get<uint64_t>()});
      f.valid_leads.push_back(m.at("valid_leads").get<int64_t>());
    }
    f.members = M > 0 ? torch::stack(arrays) : torch::empty({0, shape[0], shape[1], shape[2], shape[3]});
    f.init_time = doc.at("init_time").get<int64_t>();
    f.lead_steps = doc.at("lead_steps").get<std::vector<int64_t>>();
    f.physical_units = doc.at("units").get<std::string>() == "physical";
    f.channel_names = doc.at("channel_names").get<std::vector<std::string>>();
    f.grid = GridSpec::from_json(doc.at("grid"));
    f.stats = NormStats::from_json(doc.at("norm_stats"));
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt forecast manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace toycast
