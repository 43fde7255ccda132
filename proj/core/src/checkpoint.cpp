#include "toycast/checkpoint.hpp"

#include <map>

#include "toycast/array_io.hpp"
#include "toycast/error.hpp"

namespace toycast {

namespace fs = std::filesystem;

nlohmann::json to_json(const HistoryPoint& p) {
  return {{"step", p.step},
          {"epoch", p.epoch},
          {"train_loss", p.train_loss},
          {"val_mae", p.val_mae},
          {"val_crps", p.val_crps},
          {"val_crps_by_lead", p.val_crps_by_lead}};
}

HistoryPoint history_point_from_json(const nlohmann::json& doc) {
  HistoryPoint p;
  p.step = doc.at("step").get<int64_t>();
  p.epoch = doc.at("epoch").get<int64_t>();
  p.train_loss = doc.at("train_loss").get<double>();
  p.val_mae = doc.at("val_mae").get<double>();
  p.val_crps = doc.at("val_crps").get<double>();
  p.val_crps_by_lead = doc.at("val_crps_by_lead").get<std::vector<double>>();
  return p;
}

namespace {

std::vector<std::pair<std::string, torch::Tensor>> as_pairs(const std::vector<NamedTensor>& v) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  out.reserve(v.size());
  for (const auto& t : v) out.emplace_back(t.name, t.tensor);
  return out;
}

std::vector<NamedTensor> as_named(const std::vector<std::pair<std::string, torch::Tensor>>& v) {
  std::vector<NamedTensor> out;
  out.reserve(v.size());
  for (const auto& [n, t] : v) out.push_back({n, t});
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& c) {
  fs::create_directories(dir);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& p : c.history) history.push_back(to_json(p));

  nlohmann::json doc{
      {"format", "toycast-checkpoint"},
      {"version", kCheckpointFormatVersion},
      {"model", c.model.to_json()},
      {"grid", c.grid.to_json()},
      {"norm_stats", c.stats.to_json()},
      {"clock_period", c.clock_period},
      {"static_seed", c.static_seed},
      {"channel_names", c.channel_names},
      {"stage", c.stage},
      {"seed", c.seed},
      {"global_step", c.global_step},
      {"epoch", c.epoch},
      {"ema_updates", c.ema_updates},
      {"optim", c.optim.to_json()},
      {"recent_losses", c.recent_losses},
      {"skipped_steps", c.skipped_steps},
      {"history", history},
      {"manifest", c.manifest},
      {"weights", io::write_named_arrays(dir, "weight", as_pairs(c.weights))},
      {"ema", io::write_named_arrays(dir, "ema", as_pairs(c.ema))},
      {"optimizer_state", io::write_named_arrays(dir, "optstate", c.optimizer_state)},
  };
  io::write_json(dir / "manifest.json", doc);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto doc = io::read_json(dir / "manifest.json");
  if (doc.value("format", "") != "toycast-checkpoint") {
    throw FormatError(dir.string() + " is not a checkpoint directory");
  }
  if (doc.value("version", -1) != kCheckpointFormatVersion) {
    throw FormatError("checkpoint version " + doc.value("version", nlohmann::json(-1)).dump() + " in " +
                      dir.string() + ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  try {
    Checkpoint c;
    c.model = ModelConfig::from_json(doc.at("model"));
    c.grid = GridSpec::from_json(doc.at("grid"));
    c.stats = NormStats::from_json(doc.at("norm_stats"));
    c.clock_period = doc.at("clock_period").get<int64_t>();
    c.static_seed = doc.at("static_seed").get<uint64_t>();
    c.channel_names = doc.at("channel_names").get<std::vector<std::string>>();
    c.stage = doc.at("stage").get<std::string>();
    c.seed = doc.at("seed").get<uint64_t>();
    c.global_step = doc.at("global_step").get<int64_t>();
    c.epoch = doc.at("epoch").get<int64_t>();
    c.ema_updates = doc.at("ema_updates").get<int64_t>();
    c.optim = OptimConfig::from_json(doc.at("optim"));
    c.recent_losses = doc.at("recent_losses").get<std::vector<double>>();
    c.skipped_steps = doc.at("skipped_steps").get<int64_t>();
    for (const auto& p : doc.at("history")) c.history.push_back(history_point_from_json(p));
    c.manifest = doc.at("manifest");
    c.weights = as_named(io::read_named_arrays(dir, doc.at("weights")));
    c.ema = as_named(io::read_named_arrays(dir, doc.at("ema")));
    c.optimizer_state = io::read_named_arrays(dir, doc.at("optimizer_state"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> snapshot_parameters(const UNetImpl& model) {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : model.named_parameter_list()) out.push_back({name, p.detach().clone()});
  return out;
}

void load_parameters(UNetImpl& model, const std::vector<NamedTensor>& values, bool allow_missing) {
  torch::NoGradGuard guard;
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.tensor;
  for (auto [name, p] : model.named_parameter_list()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (allow_missing) continue;
      throw FormatError("checkpoint has no value for parameter '" + name + "'");
    }
    if (it->second->sizes() != p.sizes()) {
      throw FormatError("shape mismatch for parameter '" + name + "': " + c10::str(it->second->sizes()) +
                        " vs " + c10::str(p.sizes()));
    }
    p.copy_(*it->second);
  }
}

UNet instantiate(const Checkpoint& checkpoint, bool use_ema) {
  auto model = build(checkpoint.model, checkpoint.grid);
  model->set_residual_scale(checkpoint.stats.residual_scale());
  load_parameters(*model, use_ema ? checkpoint.ema : checkpoint.weights);
  return model;
}

}  // namespace toycast
