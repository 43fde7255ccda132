#include "toycast/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "toycast/error.hpp"

namespace toycast {

OptimConfig OptimConfig::stage1_full() {
  OptimConfig c;
  c.muon_peak_lr = 3e-3;
  c.adamw_peak_lr = 3e-4;
  c.muon_weight_decay = 0.1;
  c.adamw_weight_decay = 0.03;
  c.warmup_steps = 1500;
  return c;
}

OptimConfig OptimConfig::stage2_full() {
  auto c = stage1_full();
  c.muon_peak_lr = 7e-3;
  c.adamw_peak_lr = 7e-5;
  return c;
}

void OptimConfig::validate() const {
  if (!(muon_peak_lr > 0.0) || !(adamw_peak_lr > 0.0)) throw InvalidArgument("learning rates must be > 0");
  if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
    throw InvalidArgument("need 0 <= warmup_steps <= total_steps");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (ns_iterations < 1) throw InvalidArgument("ns_iterations must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw InvalidArgument("ema_decay must be in [0, 1]");
  if (muon_weight_decay < 0.0 || adamw_weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
}

nlohmann::json OptimConfig::to_json() const {
  return {{"muon_peak_lr", muon_peak_lr},
          {"adamw_peak_lr", adamw_peak_lr},
          {"muon_weight_decay", muon_weight_decay},
          {"adamw_weight_decay", adamw_weight_decay},
          {"warmup_steps", warmup_steps},
          {"total_steps", total_steps},
          {"momentum", momentum},
          {"nesterov", nesterov},
          {"ns_iterations", ns_iterations},
          {"ns_coefficients", {kNsA, kNsB, kNsC}},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"ema_decay", ema_decay},
          {"use_muon", use_muon},
          {"adamw_for_output_layer", adamw_for_output_layer}};
}

OptimConfig OptimConfig::from_json(const nlohmann::json& doc) {
  OptimConfig c;
  c.muon_peak_lr = doc.at("muon_peak_lr").get<double>();
  c.adamw_peak_lr = doc.at("adamw_peak_lr").get<double>();
  c.muon_weight_decay = doc.at("muon_weight_decay").get<double>();
  c.adamw_weight_decay = doc.at("adamw_weight_decay").get<double>();
  c.warmup_steps = doc.at("warmup_steps").get<int64_t>();
  c.total_steps = doc.at("total_steps").get<int64_t>();
  c.momentum = doc.at("momentum").get<double>();
  c.nesterov = doc.at("nesterov").get<bool>();
  c.ns_iterations = doc.at("ns_iterations").get<int64_t>();
  c.adam_beta1 = doc.at("adam_beta1").get<double>();
  c.adam_beta2 = doc.at("adam_beta2").get<double>();
  c.adam_eps = doc.at("adam_eps").get<double>();
  c.ema_decay = doc.at("ema_decay").get<double>();
  c.use_muon = doc.at("use_muon").get<bool>();
  c.adamw_for_output_layer = doc.at("adamw_for_output_layer").get<bool>();
  c.validate();
  return c;
}

double schedule_factor(int64_t step, int64_t warmup_steps, int64_t total_steps) {
  if (step <= 0) return warmup_steps > 0 ? 0.0 : 1.0;
  if (step < warmup_steps) return static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return total_steps > warmup_steps ? 0.0 : 1.0;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(int64_t step, const OptimConfig& config, ParamGroup group) {
  const double peak = group == ParamGroup::muon ? config.muon_peak_lr : config.adamw_peak_lr;
  return peak * schedule_factor(step, config.warmup_steps, config.total_steps);
}

torch::Tensor newton_schulz_orthogonalize(const torch::Tensor& matrix, int64_t iterations, bool* was_zero) {
  if (matrix.dim() != 2) throw InvalidArgument("newton_schulz_orthogonalize expects a 2-D matrix");
  if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
  if (was_zero) *was_zero = false;

  const auto out_type = matrix.scalar_type();
  // Reduced precision only for very large matrices; small ones stay exact
  // enough for deterministic tests.
  auto x = matrix.numel() > 1'000'000 ? matrix.to(torch::kBFloat16) : matrix.clone();
  const double norm = x.to(torch::kFloat64).norm().item<double>();
  if (norm == 0.0) {
    if (was_zero) *was_zero = true;
    return torch::zeros_like(matrix);
  }
  const bool tall = x.size(0) > x.size(1);
  if (tall) x = x.t();
  x = x / (norm + 1e-7);
  for (int64_t i = 0; i < iterations; ++i) {
    const auto a = torch::mm(x, x.t());
    const auto b = kNsB * a + kNsC * torch::mm(a, a);
    x = kNsA * x + torch::mm(b, x);
  }
  if (tall) x = x.t();
  return x.to(out_type).contiguous();
}

void ema_update(std::vector<torch::Tensor>& ema, const std::vector<torch::Tensor>& current, double decay) {
  if (ema.size() != current.size()) throw InvalidArgument("EMA and parameter lists differ in length");
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < ema.size(); ++i) {
    if (ema[i].sizes() != current[i].sizes()) throw InvalidArgument("EMA shape mismatch at index " + std::to_string(i));
    ema[i].mul_(decay).add_(current[i].detach(), 1.0 - decay);
  }
}

// ---------------------------------------------------------------------------
// HybridOptimizer

HybridOptimizer::HybridOptimizer(std::vector<NamedTensor> params, OptimConfig config)
    : config_(std::move(config)) {
  config_.validate();
  for (auto& p : params) {
    Slot s{p.name, p.tensor, ParamGroup::adamw, {}, {}, {}};
    s.group = group_of(p.name);
    if (s.group == ParamGroup::adamw || p.tensor.dim() < 2) {
      s.group = ParamGroup::adamw;
      s.exp_avg = torch::zeros_like(p.tensor);
      s.exp_avg_sq = torch::zeros_like(p.tensor);
    } else {
      s.momentum = torch::zeros_like(p.tensor);
    }
    slots_.push_back(std::move(s));
  }
}

ParamGroup HybridOptimizer::group_of(const std::string& name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s.group;
  }
  if (!config_.use_muon) return ParamGroup::adamw;
  if (config_.adamw_for_output_layer && name.rfind("out_conv.", 0) == 0) return ParamGroup::adamw;
  return ParamGroup::muon;  // 1-D tensors are demoted at construction
}

void HybridOptimizer::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) s.param.mutable_grad().zero_();
  }
}

void HybridOptimizer::step(int64_t step_index) {
  torch::NoGradGuard guard;
  for (const auto& s : slots_) {
    const auto& g = s.param.grad();
    if (g.defined() && !torch::isfinite(g).all().item<bool>()) {
      throw NumericError("non-finite gradient in parameter '" + s.name + "'");
    }
  }

  ++updates_;
  zero_updates_.clear();
  const double muon_lr = lr_at(step_index, config_, ParamGroup::muon);
  const double adam_lr = lr_at(step_index, config_, ParamGroup::adamw);
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(updates_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(updates_));

  for (auto& s : slots_) {
    const auto& g = s.param.grad();
    if (!g.defined()) continue;
    if (s.group == ParamGroup::muon) {
      const double beta = config_.momentum;
      s.momentum.lerp_(g, 1.0 - beta);
      const auto update = config_.nesterov ? g.lerp(s.momentum, beta) : s.momentum;
      const auto rows = s.param.size(0);
      const auto mat = update.reshape({rows, -1});
      bool was_zero = false;
      const auto ortho = newton_schulz_orthogonalize(mat, config_.ns_iterations, &was_zero);
      if (was_zero) zero_updates_.push_back(s.name);
      const double shape_scale =
          std::sqrt(std::max(1.0, static_cast<double>(rows) / static_cast<double>(mat.size(1))));
      s.param.mul_(1.0 - muon_lr * config_.muon_weight_decay);
      s.param.add_(ortho.view_as(s.param), -muon_lr * shape_scale);
    } else {
      s.exp_avg.mul_(b1).add_(g, 1.0 - b1);
      s.exp_avg_sq.mul_(b2).addcmul_(g, g, 1.0 - b2);
      const auto denom = (s.exp_avg_sq / bias2).sqrt_().add_(config_.adam_eps);
      s.param.mul_(1.0 - adam_lr * config_.adamw_weight_decay);
      s.param.addcdiv_(s.exp_avg, denom, -adam_lr / bias1);
    }
  }
}

std::vector<std::pair<std::string, torch::Tensor>> HybridOptimizer::state_arrays() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  out.emplace_back("updates", torch::tensor({static_cast<double>(updates_)}, torch::kFloat64));
  for (const auto& s : slots_) {
    if (s.group == ParamGroup::muon) {
      out.emplace_back("muon_momentum/" + s.name, s.momentum);
    } else {
      out.emplace_back("adam_m/" + s.name, s.exp_avg);
      out.emplace_back("adam_v/" + s.name, s.exp_avg_sq);
    }
  }
  return out;
}

void HybridOptimizer::load_state_arrays(const std::vector<std::pair<std::string, torch::Tensor>>& arrays) {
  torch::NoGradGuard guard;
  std::map<std::string, torch::Tensor> by_name(arrays.begin(), arrays.end());
  auto fetch = [&](const std::string& key, torch::Tensor& dst) {
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw FormatError("optimizer state missing '" + key + "'");
    if (it->second.sizes() != dst.sizes()) throw FormatError("optimizer state shape mismatch for '" + key + "'");
    dst.copy_(it->second);
  };
  const auto it = by_name.find("updates");
  if (it == by_name.end()) throw FormatError("optimizer state missing update counter");
  updates_ = static_cast<int64_t>(it->second.item<double>());
  for (auto& s : slots_) {
    if (s.group == ParamGroup::muon) {
      fetch("muon_momentum/" + s.name, s.momentum);
    } else {
      fetch("adam_m/" + s.name, s.exp_avg);
      fetch("adam_v/" + s.name, s.exp_avg_sq);
    }
  }
}

// ---------------------------------------------------------------------------
// EmaTracker

EmaTracker::EmaTracker(const std::vector<NamedTensor>& params, double decay, bool warmup)
    : decay_(decay), warmup_(warmup) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidArgument("EMA decay must be in [0, 1]");
  for (const auto& p : params) averages_.push_back({p.name, p.tensor.detach().clone()});
}

double EmaTracker::effective_decay() const {
  if (!warmup_) return decay_;
  const double n = static_cast<double>(updates_);
  return std::min(decay_, (1.0 + n) / (10.0 + n));
}

void EmaTracker::update(const std::vector<NamedTensor>& params) {
  if (params.size() != averages_.size()) throw InvalidArgument("EMA parameter count changed");
  std::vector<torch::Tensor> ema, cur;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ema.push_back(averages_[i].tensor);
    cur.push_back(params[i].tensor);
  }
  ema_update(ema, cur, effective_decay());
  ++updates_;
}

}  // namespace toycast
