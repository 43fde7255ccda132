#include "toycast/backbone.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "toycast/error.hpp"
#include "toycast/rng.hpp"

namespace toycast {

namespace {

constexpr uint64_t kNoiseStream = 0xADA1;

int64_t pick_groups(int64_t channels) {
  for (int64_t g = std::min<int64_t>(32, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

int64_t pick_heads(int64_t channels, int64_t per_head) {
  int64_t heads = std::max<int64_t>(1, channels / std::max<int64_t>(1, per_head));
  while (channels % heads != 0) --heads;
  return heads;
}

torch::Tensor make_param(std::vector<int64_t> shape, const torch::TensorOptions& opts) {
  return torch::empty(shape, opts);
}

// FNV-1a, stable across platforms and runs.
uint64_t name_hash(const std::string& name) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(StochasticMode mode) {
  switch (mode) {
    case StochasticMode::dropout: return "dropout";
    case StochasticMode::adaln_noise: return "adaln_noise";
    case StochasticMode::deterministic: return "deterministic";
  }
  return "?";
}

StochasticMode stochastic_mode_from_string(const std::string& name) {
  if (name == "dropout") return StochasticMode::dropout;
  if (name == "adaln_noise") return StochasticMode::adaln_noise;
  if (name == "deterministic") return StochasticMode::deterministic;
  throw InvalidArgument("unknown stochastic mode '" + name + "' (dropout | adaln_noise | deterministic)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.in_channels = 172;
  c.out_channels = 83;
  c.base_width = 320;
  c.channel_multipliers = {1, 2, 3, 4};
  c.blocks_per_resolution = 4;
  c.attention_levels = {0, 1};
  c.dropout_rate = 0.1;
  return c;
}

ModelConfig ModelConfig::desk(int64_t n_channels, int64_t n_forcings) {
  ModelConfig c;
  c.in_channels = 2 * n_channels + n_forcings;
  c.out_channels = n_channels;
  c.base_width = 32;
  c.channel_multipliers = {1, 2, 3, 4};
  c.blocks_per_resolution = 2;
  c.attention_levels = {0, 1};
  return c;
}

void ModelConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw InvalidArgument("channel counts must be positive");
  if (base_width < 1) throw InvalidArgument("base_width must be positive");
  if (channel_multipliers.empty()) throw InvalidArgument("channel_multipliers must be nonempty");
  for (auto m : channel_multipliers) {
    if (m < 1) throw InvalidArgument("channel multipliers must be positive");
  }
  if (blocks_per_resolution < 1) throw InvalidArgument("blocks_per_resolution must be >= 1");
  for (auto l : attention_levels) {
    if (l < 0 || l >= n_levels()) {
      throw InvalidArgument("attention level " + std::to_string(l) + " is not a valid resolution index");
    }
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must be in [0, 1)");
  if (stochastic_mode == StochasticMode::adaln_noise && noise_dim < 1) {
    throw InvalidArgument("noise_dim must be positive in adaln_noise mode");
  }
  if (channels_per_head < 1 || embedding_multiplier < 1) {
    throw InvalidArgument("channels_per_head and embedding_multiplier must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"out_channels", out_channels},
          {"base_width", base_width},
          {"channel_multipliers", channel_multipliers},
          {"blocks_per_resolution", blocks_per_resolution},
          {"attention_levels", attention_levels},
          {"dropout_rate", dropout_rate},
          {"stochastic_mode", to_string(stochastic_mode)},
          {"noise_dim", noise_dim},
          {"channels_per_head", channels_per_head},
          {"embedding_multiplier", embedding_multiplier},
          {"zero_init_output", zero_init_output},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  c.in_channels = doc.at("in_channels").get<int64_t>();
  c.out_channels = doc.at("out_channels").get<int64_t>();
  c.base_width = doc.at("base_width").get<int64_t>();
  c.channel_multipliers = doc.at("channel_multipliers").get<std::vector<int64_t>>();
  c.blocks_per_resolution = doc.at("blocks_per_resolution").get<int64_t>();
  c.attention_levels = doc.at("attention_levels").get<std::vector<int64_t>>();
  c.dropout_rate = doc.at("dropout_rate").get<double>();
  c.stochastic_mode = stochastic_mode_from_string(doc.at("stochastic_mode").get<std::string>());
  c.noise_dim = doc.at("noise_dim").get<int64_t>();
  c.channels_per_head = doc.at("channels_per_head").get<int64_t>();
  c.embedding_multiplier = doc.at("embedding_multiplier").get<int64_t>();
  c.zero_init_output = doc.at("zero_init_output").get<bool>();
  c.init_seed = doc.at("init_seed").get<uint64_t>();
  c.validate();
  return c;
}

namespace detail {

// ---------------------------------------------------------------------------
// Layers

PeriodicConvImpl::PeriodicConvImpl(int64_t in, int64_t out, int64_t kernel,
                                   const torch::TensorOptions& opts)
    : kernel_(kernel) {
  weight = register_parameter("weight", make_param({out, in, kernel, kernel}, opts));
  bias = register_parameter("bias", make_param({out}, opts));
}

torch::Tensor PeriodicConvImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  if (kernel_ == 1) return F::conv2d(x, weight, F::Conv2dFuncOptions().bias(bias));
  const int64_t p = kernel_ / 2;
  auto padded = F::pad(x, F::PadFuncOptions({p, p, 0, 0}).mode(torch::kCircular));
  padded = F::pad(padded, F::PadFuncOptions({0, 0, p, p}).mode(torch::kConstant).value(0.0));
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().bias(bias));
}

GroupNormLayerImpl::GroupNormLayerImpl(int64_t channels, const torch::TensorOptions& opts)
    : groups(pick_groups(channels)) {
  weight = register_parameter("weight", make_param({channels}, opts));
  bias = register_parameter("bias", make_param({channels}, opts));
}

torch::Tensor GroupNormLayerImpl::forward(const torch::Tensor& x) {
  return torch::group_norm(x, groups, weight, bias, 1e-5);
}

LinearLayerImpl::LinearLayerImpl(int64_t in, int64_t out, const torch::TensorOptions& opts) {
  weight = register_parameter("weight", make_param({out, in}, opts));
  bias = register_parameter("bias", make_param({out}, opts));
}

torch::Tensor LinearLayerImpl::forward(const torch::Tensor& x) { return torch::linear(x, weight, bias); }

// ---------------------------------------------------------------------------
// Residual block

UNetBlockImpl::UNetBlockImpl(int64_t in, int64_t out, Resample resample, bool attention,
                             const ModelConfig& cfg, int64_t dropout_layer_id,
                             const torch::TensorOptions& opts)
    : in_(in),
      out_(out),
      mode_(resample),
      dropout_rate_(cfg.stochastic_mode == StochasticMode::dropout ? cfg.dropout_rate : 0.0),
      adaptive_(cfg.stochastic_mode == StochasticMode::adaln_noise),
      dropout_layer_id_(dropout_layer_id) {
  norm0_ = register_module("norm0", GroupNormLayer(in, opts));
  conv0_ = register_module("conv0", PeriodicConv(in, out, 3, opts));
  if (adaptive_) {
    const int64_t emb = cfg.base_width * cfg.embedding_multiplier;
    affine_ = register_module("affine", LinearLayer(emb, 2 * out, opts));
  }
  norm1_ = register_module("norm1", GroupNormLayer(out, opts));
  conv1_ = register_module("conv1", PeriodicConv(out, out, 3, opts));
  if (in != out) skip_ = register_module("skip", PeriodicConv(in, out, 1, opts));
  if (attention) {
    heads_ = pick_heads(out, cfg.channels_per_head);
    norm2_ = register_module("norm2", GroupNormLayer(out, opts));
    qkv_ = register_module("qkv", PeriodicConv(out, 3 * out, 1, opts));
    proj_ = register_module("proj", PeriodicConv(out, out, 1, opts));
  }
}

torch::Tensor UNetBlockImpl::resample(const torch::Tensor& x, std::pair<int64_t, int64_t> target) const {
  namespace F = torch::nn::functional;
  if (mode_ == Resample::down) {
    return F::avg_pool2d(x, F::AvgPool2dFuncOptions({2, 2}).stride({2, 2}).ceil_mode(true));
  }
  if (mode_ == Resample::up) {
    const auto [th, tw] = target;
    const int64_t w = x.size(-1);
    auto opts = F::InterpolateFuncOptions().mode(torch::kBilinear).align_corners(false);
    if (tw == 2 * w) {
      // Wrap one column on each side so interpolation at the seam sees its
      // periodic neighbour, then crop back.
      auto wrapped = torch::cat({x.slice(-1, w - 1, w), x, x.slice(-1, 0, 1)}, -1);
      auto up = F::interpolate(wrapped, opts.size(std::vector<int64_t>{th, 2 * (w + 2)}));
      return up.slice(-1, 2, 2 + tw);
    }
    return F::interpolate(x, opts.size(std::vector<int64_t>{th, tw}));
  }
  return x;
}

torch::Tensor UNetBlockImpl::dropout(const torch::Tensor& x, const ForwardContext& ctx) const {
  if (dropout_rate_ <= 0.0) return x;
  const auto B = x.size(0);
  bool any = false;
  for (const auto& t : ctx.tags) any = any || t.enabled;
  if (!any) return x;

  const int64_t per_sample = x.numel() / B;
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  auto mask = torch::empty({B, per_sample}, torch::kFloat32);
  float* m = mask.data_ptr<float>();
  for (int64_t b = 0; b < B; ++b) {
    float* row = m + b * per_sample;
    const auto& tag = ctx.tags[static_cast<std::size_t>(b)];
    if (!tag.enabled) {
      std::fill(row, row + per_sample, 1.0f);
      continue;
    }
    const CounterRng rng(mix_seed({tag.member_seed, static_cast<uint64_t>(dropout_layer_id_)}));
    for (int64_t i = 0; i < per_sample; ++i) {
      row[i] = rng.uniform(static_cast<uint64_t>(i)) < dropout_rate_ ? 0.0f : static_cast<float>(keep_scale);
    }
  }
  return x * mask.to(x.scalar_type()).view(x.sizes());
}

torch::Tensor UNetBlockImpl::forward(const torch::Tensor& input, const ForwardContext& ctx,
                                     std::pair<int64_t, int64_t> target) {
  auto x = torch::silu(norm0_(input));
  x = conv0_(resample(x, target));

  if (adaptive_) {
    auto params = affine_(ctx.embedding).unsqueeze(2).unsqueeze(3);
    auto chunks = params.chunk(2, 1);
    x = torch::silu(torch::addcmul(chunks[1], norm1_(x), chunks[0] + 1.0));
  } else {
    x = torch::silu(norm1_(x));
  }
  x = conv1_(dropout(x, ctx));

  auto skip = resample(input, target);
  if (skip_) skip = skip_(skip);
  x = x + skip;

  if (heads_ > 0) {
    const auto B = x.size(0);
    const auto H = x.size(2);
    const auto W = x.size(3);
    const auto ch = out_ / heads_;
    auto qkv = qkv_(norm2_(x)).reshape({B * heads_, ch, 3, H * W}).unbind(2);
    auto weights = torch::einsum("ncq,nck->nqk", {qkv[0], qkv[1] / std::sqrt(static_cast<double>(ch))})
                       .softmax(2);
    auto attended = torch::einsum("nqk,nck->ncq", {weights, qkv[2]});
    x = proj_(attended.reshape({B, out_, H, W})) + x;
  }
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// UNet

UNetImpl::UNetImpl(const ModelConfig& config, const GridSpec& grid, BuildOptions options)
    : config_(config), grid_(grid), shape_only_(options.shape_only) {
  using detail::Resample;
  using detail::UNetBlock;
  config_.validate();
  grid_.validate();
  const auto stride = config_.total_stride();
  if (grid_.n_lat < stride || grid_.n_lon < stride) {
    throw InvalidArgument("grid " + std::to_string(grid_.n_lat) + "x" + std::to_string(grid_.n_lon) +
                          " is smaller than the total downsampling factor " + std::to_string(stride));
  }

  auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  if (shape_only_) opts = opts.device(torch::kMeta);

  const auto L = config_.n_levels();
  auto has_attention = [&](int64_t level) {
    const int64_t coarse_index = L - 1 - level;
    for (auto a : config_.attention_levels) {
      if (a == coarse_index) return true;
    }
    return false;
  };

  if (config_.stochastic_mode == StochasticMode::adaln_noise) {
    const int64_t emb = config_.base_width * config_.embedding_multiplier;
    mapping_ = register_module(
        "mapping", torch::nn::Sequential(detail::LinearLayer(config_.noise_dim, emb, opts),
                                         torch::nn::SiLU(), detail::LinearLayer(emb, emb, opts),
                                         torch::nn::SiLU()));
  }

  int64_t layer_id = 0;
  int64_t cout = config_.in_channels;
  std::vector<int64_t> skips;
  for (int64_t level = 0; level < L; ++level) {
    const auto width = config_.base_width * config_.channel_multipliers[level];
    const auto prefix = "enc_L" + std::to_string(level);
    if (level == 0) {
      input_conv_ = register_module("input_conv", detail::PeriodicConv(cout, width, 3, opts));
      cout = width;
    } else {
      encoder_.push_back(register_module(
          prefix + "_down",
          UNetBlock(cout, cout, Resample::down, has_attention(level), config_, layer_id++, opts)));
      encoder_level_.push_back(static_cast<int>(level));
    }
    skips.push_back(cout);
    for (int64_t i = 0; i < config_.blocks_per_resolution; ++i) {
      encoder_.push_back(register_module(
          prefix + "_block" + std::to_string(i),
          UNetBlock(cout, width, Resample::none, has_attention(level), config_, layer_id++, opts)));
      encoder_level_.push_back(static_cast<int>(level));
      cout = width;
      skips.push_back(cout);
    }
  }

  for (int64_t level = L - 1; level >= 0; --level) {
    const auto width = config_.base_width * config_.channel_multipliers[level];
    const auto prefix = "dec_L" + std::to_string(level);
    if (level == L - 1) {
      decoder_.push_back(register_module(
          prefix + "_in0", UNetBlock(cout, cout, Resample::none, true, config_, layer_id++, opts)));
      decoder_.push_back(register_module(
          prefix + "_in1", UNetBlock(cout, cout, Resample::none, false, config_, layer_id++, opts)));
      decoder_takes_skip_.push_back(false);
      decoder_takes_skip_.push_back(false);
    } else {
      decoder_.push_back(register_module(
          prefix + "_up",
          UNetBlock(cout, cout, Resample::up, has_attention(level), config_, layer_id++, opts)));
      decoder_takes_skip_.push_back(false);
    }
    for (int64_t i = 0; i <= config_.blocks_per_resolution; ++i) {
      const auto cin = cout + skips.back();
      skips.pop_back();
      decoder_.push_back(register_module(
          prefix + "_block" + std::to_string(i),
          UNetBlock(cin, width, Resample::none, has_attention(level), config_, layer_id++, opts)));
      decoder_takes_skip_.push_back(true);
      cout = width;
    }
  }

  out_norm_ = register_module("out_norm", detail::GroupNormLayer(cout, opts));
  out_conv_ = register_module("out_conv", detail::PeriodicConv(cout, config_.out_channels, 3, opts));
  residual_scale_ = register_buffer("residual_scale",
                                    torch::ones({config_.out_channels, 1, 1}, opts));
}

void UNetImpl::set_residual_scale(const std::vector<double>& scale) {
  if (static_cast<int64_t>(scale.size()) != config_.out_channels) {
    throw InvalidArgument("residual scale must have out_channels entries");
  }
  if (shape_only_) return;
  torch::NoGradGuard guard;
  residual_scale_.copy_(torch::tensor(scale, torch::kFloat64).view({-1, 1, 1}));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& input, std::span<const StochasticTag> tags) {
  if (shape_only_) throw InvalidArgument("shape-only models cannot run forward passes");
  if (input.dim() != 4 || input.size(1) != config_.in_channels || input.size(2) != grid_.n_lat ||
      input.size(3) != grid_.n_lon) {
    throw InvalidArgument("expected input [B, " + std::to_string(config_.in_channels) + ", " +
                          std::to_string(grid_.n_lat) + ", " + std::to_string(grid_.n_lon) + "], got " +
                          c10::str(input.sizes()));
  }
  if (static_cast<int64_t>(tags.size()) != input.size(0)) {
    throw InvalidArgument("need one stochastic tag per sample");
  }

  detail::ForwardContext ctx{tags, {}};
  if (mapping_) {
    const auto B = input.size(0);
    auto noise = torch::zeros({B, config_.noise_dim}, torch::kFloat64);
    auto acc = noise.accessor<double, 2>();
    for (int64_t b = 0; b < B; ++b) {
      if (!tags[b].enabled) continue;
      const CounterRng rng(mix_seed({tags[b].member_seed, kNoiseStream}));
      for (int64_t i = 0; i < config_.noise_dim; ++i) acc[b][i] = rng.normal(static_cast<uint64_t>(i));
    }
    ctx.embedding = mapping_->forward(noise.to(input.scalar_type()));
  }

  auto x = input_conv_(input);
  std::vector<torch::Tensor> skips{x};
  for (auto& block : encoder_) {
    x = block->forward(x, ctx);
    skips.push_back(x);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    if (decoder_takes_skip_[i]) {
      x = torch::cat({x, skips.back()}, 1);
      skips.pop_back();
      x = decoder_[i]->forward(x, ctx);
    } else {
      const auto& next = skips.back();
      x = decoder_[i]->forward(x, ctx, {next.size(2), next.size(3)});
    }
  }
  x = out_conv_(torch::silu(out_norm_(x)));
  return x * residual_scale_;
}

torch::Tensor UNetImpl::forward(const torch::Tensor& input, const StochasticTag& tag) {
  const auto tags = expand_tags(tag, input.size(0));
  return forward(input, std::span<const StochasticTag>(tags));
}

std::vector<std::pair<std::string, torch::Tensor>> UNetImpl::named_parameter_list() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters(true)) out.emplace_back(item.key(), item.value());
  return out;
}

int64_t UNetImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters(true)) n += p.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Construction helpers

namespace {

enum class InitRule { ones, zeros, fan_in_uniform };

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

InitRule rule_for(const std::string& name, const ModelConfig& cfg) {
  const bool is_norm = contains(name, "norm0.") || contains(name, "norm1.") || contains(name, "norm2.") ||
                       contains(name, "out_norm.");
  if (is_norm) return ends_with(name, ".weight") ? InitRule::ones : InitRule::zeros;
  if (contains(name, "affine.")) return InitRule::zeros;
  if (cfg.zero_init_output && contains(name, "out_conv.")) return InitRule::zeros;
  return InitRule::fan_in_uniform;
}

void fill_uniform(torch::Tensor& p, uint64_t key, double bound) {
  auto values = torch::empty({p.numel()}, torch::kFloat64);
  double* v = values.data_ptr<double>();
  const CounterRng rng(key);
  for (int64_t i = 0; i < p.numel(); ++i) v[i] = bound * (2.0 * rng.uniform(static_cast<uint64_t>(i)) - 1.0);
  p.copy_(values.view(p.sizes()));
}

}  // namespace

UNet build(const ModelConfig& config, const GridSpec& grid, BuildOptions options) {
  UNet model(config, grid, options);
  if (options.shape_only) return model;

  torch::NoGradGuard guard;
  const auto params = model->named_parameter_list();
  // Fan-in comes from the weight tensor of the same layer.
  std::map<std::string, int64_t> fan_in;
  for (const auto& [name, p] : params) {
    if (ends_with(name, ".weight") && p.dim() >= 2) {
      fan_in[name.substr(0, name.size() - 7)] = p.numel() / p.size(0);
    }
  }
  for (auto [name, p] : params) {
    switch (rule_for(name, config)) {
      case InitRule::ones: p.fill_(1.0); break;
      case InitRule::zeros: p.zero_(); break;
      case InitRule::fan_in_uniform: {
        const auto layer = name.substr(0, name.rfind('.'));
        const auto it = fan_in.find(layer);
        const double fan = it == fan_in.end() ? 1.0 : static_cast<double>(it->second);
        fill_uniform(p, mix_seed({config.init_seed, name_hash(name)}), 1.0 / std::sqrt(fan));
        break;
      }
    }
  }
  return model;
}

int64_t count_parameters(const ModelConfig& config, const GridSpec& grid) {
  return build(config, grid, BuildOptions{.shape_only = true})->parameter_count();
}

void randomize_parameters(UNetImpl& model, uint64_t seed, double scale) {
  torch::NoGradGuard guard;
  for (auto [name, p] : model.named_parameter_list()) {
    fill_uniform(p, mix_seed({seed, name_hash(name)}), scale);
  }
}

StateTensor forward(UNetImpl& model, const TrainingWindow& window, const StochasticTag& tag) {
  if (window.input_channels() != model.config().in_channels) {
    throw InvalidArgument("window has " + std::to_string(window.input_channels()) +
                          " input channels, model expects " + std::to_string(model.config().in_channels));
  }
  const StochasticTag tags[1] = {tag};
  auto out = model.forward(window.network_input().unsqueeze(0).to(model.parameters().front().scalar_type()),
                           std::span<const StochasticTag>(tags));
  return StateTensor{out.squeeze(0), window.time_index + 1, {}};
}

std::vector<StochasticTag> expand_tags(const StochasticTag& tag, int64_t batch) {
  std::vector<StochasticTag> tags(static_cast<std::size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    tags[b] = StochasticTag{mix_seed({tag.member_seed, static_cast<uint64_t>(b)}), tag.enabled};
  }
  return tags;
}

}  // namespace toycast
