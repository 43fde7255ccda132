#include "toycast/verification.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "toycast/error.hpp"
#include "toycast/objectives.hpp"

namespace toycast {

namespace {

std::string channel_name(const EnsembleForecast& f, int64_t c) {
  if (c < static_cast<int64_t>(f.channel_names.size())) return f.channel_names[static_cast<std::size_t>(c)];
  return "var" + std::to_string(c);
}

void check_forecast(const EnsembleForecast& f, const std::vector<StateTensor>& truth, int64_t min_members) {
  if (!f.members.defined() || f.members.dim() != 5) throw InvalidArgument("forecast members must be [M, L, C, H, W]");
  if (f.n_members() < min_members) {
    throw InvalidArgument("need at least " + std::to_string(min_members) + " members, got " +
                          std::to_string(f.n_members()));
  }
  if (static_cast<int64_t>(truth.size()) != f.n_leads()) {
    throw InvalidArgument("truth has " + std::to_string(truth.size()) + " states for " +
                          std::to_string(f.n_leads()) + " leads");
  }
  for (std::size_t l = 0; l < truth.size(); ++l) {
    const auto lead = l < f.lead_steps.size() ? f.lead_steps[l] : static_cast<int64_t>(l) + 1;
    if (truth[l].time_index != f.init_time + lead) {
      throw InvalidArgument("truth at position " + std::to_string(l) + " has time " +
                            std::to_string(truth[l].time_index) + ", expected " +
                            std::to_string(f.init_time + lead));
    }
    if (truth[l].values.sizes() != f.members.select(1, 0).select(0, 0).sizes()) {
      throw InvalidArgument("truth shape does not match forecast members");
    }
  }
  if (f.truncated()) throw NumericError("forecast contains truncated (non-finite) members");
}

int64_t lead_of(const EnsembleForecast& f, int64_t l) {
  return l < static_cast<int64_t>(f.lead_steps.size()) ? f.lead_steps[static_cast<std::size_t>(l)] : l + 1;
}

/// Area-weighted mean over (H, W) per channel: [C, H, W] -> [C].
torch::Tensor spatial_mean(const torch::Tensor& x, const torch::Tensor& w) { return (x * w).mean({-2, -1}); }

double ssr_of(double spread, double rmse, int64_t M) {
  const double factor = std::sqrt((static_cast<double>(M) + 1.0) / static_cast<double>(M));
  if (rmse == 0.0) return spread > 0.0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
  return factor * spread / rmse;
}

struct Moments {
  torch::Tensor mse;  // [C]
  torch::Tensor var;  // [C]
};

Moments moments(const torch::Tensor& members, const torch::Tensor& truth, const torch::Tensor& w) {
  const auto mean = members.mean(0);
  const auto var = members.var(0, /*unbiased=*/true);
  return {spatial_mean((mean - truth).square(), w), spatial_mean(var, w)};
}

}  // namespace

std::vector<MetricRecord> eval_crps(const EnsembleForecast& forecast, const std::vector<StateTensor>& truth,
                                    const AreaWeights& weights) {
  check_forecast(forecast, truth, 2);
  const auto members = forecast.members.to(torch::kFloat64);
  const int64_t C = members.size(2);
  std::vector<MetricRecord> out;
  for (int64_t l = 0; l < forecast.n_leads(); ++l) {
    const auto score = fair_crps(members.select(1, l), truth[static_cast<std::size_t>(l)].values.to(torch::kFloat64),
                                 weights, ChannelWeights::uniform(C));
    for (int64_t c = 0; c < C; ++c) {
      MetricRecord r;
      r.variable = channel_name(forecast, c);
      r.lead = lead_of(forecast, l);
      r.crps = score.per_channel[static_cast<std::size_t>(c)];
      r.n_members = forecast.n_members();
      r.n_inits = 1;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<MetricRecord> eval_rmse_spread_ssr(const EnsembleForecast& forecast,
                                               const std::vector<StateTensor>& truth, const AreaWeights& weights) {
  check_forecast(forecast, truth, 2);
  const auto members = forecast.members.to(torch::kFloat64);
  const auto w = weights.column(torch::kFloat64);
  const int64_t C = members.size(2);
  const int64_t M = members.size(0);
  std::vector<MetricRecord> out;
  for (int64_t l = 0; l < forecast.n_leads(); ++l) {
    const auto mom = moments(members.select(1, l), truth[static_cast<std::size_t>(l)].values.to(torch::kFloat64), w);
    for (int64_t c = 0; c < C; ++c) {
      MetricRecord r;
      r.variable = channel_name(forecast, c);
      r.lead = lead_of(forecast, l);
      r.rmse = std::sqrt(mom.mse[c].item<double>());
      r.spread = std::sqrt(mom.var[c].item<double>());
      r.ssr = ssr_of(r.spread, r.rmse, M);
      r.n_members = M;
      r.n_inits = 1;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<MetricRecord> evaluate(const std::vector<EnsembleForecast>& forecasts,
                                   const std::vector<std::vector<StateTensor>>& truths, const AreaWeights& weights) {
  if (forecasts.empty()) throw InvalidArgument("no forecasts to evaluate");
  if (forecasts.size() != truths.size()) throw InvalidArgument("one truth sequence per forecast is required");
  const auto& first = forecasts.front();
  const auto w = weights.column(torch::kFloat64);
  const int64_t L = first.n_leads();
  const int64_t C = first.members.size(2);
  const int64_t M = first.n_members();

  std::vector<double> crps(static_cast<std::size_t>(L * C), 0.0);
  std::vector<double> mse(crps.size(), 0.0), var(crps.size(), 0.0);
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    const auto& f = forecasts[i];
    if (f.n_leads() != L || f.members.size(2) != C || f.n_members() != M) {
      throw InvalidArgument("forecasts disagree in member, lead or channel count");
    }
    check_forecast(f, truths[i], 2);
    const auto members = f.members.to(torch::kFloat64);
    for (int64_t l = 0; l < L; ++l) {
      const auto truth = truths[i][static_cast<std::size_t>(l)].values.to(torch::kFloat64);
      const auto at_lead = members.select(1, l);
      const auto score = fair_crps(at_lead, truth, weights, ChannelWeights::uniform(C));
      const auto mom = moments(at_lead, truth, w);
      for (int64_t c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(l * C + c);
        crps[k] += score.per_channel[static_cast<std::size_t>(c)];
        mse[k] += mom.mse[c].item<double>();
        var[k] += mom.var[c].item<double>();
      }
    }
  }

  const double n = static_cast<double>(forecasts.size());
  std::vector<MetricRecord> out;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t l = 0; l < L; ++l) {
      const auto k = static_cast<std::size_t>(l * C + c);
      MetricRecord r;
      r.variable = channel_name(first, c);
      r.lead = lead_of(first, l);
      r.crps = crps[k] / n;
      r.rmse = std::sqrt(mse[k] / n);
      r.spread = std::sqrt(var[k] / n);
      r.ssr = ssr_of(r.spread, r.rmse, M);
      r.n_members = M;
      r.n_inits = static_cast<int64_t>(forecasts.size());
      out.push_back(r);
    }
  }
  return out;
}

LatBand default_band(const GridSpec& grid) {
  const int64_t begin = grid.n_lat / 4;
  const int64_t end = std::max(begin + 1, grid.n_lat - grid.n_lat / 4);
  return {grid.lat_lower[static_cast<std::size_t>(begin)], grid.lat_upper[static_cast<std::size_t>(end - 1)]};
}

std::vector<SpectrumRecord> zonal_spectrum(const torch::Tensor& states, const GridSpec& grid, const LatBand& band,
                                           int64_t lead, const std::vector<std::string>& channel_names) {
  auto x = states.to(torch::kFloat64);
  if (x.dim() == 3) x = x.unsqueeze(0);
  if (x.dim() != 4 || x.size(2) != grid.n_lat || x.size(3) != grid.n_lon) {
    throw InvalidArgument("zonal_spectrum expects [N, C, H, W] on the given grid");
  }
  const auto centers = grid.lat_centers();
  std::vector<int64_t> rows;
  for (int64_t h = 0; h < grid.n_lat; ++h) {
    const double lat = centers[static_cast<std::size_t>(h)];
    if (lat >= band.lower && lat <= band.upper) rows.push_back(h);
  }
  if (rows.empty()) {
    throw InvalidArgument("latitude band [" + std::to_string(band.lower) + ", " + std::to_string(band.upper) +
                          "] contains no rows");
  }
  const int64_t W = grid.n_lon;
  const int64_t K = W / 2 + 1;
  const auto selected = x.index_select(2, torch::tensor(rows, torch::kLong));  // [N, C, R, W]
  const auto spec = torch::fft::rfft(selected, c10::nullopt, -1);           // [N, C, R, W/2+1]
  auto power = spec.abs().square() / static_cast<double>(W * W);
  // One-sided spectrum: interior wavenumbers carry both +k and -k.
  auto factor = torch::full({K}, 2.0, torch::kFloat64);
  factor[0] = 1.0;
  if (W % 2 == 0) factor[K - 1] = 1.0;
  power = (power * factor).mean({0, 2});                   // [C, K]
  const auto mean_square = selected.square().mean({0, 2, 3});  // [C]

  std::vector<SpectrumRecord> out;
  for (int64_t c = 0; c < x.size(1); ++c) {
    SpectrumRecord r;
    r.variable = c < static_cast<int64_t>(channel_names.size()) ? channel_names[static_cast<std::size_t>(c)]
                                                                : "var" + std::to_string(c);
    r.lead = lead;
    r.band = band;
    for (int64_t k = 0; k < K; ++k) {
      r.wavenumbers.push_back(k);
      r.power.push_back(power[c][k].item<double>());
    }
    r.mean_square = mean_square[c].item<double>();
    out.push_back(std::move(r));
  }
  return out;
}

double relative_change(double model, double reference) {
  if (reference == 0.0) throw InvalidArgument("relative change against a zero reference");
  return 100.0 * (model - reference) / reference;
}

RelativeSkillTable relative_skill(const std::vector<MetricRecord>& model, const std::vector<MetricRecord>& reference,
                                  SkillMetric metric) {
  if (model.empty()) throw InvalidArgument("empty model metrics");
  auto value = [&](const MetricRecord& r) { return metric == SkillMetric::crps ? r.crps : r.rmse; };
  std::map<std::pair<std::string, int64_t>, double> ref;
  for (const auto& r : reference) ref[{r.variable, r.lead}] = value(r);

  RelativeSkillTable t;
  t.metric = metric == SkillMetric::crps ? "crps" : "rmse";
  std::map<std::string, std::size_t> var_index;
  std::map<int64_t, std::size_t> lead_index;
  for (const auto& r : model) {
    if (!var_index.count(r.variable)) {
      var_index[r.variable] = t.variables.size();
      t.variables.push_back(r.variable);
    }
    if (!lead_index.count(r.lead)) {
      lead_index[r.lead] = t.leads.size();
      t.leads.push_back(r.lead);
    }
  }
  t.cells.assign(t.variables.size(), std::vector<double>(t.leads.size(), std::numeric_limits<double>::quiet_NaN()));
  double sum = 0.0;
  for (const auto& r : model) {
    const auto it = ref.find({r.variable, r.lead});
    if (it == ref.end()) {
      throw InvalidArgument("reference has no entry for " + r.variable + " at lead " + std::to_string(r.lead));
    }
    if (it->second == 0.0) {
      throw InvalidArgument("reference is zero for " + r.variable + " at lead " + std::to_string(r.lead));
    }
    const double v = relative_change(value(r), it->second);
    t.cells[var_index[r.variable]][lead_index[r.lead]] = v;
    sum += v;
  }
  t.aggregate = sum / static_cast<double>(model.size());
  return t;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "variable,lead,crps,rmse,spread,ssr,n_members,n_inits\n";
  for (const auto& r : records) {
    os << r.variable << ',' << r.lead << ',' << fmt(r.crps) << ',' << fmt(r.rmse) << ',' << fmt(r.spread) << ','
       << fmt(r.ssr) << ',' << r.n_members << ',' << r.n_inits << '\n';
  }
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact("metrics file not found: " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "variable,lead,crps,rmse,spread,ssr,n_members,n_inits") {
    throw FormatError("unexpected metrics header in " + path.string());
  }
  std::vector<MetricRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw FormatError("malformed metrics row in " + path.string() + ": " + line);
    MetricRecord r;
    r.variable = f[0];
    r.lead = std::stoll(f[1]);
    r.crps = parse(f[2]);
    r.rmse = parse(f[3]);
    r.spread = parse(f[4]);
    r.ssr = parse(f[5]);
    r.n_members = std::stoll(f[6]);
    r.n_inits = std::stoll(f[7]);
    out.push_back(r);
  }
  return out;
}

nlohmann::json metrics_to_json(const std::vector<MetricRecord>& records) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"variable", r.variable},
                    {"lead", r.lead},
                    {"crps", finite_or_null(r.crps)},
                    {"rmse", finite_or_null(r.rmse)},
                    {"spread", finite_or_null(r.spread)},
                    {"ssr", finite_or_null(r.ssr)},
                    {"ssr_flag", std::isinf(r.ssr) ? "infinite" : (std::isnan(r.ssr) ? "undefined" : "")},
                    {"n_members", r.n_members},
                    {"n_inits", r.n_inits}});
  }
  return {{"records", rows},
          {"variance_divisor", "M-1"},
          {"ssr_correction", "sqrt((M+1)/M)"},
          {"spatial_reduction", "area-weighted mean"}};
}

void write_spectrum_csv(const std::filesystem::path& path, const SpectrumRecord& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "wavenumber,power\n";
  for (std::size_t k = 0; k < record.power.size(); ++k) os << record.wavenumbers[k] << ',' << fmt(record.power[k]) << '\n';
}

}  // namespace toycast
