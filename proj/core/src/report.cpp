#include "toycast/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "toycast/error.hpp"

namespace toycast::report {

namespace {

std::string num(double v) {
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

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  return s;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) + "\" height=\"" + px(h) +
         "\" viewBox=\"0 0 " + px(w) + " " + px(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

// ---------------------------------------------------------------------------
// Scorecard

std::string scorecard_csv(const RelativeSkillTable& t) {
  std::ostringstream os;
  os << "# scorecard metric=" << t.metric << "\n";
  os << "variable,lead,relative_percent\n";
  for (std::size_t v = 0; v < t.variables.size(); ++v) {
    for (std::size_t l = 0; l < t.leads.size(); ++l) {
      os << t.variables[v] << ',' << t.leads[l] << ',' << num(t.cells[v][l]) << '\n';
    }
  }
  return os.str();
}

double symmetric_bound(const RelativeSkillTable& t) {
  double b = 0.0;
  for (const auto& row : t.cells) {
    for (double v : row) {
      if (std::isfinite(v)) b = std::max(b, std::abs(v));
    }
  }
  return b > 0.0 ? std::ceil(b) : 1.0;
}

std::string scorecard_svg(const RelativeSkillTable& t) {
  const double cell_w = 56, cell_h = 28, left = 90, top = 40;
  const double W = left + cell_w * static_cast<double>(t.leads.size()) + 30;
  const double H = top + cell_h * static_cast<double>(t.variables.size()) + 70;
  const double bound = symmetric_bound(t);
  bool any_nan = false;

  std::ostringstream os;
  os << svg_open(W, H);
  os << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
        "patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#999999\" "
        "stroke-width=\"2\"/></pattern></defs>\n";
  os << "<text x=\"" << px(left) << "\" y=\"18\" font-weight=\"bold\">relative " << escape(t.metric)
     << " (%) vs reference</text>\n";
  for (std::size_t l = 0; l < t.leads.size(); ++l) {
    os << "<text x=\"" << px(left + cell_w * (static_cast<double>(l) + 0.5)) << "\" y=\"" << px(top - 6)
       << "\" text-anchor=\"middle\">" << t.leads[l] << "</text>\n";
  }
  for (std::size_t v = 0; v < t.variables.size(); ++v) {
    const double y = top + cell_h * static_cast<double>(v);
    os << "<text x=\"" << px(left - 8) << "\" y=\"" << px(y + cell_h * 0.65) << "\" text-anchor=\"end\">"
       << escape(t.variables[v]) << "</text>\n";
    for (std::size_t l = 0; l < t.leads.size(); ++l) {
      const double x = left + cell_w * static_cast<double>(l);
      const double val = t.cells[v][l];
      if (std::isfinite(val)) {
        os << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(cell_w) << "\" height=\""
           << px(cell_h) << "\" fill=\"" << diverging_color(val, bound) << "\" stroke=\"white\"/>\n";
        os << "<text x=\"" << px(x + cell_w / 2) << "\" y=\"" << px(y + cell_h * 0.65)
           << "\" text-anchor=\"middle\">" << label1(val) << "</text>\n";
      } else {
        any_nan = true;
        os << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(cell_w) << "\" height=\""
           << px(cell_h) << "\" fill=\"url(#hatch)\" stroke=\"white\"/>\n";
      }
    }
  }
  const double ly = top + cell_h * static_cast<double>(t.variables.size()) + 24;
  os << "<text x=\"" << px(left) << "\" y=\"" << px(ly) << "\">lead (steps); blue = lower (better), scale +/-"
     << label1(bound) << "%</text>\n";
  if (any_nan) {
    os << "<rect x=\"" << px(left) << "\" y=\"" << px(ly + 10) << "\" width=\"14\" height=\"14\" "
          "fill=\"url(#hatch)\"/><text x=\""
       << px(left + 20) << "\" y=\"" << px(ly + 22) << "\">hatched: no data</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Line charts

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;
  double map(double v, double a, double b) const {
    const double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo)) : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Axis fit_axis(const std::vector<double>& values, bool log) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v) || (log && v <= 0)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = log ? 1.0 : 0.0, hi = lo + 1.0;
  if (hi == lo) {
    const double pad = log ? 0.0 : (lo == 0.0 ? 1.0 : std::abs(lo) * 0.1);
    if (log) {
      lo /= 2;
      hi *= 2;
    } else {
      lo -= pad;
      hi += pad;
    }
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  a.lo = lo;
  a.hi = hi;
  return a;
}

struct Chart {
  std::string title, x_label, y_label;
  bool log_x = false, log_y = false;
  std::vector<CurveSeries> series;
  std::optional<double> hline;
  std::string hline_label;
};

std::string chart_svg(const Chart& c) {
  const double W = 640, H = 400, l = 70, r = 170, t = 36, b = 50;
  std::vector<double> xs, ys;
  for (const auto& s : c.series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  if (c.hline) ys.push_back(*c.hline);
  const auto ax = fit_axis(xs, c.log_x);
  const auto ay = fit_axis(ys, c.log_y);
  const double x0 = l, x1 = W - r, y0 = H - b, y1 = t;

  std::ostringstream os;
  os << svg_open(W, H);
  os << "<text x=\"" << px(l) << "\" y=\"20\" font-weight=\"bold\">" << escape(c.title) << "</text>\n";
  os << "<rect x=\"" << px(x0) << "\" y=\"" << px(y1) << "\" width=\"" << px(x1 - x0) << "\" height=\""
     << px(y0 - y1) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double xv = c.log_x ? std::pow(10.0, std::log10(ax.lo) + f * (std::log10(ax.hi) - std::log10(ax.lo)))
                              : ax.lo + f * (ax.hi - ax.lo);
    const double yv = c.log_y ? std::pow(10.0, std::log10(ay.lo) + f * (std::log10(ay.hi) - std::log10(ay.lo)))
                              : ay.lo + f * (ay.hi - ay.lo);
    char xb[32], yb[32];
    std::snprintf(xb, sizeof xb, "%.3g", xv);
    std::snprintf(yb, sizeof yb, "%.3g", yv);
    const double px_ = x0 + f * (x1 - x0), py_ = y0 - f * (y0 - y1);
    os << "<text x=\"" << px(px_) << "\" y=\"" << px(y0 + 16) << "\" text-anchor=\"middle\">" << xb << "</text>\n";
    os << "<text x=\"" << px(x0 - 6) << "\" y=\"" << px(py_ + 4) << "\" text-anchor=\"end\">" << yb << "</text>\n";
  }
  os << "<text x=\"" << px((x0 + x1) / 2) << "\" y=\"" << px(H - 12) << "\" text-anchor=\"middle\">"
     << escape(c.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << px((y0 + y1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(c.y_label) << "</text>\n";

  double legend_y = t + 10;
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const char* color = kPalette[i % 10];
    std::string pts;
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      if ((c.log_x && s.x[k] <= 0) || (c.log_y && s.y[k] <= 0)) continue;
      pts += px(ax.map(s.x[k], x0, x1)) + "," + px(ay.map(s.y[k], y0, y1)) + " ";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    os << "<line x1=\"" << px(x1 + 10) << "\" y1=\"" << px(legend_y) << "\" x2=\"" << px(x1 + 30) << "\" y2=\""
       << px(legend_y) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << px(x1 + 36)
       << "\" y=\"" << px(legend_y + 4) << "\">" << escape(s.name) << "</text>\n";
    legend_y += 18;
  }
  if (c.hline && std::isfinite(*c.hline)) {
    const double y = ay.map(*c.hline, y0, y1);
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(y)
       << "\" stroke=\"#1f3b73\" stroke-dasharray=\"6,4\" stroke-width=\"1.5\"/>\n";
    os << "<line x1=\"" << px(x1 + 10) << "\" y1=\"" << px(legend_y) << "\" x2=\"" << px(x1 + 30) << "\" y2=\""
       << px(legend_y) << "\" stroke=\"#1f3b73\" stroke-dasharray=\"6,4\" stroke-width=\"2\"/><text x=\""
       << px(x1 + 36) << "\" y=\"" << px(legend_y + 4) << "\">" << escape(c.hline_label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string skill_csv(const RelativeSkillTable& t) {
  auto s = scorecard_csv(t);
  return "# skill_vs_lead" + s.substr(s.find(' ', 2));
}

Chart skill_chart(const RelativeSkillTable& t) {
  Chart c;
  c.title = "relative " + t.metric + " vs lead";
  c.x_label = "lead (steps)";
  c.y_label = "relative " + t.metric + " (%)";
  for (std::size_t v = 0; v < t.variables.size(); ++v) {
    CurveSeries s{t.variables[v], {}, {}};
    for (std::size_t l = 0; l < t.leads.size(); ++l) {
      s.x.push_back(static_cast<double>(t.leads[l]));
      s.y.push_back(t.cells[v][l]);
    }
    c.series.push_back(std::move(s));
  }
  c.hline = 0.0;
  c.hline_label = "reference";
  return c;
}

std::string curves_csv(const TrainingCurves& c) {
  std::ostringstream os;
  os << "# training_curves ylabel=" << c.y_label << "\n";
  os << "kind,series,x,y\n";
  for (const auto& s : c.runs) {
    for (std::size_t k = 0; k < s.x.size(); ++k) os << "run," << s.name << ',' << num(s.x[k]) << ',' << num(s.y[k]) << '\n';
  }
  if (c.baseline) os << "baseline," << c.baseline_label << ",," << num(*c.baseline) << '\n';
  return os.str();
}

Chart curves_chart(const TrainingCurves& c) {
  Chart ch;
  ch.title = "training curves";
  ch.x_label = "optimizer step";
  ch.y_label = c.y_label;
  ch.series = c.runs;
  ch.hline = c.baseline;
  ch.hline_label = c.baseline_label;
  return ch;
}

std::string spectra_csv(const std::vector<SpectrumRecord>& records) {
  std::ostringstream os;
  os << "# spectra\n";
  os << "variable,lead,wavenumber,power\n";
  for (const auto& r : records) {
    for (std::size_t k = 0; k < r.power.size(); ++k) {
      os << r.variable << ',' << r.lead << ',' << r.wavenumbers[k] << ',' << num(r.power[k]) << '\n';
    }
  }
  return os.str();
}

Chart spectra_chart(const std::vector<SpectrumRecord>& records) {
  Chart c;
  c.title = "zonal power spectra";
  c.x_label = "zonal wavenumber";
  c.y_label = "power";
  c.log_x = c.log_y = true;
  for (const auto& r : records) {
    CurveSeries s{r.variable + " lead " + std::to_string(r.lead), {}, {}};
    for (std::size_t k = 1; k < r.power.size(); ++k) {
      s.x.push_back(static_cast<double>(r.wavenumbers[k]));
      s.y.push_back(r.power[k]);
    }
    c.series.push_back(std::move(s));
  }
  return c;
}

RelativeSkillTable table_from_lines(const std::vector<std::string>& lines, const std::string& metric) {
  RelativeSkillTable t;
  t.metric = metric;
  std::map<std::string, std::size_t> vi;
  std::map<int64_t, std::size_t> li;
  std::vector<std::tuple<std::string, int64_t, double>> cells;
  for (const auto& line : lines) {
    const auto f = split(line);
    if (f.size() != 3) throw FormatError("malformed scorecard row: " + line);
    const auto lead = std::stoll(f[1]);
    if (!vi.count(f[0])) {
      vi[f[0]] = t.variables.size();
      t.variables.push_back(f[0]);
    }
    if (!li.count(lead)) {
      li[lead] = t.leads.size();
      t.leads.push_back(lead);
    }
    cells.emplace_back(f[0], lead, parse(f[2]));
  }
  t.cells.assign(t.variables.size(), std::vector<double>(t.leads.size(), std::numeric_limits<double>::quiet_NaN()));
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [v, l, x] : cells) {
    t.cells[vi[v]][li[l]] = x;
    if (std::isfinite(x)) sum += x, ++n;
  }
  t.aggregate = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return t;
}

std::pair<std::string, std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact("CSV not found: " + path.string());
  std::string tag, header, line;
  std::getline(is, tag);
  std::getline(is, header);
  std::vector<std::string> rows;
  while (std::getline(is, line)) {
    if (!line.empty()) rows.push_back(line);
  }
  return {tag, rows};
}

std::string tag_value(const std::string& tag, const std::string& key) {
  const auto pos = tag.find(key + "=");
  if (pos == std::string::npos) return "";
  return tag.substr(pos + key.size() + 1);
}

void check_table(const RelativeSkillTable& t) {
  if (t.variables.empty() || t.leads.empty()) throw InvalidArgument("cannot render an empty table");
  if (t.cells.size() != t.variables.size()) throw InvalidArgument("table rows do not match variables");
  for (const auto& row : t.cells) {
    if (row.size() != t.leads.size()) throw InvalidArgument("table columns do not match leads");
  }
}

}  // namespace

fs::path sidecar(const fs::path& image_path) {
  auto p = image_path;
  p.replace_extension(".csv");
  return p;
}

std::string diverging_color(double value, double bound) {
  const double t = std::clamp(value / (bound > 0 ? bound : 1.0), -1.0, 1.0);
  // white at zero, blue for negative, red for positive
  const double blue[3] = {33, 102, 172}, red[3] = {178, 24, 43};
  const double* end = t < 0 ? blue : red;
  const double a = std::abs(t);
  int rgb[3];
  for (int i = 0; i < 3; ++i) rgb[i] = static_cast<int>(std::lround(255.0 + a * (end[i] - 255.0)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

void render_scorecard(const RelativeSkillTable& table, const fs::path& path) {
  check_table(table);
  const auto csv = scorecard_csv(table);
  write_file(sidecar(path), csv);
  // Render from the CSV round trip so the sidecar is authoritative.
  regenerate_from_csv(sidecar(path), path);
}

void render_skill_vs_lead(const RelativeSkillTable& table, const fs::path& path) {
  check_table(table);
  write_file(sidecar(path), skill_csv(table));
  regenerate_from_csv(sidecar(path), path);
}

CurveSeries curve_from_history(const std::string& name, const std::vector<HistoryPoint>& history) {
  CurveSeries s{name, {}, {}};
  for (const auto& p : history) {
    s.x.push_back(static_cast<double>(p.step));
    s.y.push_back(p.val_crps);
  }
  return s;
}

bool render_training_curves(const TrainingCurves& curves, const fs::path& path) {
  bool any = false;
  for (const auto& r : curves.runs) any = any || !r.x.empty();
  if (!any) {
    std::fprintf(stderr, "warning: no training history to plot for %s\n", path.string().c_str());
    return false;
  }
  write_file(sidecar(path), curves_csv(curves));
  regenerate_from_csv(sidecar(path), path);
  return true;
}

void render_spectra(const std::vector<SpectrumRecord>& records, const fs::path& path) {
  if (records.empty()) throw InvalidArgument("no spectra to render");
  write_file(sidecar(path), spectra_csv(records));
  regenerate_from_csv(sidecar(path), path);
}

RelativeSkillTable read_scorecard_csv(const fs::path& csv_path) {
  const auto [tag, rows] = read_csv(csv_path);
  if (tag.rfind("# scorecard", 0) != 0 && tag.rfind("# skill_vs_lead", 0) != 0) {
    throw FormatError(csv_path.string() + " is not a scorecard CSV");
  }
  return table_from_lines(rows, tag_value(tag, "metric"));
}

void regenerate_from_csv(const fs::path& csv_path, const fs::path& svg_path) {
  const auto [tag, rows] = read_csv(csv_path);
  if (tag.rfind("# scorecard", 0) == 0) {
    write_file(svg_path, scorecard_svg(table_from_lines(rows, tag_value(tag, "metric"))));
  } else if (tag.rfind("# skill_vs_lead", 0) == 0) {
    write_file(svg_path, chart_svg(skill_chart(table_from_lines(rows, tag_value(tag, "metric")))));
  } else if (tag.rfind("# training_curves", 0) == 0) {
    TrainingCurves c;
    c.y_label = tag_value(tag, "ylabel");
    std::map<std::string, std::size_t> index;
    for (const auto& line : rows) {
      const auto f = split(line);
      if (f.size() != 4) throw FormatError("malformed curve row: " + line);
      if (f[0] == "baseline") {
        c.baseline = parse(f[3]);
        c.baseline_label = f[1];
        continue;
      }
      if (!index.count(f[1])) {
        index[f[1]] = c.runs.size();
        c.runs.push_back({f[1], {}, {}});
      }
      auto& s = c.runs[index[f[1]]];
      s.x.push_back(parse(f[2]));
      s.y.push_back(parse(f[3]));
    }
    write_file(svg_path, chart_svg(curves_chart(c)));
  } else if (tag.rfind("# spectra", 0) == 0) {
    std::vector<SpectrumRecord> recs;
    std::map<std::pair<std::string, int64_t>, std::size_t> index;
    for (const auto& line : rows) {
      const auto f = split(line);
      if (f.size() != 4) throw FormatError("malformed spectrum row: " + line);
      const std::pair<std::string, int64_t> key{f[0], std::stoll(f[1])};
      if (!index.count(key)) {
        index[key] = recs.size();
        SpectrumRecord r;
        r.variable = key.first;
        r.lead = key.second;
        recs.push_back(r);
      }
      auto& r = recs[index[key]];
      r.wavenumbers.push_back(std::stoll(f[2]));
      r.power.push_back(parse(f[3]));
    }
    write_file(svg_path, chart_svg(spectra_chart(recs)));
  } else {
    throw FormatError(csv_path.string() + " has no recognized figure tag");
  }
}

}  // namespace toycast::report
