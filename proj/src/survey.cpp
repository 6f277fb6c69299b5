#include "iontrap/survey.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/ion_sim.hpp"
#include "iontrap/numerics.hpp"
#include "iontrap/trap_model.hpp"

namespace iontrap::survey {

namespace {

constexpr const char* kRecordHeader =
    "label,d_m,f_Hz,quantity_kind,value,mass_kg,material,T_K,method,fx_Hz,fy_Hz,fz_Hz";
constexpr const char* kPointsHeader = "label,d_m,omega_S_E,material,temperature_K,f_S_E";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// One CSV line with double-quote escaping.
std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw ConfigError(fmt::format("line {}: unterminated quoted field", line_no));
  fields.push_back(trim(cur));
  return fields;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

double parse_number(const std::string& text, std::size_t line_no, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("line {}: column {}: '{}' is not a number", line_no, column, text));
  }
}

// Lines that carry data: skips blanks and '#' comments. Returns false at EOF.
bool next_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    line = t;
    return true;
  }
  return false;
}

trap::IonSpecies species_of(const HeatingRecord& r) {
  return trap::IonSpecies::make(r.species_mass, constants::kElementaryCharge);
}

}  // namespace

std::string_view to_string(QuantityKind q) {
  switch (q) {
    case QuantityKind::kPhononRate:
      return "PHONON_RATE";
    case QuantityKind::kEnergyRate:
      return "ENERGY_RATE";
    case QuantityKind::kFieldPsd:
      return "FIELD_PSD";
  }
  return "?";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kSideband:
      return "SIDEBAND";
    case Method::kRecool:
      return "RECOOL";
    case Method::kNormalized:
      return "NORMALIZED";
  }
  return "?";
}

QuantityKind parse_quantity(std::string_view text) {
  if (text == "PHONON_RATE") return QuantityKind::kPhononRate;
  if (text == "ENERGY_RATE") return QuantityKind::kEnergyRate;
  if (text == "FIELD_PSD") return QuantityKind::kFieldPsd;
  throw InvalidArgument("unknown quantity_kind '" + std::string(text) + "'");
}

Method parse_method(std::string_view text) {
  if (text == "SIDEBAND") return Method::kSideband;
  if (text == "RECOOL") return Method::kRecool;
  if (text == "NORMALIZED") return Method::kNormalized;
  throw InvalidArgument("unknown method '" + std::string(text) + "'");
}

void HeatingRecord::validate() const {
  const auto fail = [&](const std::string& what) {
    throw InvalidArgument(fmt::format("record '{}': {}", label, what));
  };
  if (!(distance > 0.0)) fail("distance must be positive");
  if (!(frequency > 0.0)) fail("frequency must be positive");
  if (!(value >= 0.0) || !std::isfinite(value)) fail("value must be non-negative");
  if (!(species_mass > 0.0)) fail("species mass must be positive");
  if (method == Method::kRecool) {
    if (!mode_frequencies) fail("RECOOL records need fx_Hz, fy_Hz and fz_Hz");
    for (double f : *mode_frequencies)
      if (!(f > 0.0)) fail("mode frequencies must be positive");
  }
}

double conversion_frequency(const HeatingRecord& record) {
  record.validate();
  if (record.method == Method::kRecool) return sim::effective_frequency(*record.mode_frequencies);
  return record.frequency;
}

double to_field_psd(const HeatingRecord& record) {
  const double f = conversion_frequency(record);
  const auto species = species_of(record);
  switch (record.quantity) {
    case QuantityKind::kPhononRate:
      return sim::field_psd_from_phonon_rate(species, f, record.value);
    case QuantityKind::kEnergyRate:
      return 4.0 * species.mass * record.value / (species.charge * species.charge);
    case QuantityKind::kFieldPsd:
      return record.value;
  }
  return 0.0;
}

RegularizedPoint regularize(const HeatingRecord& record) {
  const double f = conversion_frequency(record);
  const double s_e = to_field_psd(record);
  return {record.label, record.distance, constants::kTwoPi * f * s_e, f * s_e,
          record.electrode_material, record.temperature};
}

std::vector<RegularizedPoint> regularize(std::span<const HeatingRecord> records) {
  std::vector<RegularizedPoint> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(regularize(r));
  return out;
}

TrendFit fit_distance_trend(std::span<const RegularizedPoint> points) {
  if (points.size() < 3)
    throw InvalidArgument(fmt::format("trend fit needs >= 3 records, got {}", points.size()));
  std::vector<double> x;
  std::vector<double> y;
  double d_min = points.front().distance;
  double d_max = d_min;
  for (const auto& p : points) {
    if (!(p.distance > 0.0) || !(p.omega_s_e > 0.0))
      throw InvalidArgument(fmt::format("record '{}' has a non-positive value", p.label));
    d_min = std::min(d_min, p.distance);
    d_max = std::max(d_max, p.distance);
    x.push_back(std::log10(p.distance));
    y.push_back(std::log10(p.omega_s_e));
  }
  if (d_max / d_min < 3.0)
    throw InvalidArgument(fmt::format(
        "records span only a factor {:.3g} in distance (need >= 3)", d_max / d_min));
  const auto fit = numerics::fit_line(x, y);
  return {fit.slope, fit.intercept, fit.slope_error, points.size()};
}

std::vector<HeatingRecord> read_records(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_line(in, line, line_no)) return {};
  if (line != kRecordHeader)
    throw ConfigError(fmt::format("line {}: expected header '{}'", line_no, kRecordHeader));
  std::vector<HeatingRecord> records;
  while (next_line(in, line, line_no)) {
    const auto f = split_csv(line, line_no);
    if (f.size() != 12)
      throw ConfigError(fmt::format("line {}: expected 12 fields, got {}", line_no, f.size()));
    HeatingRecord r;
    r.label = f[0];
    r.distance = parse_number(f[1], line_no, "d_m");
    r.frequency = parse_number(f[2], line_no, "f_Hz");
    r.value = parse_number(f[4], line_no, "value");
    r.species_mass = parse_number(f[5], line_no, "mass_kg");
    r.electrode_material = f[6];
    r.temperature = f[7].empty() ? 300.0 : parse_number(f[7], line_no, "T_K");
    try {
      r.quantity = parse_quantity(f[3]);
      r.method = parse_method(f[8]);
    } catch (const InvalidArgument& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
    const bool any = !f[9].empty() || !f[10].empty() || !f[11].empty();
    if (any) {
      r.mode_frequencies = std::array<double, 3>{parse_number(f[9], line_no, "fx_Hz"),
                                                 parse_number(f[10], line_no, "fy_Hz"),
                                                 parse_number(f[11], line_no, "fz_Hz")};
    }
    try {
      r.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<HeatingRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open record file");
  try {
    return read_records(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_records(std::ostream& out, std::span<const HeatingRecord> records) {
  out << kRecordHeader << "\n";
  for (const auto& r : records) {
    std::string modes = ",,";
    if (r.mode_frequencies) {
      const auto& m = *r.mode_frequencies;
      modes = fmt::format("{:.17g},{:.17g},{:.17g}", m[0], m[1], m[2]);
    }
    out << fmt::format("{},{:.17g},{:.17g},{},{:.17g},{:.17g},{},{:.17g},{},{}\n", quote(r.label),
                       r.distance, r.frequency, to_string(r.quantity), r.value, r.species_mass,
                       quote(r.electrode_material), r.temperature, to_string(r.method), modes);
  }
}

void write_points_csv(std::ostream& out, std::span<const RegularizedPoint> points) {
  out << kPointsHeader << "\n";
  for (const auto& p : points)
    out << fmt::format("{},{:.17g},{:.17g},{},{:.17g},{:.17g}\n", quote(p.label), p.distance,
                       p.omega_s_e, quote(p.material), p.temperature, p.f_s_e);
}

std::vector<RegularizedPoint> read_points_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_line(in, line, line_no)) return {};
  if (line != kPointsHeader)
    throw ConfigError(fmt::format("line {}: expected header '{}'", line_no, kPointsHeader));
  std::vector<RegularizedPoint> points;
  while (next_line(in, line, line_no)) {
    const auto f = split_csv(line, line_no);
    if (f.size() != 6)
      throw ConfigError(fmt::format("line {}: expected 6 fields, got {}", line_no, f.size()));
    RegularizedPoint p;
    p.label = f[0];
    p.distance = parse_number(f[1], line_no, "d_m");
    p.omega_s_e = parse_number(f[2], line_no, "omega_S_E");
    p.material = f[3];
    p.temperature = parse_number(f[4], line_no, "temperature_K");
    p.f_s_e = parse_number(f[5], line_no, "f_S_E");
    points.push_back(std::move(p));
  }
  return points;
}

void write_plot_svg(std::ostream& out, std::span<const RegularizedPoint> points,
                    const std::optional<TrendFit>& fit) {
  constexpr double kW = 640.0;
  constexpr double kH = 480.0;
  constexpr double kL = 80.0;
  constexpr double kR = 20.0;
  constexpr double kT = 20.0;
  constexpr double kB = 60.0;

  // Decade-aligned ranges: 10 um - 1 mm and 1e-8 - 1e-2 V^2/m^2, widened to
  // contain every point.
  double x0 = -5.0, x1 = -3.0, y0 = -8.0, y1 = -2.0;
  for (const auto& p : points) {
    if (!(p.distance > 0.0) || !(p.omega_s_e > 0.0)) continue;
    x0 = std::min(x0, std::floor(std::log10(p.distance)));
    x1 = std::max(x1, std::ceil(std::log10(p.distance)));
    y0 = std::min(y0, std::floor(std::log10(p.omega_s_e)));
    y1 = std::max(y1, std::ceil(std::log10(p.omega_s_e)));
  }
  const auto px = [&](double lx) { return kL + (lx - x0) / (x1 - x0) * (kW - kL - kR); };
  const auto py = [&](double ly) { return kH - kB - (ly - y0) / (y1 - y0) * (kH - kT - kB); };

  out << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kW, kH);
  out << fmt::format("<defs><clipPath id=\"plot\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>"
                     "</clipPath></defs>\n",
                     kL, kT, kW - kL - kR, kH - kT - kB);
  out << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" "
                     "stroke=\"black\"/>\n",
                     kL, kT, kW - kL - kR, kH - kT - kB);
  for (int e = static_cast<int>(x0); e <= static_cast<int>(x1); ++e) {
    out << fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#ddd\"/>\n",
                       px(e), kT, kH - kB);
    out << fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">1e{}</text>\n", px(e),
                       kH - kB + 18, e);
  }
  for (int e = static_cast<int>(y0); e <= static_cast<int>(y1); ++e) {
    out << fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>\n",
                       kL, py(e), kW - kR);
    out << fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">1e{}</text>\n", kL - 6,
                       py(e) + 4, e);
  }
  out << fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">distance d (m)</text>\n",
                     0.5 * (kL + kW - kR), kH - 15);
  out << fmt::format("<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 18 {0:.1f})\">omega S_E (V^2/m^2)</text>\n",
                     0.5 * (kT + kH - kB));

  // d^-4 diagonal through the log-centroid of the data (or 240 um, 2.2e-4).
  double cx = std::log10(240e-6);
  double cy = std::log10(2.2e-4);
  std::size_t n_ok = 0;
  double sx = 0.0, sy = 0.0;
  for (const auto& p : points) {
    if (!(p.distance > 0.0) || !(p.omega_s_e > 0.0)) continue;
    sx += std::log10(p.distance);
    sy += std::log10(p.omega_s_e);
    ++n_ok;
  }
  if (n_ok > 0) {
    cx = sx / static_cast<double>(n_ok);
    cy = sy / static_cast<double>(n_ok);
  }
  const auto line = [&](double slope, double at_x, double at_y, const char* style) {
    out << fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" {} "
                       "clip-path=\"url(#plot)\"/>\n",
                       px(x0), py(at_y + slope * (x0 - at_x)), px(x1),
                       py(at_y + slope * (x1 - at_x)), style);
  };
  line(-4.0, cx, cy, "stroke=\"gray\" stroke-dasharray=\"6 4\"");
  if (fit) line(fit->slope, 0.0, fit->intercept, "stroke=\"crimson\" stroke-width=\"1.5\"");

  for (const auto& p : points) {
    if (!(p.distance > 0.0) || !(p.omega_s_e > 0.0)) continue;
    out << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"steelblue\">"
                       "<title>{}</title></circle>\n",
                       px(std::log10(p.distance)), py(std::log10(p.omega_s_e)), xml_escape(p.label));
  }
  out << "</svg>\n";
}

PlotFiles emit_plot(std::span<const RegularizedPoint> points, const std::optional<TrendFit>& fit,
                    const std::string& stem) {
  PlotFiles files{stem + ".csv", stem + ".svg"};
  {
    std::ofstream csv(files.csv);
    if (!csv) throw IoError(files.csv, "cannot open for writing");
    write_points_csv(csv, points);
    if (!csv) throw IoError(files.csv, "write failed");
  }
  {
    std::ofstream svg(files.svg);
    if (!svg) throw IoError(files.svg, "cannot open for writing");
    write_plot_svg(svg, points, fit);
    if (!svg) throw IoError(files.svg, "write failed");
  }
  return files;
}

}  // namespace iontrap::survey
