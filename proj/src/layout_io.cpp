#include "iontrap/layout_io.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "iontrap/errors.hpp"

namespace iontrap::trap {

namespace {

double length_factor(const std::string& unit) {
  if (unit == "m") return 1.0;
  if (unit == "mm") return 1e-3;
  if (unit == "um") return 1e-6;
  throw ConfigError("unsupported length unit '" + unit + "' (use m, mm or um)");
}

template <typename T>
T required(const YAML::Node& node, const char* key) {
  const YAML::Node child = node[key];
  if (!child) throw ConfigError(std::string("layout: missing field '") + key + "'");
  try {
    return child.as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("layout: bad value for '") + key + "': " + e.what());
  }
}

Interval read_interval(const YAML::Node& node, const char* key, double scale) {
  const auto pair = required<std::vector<double>>(node, key);
  if (pair.size() != 2) throw ConfigError(std::string("layout: '") + key + "' needs two values");
  return {pair[0] * scale, pair[1] * scale};
}

}  // namespace

TrapLayout parse_layout(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("layout: YAML parse error: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("layout: top level must be a mapping");

  const YAML::Node units = root["units"];
  if (!units) throw ConfigError("layout: missing 'units' header");
  const double scale = length_factor(required<std::string>(units, "length"));
  if (required<std::string>(units, "voltage") != "V")
    throw ConfigError("layout: voltage unit must be V");
  if (required<std::string>(units, "angular_frequency") != "rad/s")
    throw ConfigError("layout: angular_frequency unit must be rad/s");

  VoltageBounds bounds;
  if (root["dc_bounds"]) {
    const auto b = required<std::vector<double>>(root, "dc_bounds");
    if (b.size() != 2) throw ConfigError("layout: 'dc_bounds' needs two values");
    bounds = {b[0], b[1]};
  }

  std::vector<Electrode> electrodes;
  const YAML::Node list = root["electrodes"];
  if (list && !list.IsSequence()) throw ConfigError("layout: 'electrodes' must be a list");
  if (list) {
    for (const auto& item : list) {
      Electrode e;
      e.id = required<std::string>(item, "id");
      try {
        e.role = parse_role(required<std::string>(item, "role"));
      } catch (const InvalidArgument& err) {
        throw ConfigError(std::string("layout: ") + err.what());
      }
      e.x_range = read_interval(item, "x_range", scale);
      e.z_range = read_interval(item, "z_range", scale);
      electrodes.push_back(std::move(e));
    }
  }

  std::map<std::string, double> dc;
  if (const YAML::Node v = root["dc_voltages"]; v) {
    if (!v.IsMap()) throw ConfigError("layout: 'dc_voltages' must be a mapping");
    for (const auto& kv : v) dc[kv.first.as<std::string>()] = kv.second.as<double>();
  }

  try {
    return TrapLayout(std::move(electrodes), required<double>(root, "rf_amplitude"),
                      required<double>(root, "rf_omega"), std::move(dc), bounds);
  } catch (const InvalidArgument& err) {
    throw ConfigError(std::string("layout: ") + err.what());
  }
}

TrapLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open layout file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

std::string format_layout(const TrapLayout& layout, const std::string& length_unit) {
  const double scale = 1.0 / length_factor(length_unit);
  YAML::Emitter out;
  out.SetDoublePrecision(12);
  out << YAML::BeginMap;
  out << YAML::Key << "units" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "length" << YAML::Value << length_unit;
  out << YAML::Key << "voltage" << YAML::Value << "V";
  out << YAML::Key << "angular_frequency" << YAML::Value << "rad/s";
  out << YAML::EndMap;
  out << YAML::Key << "rf_amplitude" << YAML::Value << layout.rf_amplitude();
  out << YAML::Key << "rf_omega" << YAML::Value << layout.rf_omega();
  out << YAML::Key << "dc_bounds" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << layout.dc_bounds().min << layout.dc_bounds().max << YAML::EndSeq;
  out << YAML::Key << "electrodes" << YAML::Value << YAML::BeginSeq;
  for (const auto& e : layout.electrodes()) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << e.id;
    out << YAML::Key << "role" << YAML::Value << std::string(to_string(e.role));
    out << YAML::Key << "x_range" << YAML::Value << YAML::Flow << YAML::BeginSeq
        << e.x_range.min * scale << e.x_range.max * scale << YAML::EndSeq;
    out << YAML::Key << "z_range" << YAML::Value << YAML::Flow << YAML::BeginSeq
        << e.z_range.min * scale << e.z_range.max * scale << YAML::EndSeq;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "dc_voltages" << YAML::Value << YAML::BeginMap;
  for (const auto& [id, v] : layout.dc_voltages()) out << YAML::Key << id << YAML::Value << v;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void save_layout(const TrapLayout& layout, const std::string& path,
                 const std::string& length_unit) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out << format_layout(layout, length_unit);
  if (!out) throw IoError(path, "write failed");
}

void write_mode_report(std::ostream& out, const RfNullResult& null, const ModeSet& modes) {
  static constexpr const char* kNames[] = {"x", "y", "z"};
  out << "rf_null:\n";
  out << fmt::format("  position_um: [{:.6f}, {:.6f}, {:.6f}]\n", null.point.x() * 1e6,
                     null.point.y() * 1e6, null.point.z() * 1e6);
  out << fmt::format("  height_um: {:.6f}\n", null.point.y() * 1e6);
  out << fmt::format("  gradient_V_per_m: {:.6e}\n", null.gradient_norm);
  out << fmt::format("  gradient_at_100um_V_per_m: {:.6e}\n", null.reference_gradient_norm);
  out << "modes:\n";
  out << fmt::format("  center_um: [{:.6f}, {:.6f}, {:.6f}]\n", modes.center.x() * 1e6,
                     modes.center.y() * 1e6, modes.center.z() * 1e6);
  for (int s = 0; s < 3; ++s) {
    const auto& a = modes.axes[s];
    out << fmt::format("  {}:\n", kNames[s]);
    out << fmt::format("    frequency_MHz: {:.6f}\n", modes.frequencies[s] / 1e6);
    out << fmt::format("    axis: [{:.9f}, {:.9f}, {:.9f}]\n", a.x(), a.y(), a.z());
    out << fmt::format("    mathieu_q: {:.6e}\n", modes.mathieu_q[s]);
    out << fmt::format("    mathieu_a: {:.6e}\n", modes.mathieu_a[s]);
  }
  out << fmt::format("  tilt_deg: {:.4f}\n", modes.tilt_deg);
  out << fmt::format("  rf_tilt_deg: {:.4f}\n", modes.rf_tilt_deg);
  out << fmt::format("  rf_dc_misalignment_deg: {:.4f}\n", modes.rf_dc_misalignment_deg);
  out << fmt::format("  mathieu_stable: {}\n", modes.mathieu_stable ? "true" : "false");
}

void write_mode_csv(std::ostream& out, const ModeSet& modes) {
  static constexpr const char* kNames[] = {"x", "y", "z"};
  out << "mode,f_MHz,axis_x,axis_y,axis_z,q,a,tilt_deg,rf_tilt_deg,rf_dc_misalignment_deg\n";
  for (int s = 0; s < 3; ++s) {
    const auto& a = modes.axes[s];
    out << fmt::format("{},{:.9f},{:.9f},{:.9f},{:.9f},{:.9e},{:.9e},{:.6f},{:.6f},{:.6f}\n",
                       kNames[s], modes.frequencies[s] / 1e6, a.x(), a.y(), a.z(),
                       modes.mathieu_q[s], modes.mathieu_a[s], modes.tilt_deg, modes.rf_tilt_deg,
                       modes.rf_dc_misalignment_deg);
  }
}

}  // namespace iontrap::trap
