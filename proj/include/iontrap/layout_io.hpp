#pragma once

// Trap layout files and mode reports.
//
// A layout file is YAML with a `units` header followed by fields that mirror
// TrapLayout one to one:
//
//   units: {length: um, voltage: V, angular_frequency: rad/s}
//   rf_amplitude: 82.0
//   rf_omega: 9.42477796e7
//   dc_bounds: [-10, 15]
//   electrodes:
//     - {id: rf_wide, role: RF, x_range: [130, 540], z_range: [-3000, 3000]}
//   dc_voltages: {dc_center: 0.5}
//
// Supported length units are m, mm and um; voltages are in V and angular
// frequencies in rad/s.

#include <iosfwd>
#include <string>

#include "iontrap/trap_model.hpp"

namespace iontrap::trap {

/// Throws ConfigError for malformed content and IoError when unreadable.
TrapLayout load_layout(const std::string& path);
TrapLayout parse_layout(const std::string& yaml_text);

/// Serializes with the given length unit ("m", "mm" or "um").
std::string format_layout(const TrapLayout& layout, const std::string& length_unit = "um");
void save_layout(const TrapLayout& layout, const std::string& path,
                 const std::string& length_unit = "um");

/// Mode report as YAML text (frequencies in MHz, angles in degrees).
void write_mode_report(std::ostream& out, const RfNullResult& null, const ModeSet& modes);

/// One row per mode: mode,f_MHz,axis_x,axis_y,axis_z,q,a followed by the
/// tilt and misalignment columns repeated on every row.
void write_mode_csv(std::ostream& out, const ModeSet& modes);

}  // namespace iontrap::trap
