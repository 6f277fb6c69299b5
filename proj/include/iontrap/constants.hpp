#pragma once

// Physical constants (CODATA 2018). Every module reads constants from here.

namespace iontrap::constants {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline constexpr double kElementaryCharge = 1.602176634e-19;  // C (exact)
inline constexpr double kPlanck = 6.62607015e-34;             // J s (exact)
inline constexpr double kHbar = 1.054571817e-34;              // J s
inline constexpr double kSpeedOfLight = 299792458.0;          // m/s (exact)
inline constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m
inline constexpr double kAtomicMassUnit = 1.66053906660e-27;     // kg
inline constexpr double kElectronMassU = 5.48579909065e-4;       // u
inline constexpr double kBoltzmann = 1.380649e-23;               // J/K (exact)

/// One debye, 1e-21 / c in C m.
inline constexpr double kDebye = 1e-21 / kSpeedOfLight;

/// 40Ca atomic mass in u.
inline constexpr double kCalcium40MassU = 39.962590863;

inline constexpr double kElectronVolt = kElementaryCharge;  // J
inline constexpr double kMilliElectronVolt = 1e-3 * kElectronVolt;

inline constexpr double kMicrometer = 1e-6;
inline constexpr double kMegahertz = 1e6;

}  // namespace iontrap::constants
