#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mgse {

using Vec3 = std::array<double, 3>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double infinity = std::numeric_limits<double>::infinity();

/// Magnetogyric ratio of 1H in rad s^-1 T^-1.
inline constexpr double proton_gamma = 2.6752e8;

struct PhysicalConstants {
  double gamma = proton_gamma;
  friend bool operator==(const PhysicalConstants&, const PhysicalConstants&) = default;
};

enum class Axis : int { x = 0, y = 1, z = 2 };

inline int index(Axis a) { return static_cast<int>(a); }

inline std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::x: return "x";
    case Axis::y: return "y";
    case Axis::z: return "z";
  }
  return "?";
}

enum class ErrorCode {
  invalid_argument,
  step_too_large,
  empty_input,
  time_grid_mismatch,
  window_exceeded,
  beyond_nyquist,
  grid_too_coarse,
  mismatched_total_time,
  nonpositive_value,
  dimension_mismatch,
  rank_collapse,
  non_monotone,
  column_mismatch,
  parse_error,
  validation_error,
  io_error,
  non_finite,
};

/// Library error. Every hard failure is reported through this type so that
/// callers can branch on `code()` without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

/// Non-fatal analysis warnings attached to results.
using Flags = std::vector<std::string>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

/// Fundamental angular frequency of CPMG modulation with inter-pulse spacing t_E.
inline double modulation_omega(double echo_time) { return pi / echo_time; }
/// Same in Hz: nu_m = 1 / (2 t_E).
inline double modulation_nu(double echo_time) { return 1.0 / (2.0 * echo_time); }

}  // namespace mgse
