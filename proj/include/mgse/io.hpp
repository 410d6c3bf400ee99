#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "mgse/core.hpp"
#include "mgse/encode.hpp"
#include "mgse/exchange.hpp"
#include "mgse/inversion.hpp"
#include "mgse/spectra.hpp"
#include "mgse/walk.hpp"

namespace mgse::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest text that parses back to the same double. Non-finite values are
/// refused so that no NaN or inf can reach an output file.
inline std::string format(double v) {
  if (!std::isfinite(v)) fail(ErrorCode::non_finite, "non-finite value in output");
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) fail(ErrorCode::io_error, "number formatting failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    fail(ErrorCode::parse_error, "line " + std::to_string(line) + ": not a number: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Write-temp-then-rename so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_error, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) fail(ErrorCode::io_error, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io_error, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = digits[d[i] >> 4];
    s[2 * i + 1] = digits[d[i] & 15];
  }
  return s;
}

inline std::string sha256(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::io_error, "sha256 failed");
  return hex(md, len);
}

inline std::string sha256_file(const fs::path& path) { return sha256(read_file(path)); }

/// CSV builder; every numeric cell goes through `format`.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : width_(header.size()) { line(header); }

  Table& row(std::initializer_list<std::string> cells) { return row(std::vector<std::string>(cells)); }
  Table& row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) fail(ErrorCode::column_mismatch, "row width differs from header");
    line(cells);
    return *this;
  }
  // Free-form line (matrix layouts with their own header rows).
  Table& raw(const std::vector<std::string>& cells) {
    line(cells);
    return *this;
  }
  const std::string& str() const { return text_; }
  void save(const fs::path& p) const { write_atomic(p, text_); }

 private:
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }
  std::size_t width_;
  std::string text_;
};

inline std::string f(double v) { return format(v); }
inline std::string u(std::size_t v) { return std::to_string(v); }

// ---------------------------------------------------------------- echo trains

inline const std::vector<std::string> echo_columns{"echo_index", "time_s", "amp_real", "amp_imag"};

inline std::string echo_train_csv(const EchoTrain& e) {
  Table t(echo_columns);
  for (std::size_t k = 0; k < e.times.size(); ++k)
    t.row({u(k), f(e.times[k]), f(e.amplitude[k].real()), f(e.amplitude[k].imag())});
  return t.str();
}

inline void write_echo_train(const fs::path& p, const EchoTrain& e) { write_atomic(p, echo_train_csv(e)); }

struct ScheduleHint {
  double echo_time = 0;  // s; 0 infers the spacing from the data
  std::size_t intercept_points = 8;
};

/// Reads the canonical echo CSV. The t -> 0 intercept comes from the t = 0
/// row when present, otherwise from a log-linear fit to the first echoes,
/// and all amplitudes are divided by it. Spacing gaps are flagged.
inline EchoTrain parse_echo_csv(const std::string& text, const ScheduleHint& hint = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  std::vector<std::size_t> index;
  std::vector<double> times;
  std::vector<std::complex<double>> amp;
  bool header = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto cells = split(line);
    if (!header) {
      if (cells.size() != echo_columns.size())
        fail(ErrorCode::column_mismatch, "expected columns echo_index,time_s,amp_real,amp_imag");
      for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string c(cells[i]);
        c.erase(std::remove_if(c.begin(), c.end(), [](char ch) { return ch == ' ' || ch == '\t'; }), c.end());
        if (c != echo_columns[i])
          fail(ErrorCode::column_mismatch, "column " + std::to_string(i + 1) + " is '" + c + "', expected '" +
                                               echo_columns[i] + "'");
      }
      header = true;
      continue;
    }
    if (cells.size() != echo_columns.size())
      fail(ErrorCode::column_mismatch, "line " + std::to_string(n) + " has " + std::to_string(cells.size()) +
                                           " fields, expected 4");
    const double id = parse_double(cells[0], n);
    require(id >= 0 && id == std::floor(id), ErrorCode::parse_error,
            "line " + std::to_string(n) + ": echo_index must be a non-negative integer");
    index.push_back(static_cast<std::size_t>(id));
    times.push_back(parse_double(cells[1], n));
    amp.emplace_back(parse_double(cells[2], n), parse_double(cells[3], n));
  }
  require(header, ErrorCode::column_mismatch, "missing header row");
  require(!times.empty(), ErrorCode::empty_input, "echo file has no data rows");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      fail(ErrorCode::non_monotone, "time_s is not strictly increasing at row " + std::to_string(k + 1));
  require(times.front() >= 0, ErrorCode::non_monotone, "negative echo time");

  EchoTrain e;
  const bool has_origin = times.front() == 0;
  std::complex<double> intercept;
  if (has_origin) {
    intercept = amp.front();
  } else {
    // ln|E| ~ a + b t over the first echoes; phase from the first echo.
    const std::size_t m = std::min(hint.intercept_points, times.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < m; ++k) {
      require(std::abs(amp[k]) > 0, ErrorCode::nonpositive_value, "zero amplitude in intercept window");
      const double y = std::log(std::abs(amp[k]));
      sx += times[k];
      sy += y;
      sxx += times[k] * times[k];
      sxy += times[k] * y;
    }
    const double dm = static_cast<double>(m);
    const double den = dm * sxx - sx * sx;
    const double b = m >= 2 && den > 0 ? (dm * sxy - sx * sy) / den : 0.0;
    const double a = (sy - b * sx) / dm;
    intercept = std::polar(std::exp(a), std::arg(amp.front()));
    e.flags.push_back("t = 0 intercept extrapolated from the first " + std::to_string(m) + " echoes");
  }
  require(std::abs(intercept) > 0, ErrorCode::nonpositive_value, "zero t -> 0 intercept");
  // Already-normalised files are left untouched so a round trip is exact.
  const bool unit = std::abs(intercept - std::complex<double>(1, 0)) <= 1e-12;
  if (!has_origin) {
    e.times.push_back(0);
    e.amplitude.emplace_back(1, 0);
  }
  for (std::size_t k = 0; k < times.size(); ++k) {
    e.times.push_back(times[k]);
    e.amplitude.push_back(unit ? amp[k] : amp[k] / intercept);
  }
  if (unit && has_origin) e.amplitude.front() = amp.front();

  std::vector<double> d;
  for (std::size_t k = 1; k < e.times.size(); ++k) d.push_back(e.times[k] - e.times[k - 1]);
  double spacing = hint.echo_time;
  if (spacing <= 0 && !d.empty()) {
    std::vector<double> s = d;
    std::nth_element(s.begin(), s.begin() + static_cast<long>(s.size() / 2), s.end());
    spacing = s[s.size() / 2];
  }
  e.echo_time = spacing;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d[k] > 1.5 * spacing)
      e.flags.push_back("gap of " + format(d[k]) + " s before t = " + format(e.times[k + 1]) + " s");
  for (std::size_t k = 1; k < index.size(); ++k)
    if (index[k] != index[k - 1] + 1)
      e.flags.push_back("echo_index jumps from " + std::to_string(index[k - 1]) + " to " + std::to_string(index[k]));
  return e;
}

inline EchoTrain ingest_echo_csv(const fs::path& path, const ScheduleHint& hint = {}) {
  EchoTrain e = parse_echo_csv(read_file(path), hint);
  e.schedule_id = path.filename().string();
  return e;
}

// ------------------------------------------------------------- other series

inline std::string trajectory_csv(const TrajectoryEnsemble& e, std::size_t max_walkers) {
  Table t({"walker_id", "step", "x_m", "y_m", "z_m"});
  const std::size_t nw = std::min(max_walkers, e.n_walkers);
  for (std::size_t w = 0; w < nw; ++w)
    for (std::size_t k = 0; k <= e.n_steps; ++k)
      t.row({u(w), u(k), f(e.at(w, k, 0)), f(e.at(w, k, 1)), f(e.at(w, k, 2))});
  return t.str();
}

inline std::string series_csv(const Series& s, const std::string& value_column) {
  Table t({"time_s", value_column});
  for (std::size_t k = 0; k < s.t.size(); ++k) t.row({f(s.t[k]), f(s.value[k])});
  return t.str();
}

inline std::string vacf_csv(const VacfSeries& v) {
  Table t({"lag_s", "vacf_m2_per_s2", "window_s"});
  for (std::size_t k = 0; k < v.lags.size(); ++k) t.row({f(v.lags[k]), f(v.values[k]), f(v.window)});
  return t.str();
}

inline std::string spectrum_csv(const DiffusionSpectrum& d, const std::string& population) {
  Table t({"omega_rad_per_s", "nu_hz", "D_m2_per_s", "window_s", "population"});
  for (std::size_t k = 0; k < d.omega.size(); ++k)
    t.row({f(d.omega[k]), f(d.omega[k] / (2 * pi)), f(d.D[k]), f(d.window), population});
  return t.str();
}

inline std::string otoc_csv(const OTOCSeries& s) {
  Table t({"echo_time_s", "omega_rad_per_s", "nu_hz", "time_s", "F"});
  for (std::size_t k = 0; k < s.beta.size(); ++k)
    t.row({f(s.echo_time[k]), f(s.omega_m[k]), f(s.omega_m[k] / (2 * pi)), f(s.time[k]), f(s.beta[k])});
  return t.str();
}

inline std::string entropy_csv(const EntropySeries& s, const std::vector<double>& D, const std::string& population) {
  Table t({"block", "time_s", "nu_hz", "omega_rad_per_s", "D_m2_per_s", "dS", "population"});
  for (std::size_t k = 0; k < s.dS.size(); ++k)
    t.row({u(s.block[k]), f(s.time[k]), f(s.nu[k]), f(2 * pi * s.nu[k]), f(D[k]), f(s.dS[k]), population});
  return t.str();
}

inline std::string distribution_csv(const RelaxationDistribution& d) {
  Table t({"T2_s", "amplitude"});
  for (std::size_t k = 0; k < d.T2.size(); ++k) t.row({f(d.T2[k]), f(d.amplitude[k])});
  return t.str();
}

/// Matrix layout: first header row holds the column grid, first column the
/// row grid.
inline std::string matrix_csv(const std::string& corner, const std::vector<double>& rows,
                              const std::vector<double>& cols, const Eigen::MatrixXd& M) {
  require(static_cast<std::size_t>(M.rows()) == rows.size() && static_cast<std::size_t>(M.cols()) == cols.size(),
          ErrorCode::dimension_mismatch, "matrix and grid sizes differ");
  Table t({});
  std::vector<std::string> h{corner};
  for (double c : cols) h.push_back(f(c));
  t.raw(h);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> r{f(rows[i])};
    for (std::size_t j = 0; j < cols.size(); ++j) r.push_back(f(M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    t.raw(r);
  }
  return t.str();
}

/// 2D echo matrix: header row with t_E2, then one row per t_E1 for the real
/// part and again for the imaginary part (first field "re" or "im").
inline std::string echo_matrix_csv(const ExchangeData& d) {
  const auto& x = d.experiment;
  Table t({});
  std::vector<std::string> h{"part", "t_E1_s\\t_E2_s"};
  for (double c : x.echo_times_2) h.push_back(f(c));
  t.raw(h);
  for (int part = 0; part < 2; ++part)
    for (std::size_t i = 0; i < x.echo_times_1.size(); ++i) {
      std::vector<std::string> r{part == 0 ? "re" : "im", f(x.echo_times_1[i])};
      for (std::size_t j = 0; j < x.echo_times_2.size(); ++j) {
        const auto v = d.E(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        r.push_back(f(part == 0 ? v.real() : v.imag()));
      }
      t.raw(r);
    }
  return t.str();
}

/// Exchange map: two header rows (nu2 in Hz, then rad/s), rows lead with
/// nu1 in Hz and rad/s.
inline std::string exchange_map_csv(const ExchangeMap& m) {
  Table t({});
  std::vector<std::string> h1{"nu1_hz", "omega1_rad_per_s"}, h2{"", ""};
  for (double v : m.nu2) {
    h1.push_back(f(v));
    h2.push_back(f(2 * pi * v));
  }
  t.raw(h1).raw(h2);
  for (std::size_t i = 0; i < m.nu1.size(); ++i) {
    std::vector<std::string> r{f(m.nu1[i]), f(2 * pi * m.nu1[i])};
    for (std::size_t j = 0; j < m.nu2.size(); ++j)
      r.push_back(f(m.intensity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    t.raw(r);
  }
  return t.str();
}

inline std::string two_time_csv(const TwoTimeOtoc& o) {
  const std::size_t n1 = o.echo_times_1.size(), n2 = o.echo_times_2.size();
  Table t({"t_E1_s", "t_E2_s", "F", "valid"});
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      const bool ok = o.valid(ii, jj) != 0;
      t.row({f(o.echo_times_1[i]), f(o.echo_times_2[j]), ok ? f(o.F(ii, jj)) : std::string("0"), ok ? "1" : "0"});
    }
  return t.str();
}

/// Pretty JSON with numbers checked for finiteness.
inline std::string json_text(const json& j) {
  std::vector<const json*> stack{&j};
  while (!stack.empty()) {
    const json* v = stack.back();
    stack.pop_back();
    if (v->is_number_float() && !std::isfinite(v->get<double>()))
      fail(ErrorCode::non_finite, "non-finite value in JSON output");
    if (v->is_structured())
      for (const auto& c : *v) stack.push_back(&c);
  }
  return j.dump(2) + "\n";
}

}  // namespace mgse::io
