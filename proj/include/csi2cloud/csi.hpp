// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "csi2cloud/common.hpp"

namespace c2c {

using Complex = std::complex<double>;

/// Row-major M x K complex matrix (M subcarriers, K antenna links).
struct CsiFrame {
  std::size_t subcarriers = 0;  // M
  std::size_t links = 0;        // K
  std::vector<Complex> h;       // subcarrier-major
  double center_hz = 0.0;
  double spacing_hz = 0.0;
  double timestamp = 0.0;

  Complex& at(std::size_t m, std::size_t k) { return h[m * links + k]; }
  const Complex& at(std::size_t m, std::size_t k) const { return h[m * links + k]; }

  void validate() const {
    require(subcarriers >= 1 && links >= 1, "csi frame: M and K must be >= 1");
    require(h.size() == subcarriers * links, "csi frame: storage size mismatch");
    for (const Complex& v : h) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw NumericError("csi frame: non-finite entry");
      }
    }
  }
};

/// Real M x 2K feature matrix, amplitude block then phase block.
struct CsiFeatures {
  std::size_t subcarriers = 0;
  std::size_t links = 0;
  std::vector<double> c;  // row-major M x 2K

  double& at(std::size_t m, std::size_t col) { return c[m * 2 * links + col]; }
  double at(std::size_t m, std::size_t col) const { return c[m * 2 * links + col]; }
};

/// Elementwise |H|.
inline std::vector<double> amplitude(const CsiFrame& frame) {
  std::vector<double> a(frame.h.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(frame.h[i]);
  return a;
}

/// Elementwise angle(H) in (-pi, pi].
inline std::vector<double> phase(const CsiFrame& frame) {
  std::vector<double> p(frame.h.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::atan2(frame.h[i].imag(), frame.h[i].real());
    if (p[i] == -std::numbers::pi) p[i] = std::numbers::pi;
  }
  return p;
}

/// Raw hardware phase is wrapped to (-pi, pi] and rides on a linear
/// sampling-time-offset ramp. Per link: unwrap along the subcarrier axis,
/// then remove the least-squares affine trend in subcarrier index. The
/// output has zero mean and zero linear trend per link.
inline std::vector<double> sanitize_phase(const std::vector<double>& raw, std::size_t subcarriers,
                                          std::size_t links) {
  require(raw.size() == subcarriers * links, "sanitize_phase: size mismatch");
  std::vector<double> out(raw.size());
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> unwrapped(subcarriers);
  for (std::size_t k = 0; k < links; ++k) {
    unwrapped[0] = raw[k];
    double offset = 0.0;
    for (std::size_t m = 1; m < subcarriers; ++m) {
      const double d = raw[m * links + k] - raw[(m - 1) * links + k];
      if (d > std::numbers::pi) {
        offset -= two_pi;
      } else if (d < -std::numbers::pi) {
        offset += two_pi;
      }
      unwrapped[m] = raw[m * links + k] + offset;
    }
    // Least-squares fit phi ~ a + b*m over m = 0..M-1.
    const double n = static_cast<double>(subcarriers);
    double sum = 0.0, sum_m = 0.0, sum_mm = 0.0, sum_mp = 0.0;
    for (std::size_t m = 0; m < subcarriers; ++m) {
      const double x = static_cast<double>(m);
      sum += unwrapped[m];
      sum_m += x;
      sum_mm += x * x;
      sum_mp += x * unwrapped[m];
    }
    const double denom = n * sum_mm - sum_m * sum_m;
    double a, b;
    if (denom > 0.0) {
      b = (n * sum_mp - sum_m * sum) / denom;
      a = (sum - b * sum_m) / n;
    } else {  // single subcarrier: remove the mean only
      b = 0.0;
      a = sum / n;
    }
    for (std::size_t m = 0; m < subcarriers; ++m) {
      out[m * links + k] = unwrapped[m] - (a + b * static_cast<double>(m));
    }
  }
  return out;
}

/// C = [A | Phi] columnwise into M x 2K. Phase sanitized when requested.
inline CsiFeatures to_features(const CsiFrame& frame, bool sanitize) {
  CsiFeatures f;
  f.subcarriers = frame.subcarriers;
  f.links = frame.links;
  f.c.resize(frame.subcarriers * 2 * frame.links);
  const std::vector<double> a = amplitude(frame);
  std::vector<double> p = phase(frame);
  if (sanitize) p = sanitize_phase(p, frame.subcarriers, frame.links);
  for (std::size_t m = 0; m < frame.subcarriers; ++m) {
    for (std::size_t k = 0; k < frame.links; ++k) {
      f.at(m, k) = a[m * frame.links + k];
      f.at(m, frame.links + k) = p[m * frame.links + k];
    }
  }
  return f;
}

/// Several measurements of the same channel collapse to one frame: per-entry
/// mean amplitude and circular mean phase.
inline CsiFrame aggregate_frames(const std::vector<CsiFrame>& frames) {
  require(!frames.empty(), "aggregate_frames: no frames");
  const std::size_t m = frames[0].subcarriers, k = frames[0].links;
  for (const CsiFrame& f : frames) {
    require(f.subcarriers == m && f.links == k, "aggregate_frames: inconsistent dimensions");
  }
  CsiFrame out;
  out.subcarriers = m;
  out.links = k;
  out.center_hz = frames[0].center_hz;
  out.spacing_hz = frames[0].spacing_hz;
  out.timestamp = frames[0].timestamp;
  out.h.resize(m * k);
  const double inv_n = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < out.h.size(); ++i) {
    double amp = 0.0;
    Complex dir{0.0, 0.0};
    for (const CsiFrame& f : frames) {
      const double a = std::abs(f.h[i]);
      amp += a;
      if (a > 0.0) dir += f.h[i] / a;
    }
    amp *= inv_n;
    const double ang = (dir == Complex{0.0, 0.0}) ? 0.0 : std::atan2(dir.imag(), dir.real());
    out.h[i] = std::polar(amp, ang);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Least-squares channel estimation from pilot symbols.
// ---------------------------------------------------------------------------

/// Dense row-major complex matrix, just enough for the LS solve.
struct CMat {
  std::size_t rows = 0, cols = 0;
  std::vector<Complex> v;

  CMat() = default;
  CMat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c) {}
  Complex& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const Complex& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline CMat cmat_mul(const CMat& a, const CMat& b) {
  require(a.cols == b.rows, "cmat_mul: shape mismatch");
  CMat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const Complex aik = a.at(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

inline CMat cmat_hermitian(const CMat& a) {
  CMat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = std::conj(a.at(i, j));
  }
  return out;
}

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gauss-Jordan inverse with partial pivoting. Throws EstimationError when a
/// pivot collapses (singular Gram matrix).
inline CMat cmat_inverse(CMat a) {
  require(a.rows == a.cols, "cmat_inverse: square matrix required");
  const std::size_t n = a.rows;
  CMat inv(n, n);
  for (std::size_t i = 0; i < n; ++i) inv.at(i, i) = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a.at(r, col)) > std::abs(a.at(pivot, col))) pivot = r;
    }
    if (std::abs(a.at(pivot, col)) < 1e-12) {
      throw EstimationError("ls_estimate: singular pilot Gram matrix");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(a.at(pivot, j), a.at(col, j));
        std::swap(inv.at(pivot, j), inv.at(col, j));
      }
    }
    const Complex d = a.at(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      a.at(col, j) /= d;
      inv.at(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const Complex f = a.at(r, col);
      if (f == Complex{0.0, 0.0}) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a.at(r, j) -= f * a.at(col, j);
        inv.at(r, j) -= f * inv.at(col, j);
      }
    }
  }
  return inv;
}

/// Known pilots and the corresponding received symbols, one pair per
/// subcarrier. pilots[k] is N_t x P, received[k] is N_r x P.
struct PilotBlock {
  std::vector<CMat> pilots;
  std::vector<CMat> received;
};

/// H_hat = r p^H (p p^H)^-1 per subcarrier.
inline std::vector<CMat> ls_estimate(const PilotBlock& block) {
  require(block.pilots.size() == block.received.size() && !block.pilots.empty(),
          "ls_estimate: pilots/received must pair up per subcarrier");
  std::vector<CMat> estimates;
  estimates.reserve(block.pilots.size());
  for (std::size_t k = 0; k < block.pilots.size(); ++k) {
    const CMat& p = block.pilots[k];
    const CMat& r = block.received[k];
    require(p.cols == r.cols, "ls_estimate: pilot/received symbol count mismatch");
    const CMat ph = cmat_hermitian(p);
    const CMat gram_inv = cmat_inverse(cmat_mul(p, ph));
    estimates.push_back(cmat_mul(cmat_mul(r, ph), gram_inv));
  }
  return estimates;
}

// ---------------------------------------------------------------------------
// CSI log lines: t=<seconds>,M=<int>,K=<int>,<re>,<im>,... with M*K complex
// pairs in subcarrier-major order, LF-terminated.
// ---------------------------------------------------------------------------

inline std::string format_csi_log_line(const CsiFrame& frame) {
  std::ostringstream out;
  out << "t=" << fmt_full(frame.timestamp) << ",M=" << frame.subcarriers
      << ",K=" << frame.links;
  for (const Complex& v : frame.h) {
    out << ',' << fmt_full(v.real()) << ',' << fmt_full(v.imag());
  }
  return out.str();
}

inline std::string format_csi_log(const std::vector<CsiFrame>& frames) {
  std::string out;
  for (const CsiFrame& f : frames) {
    out += format_csi_log_line(f);
    out += '\n';
  }
  return out;
}

inline void write_csi_log(const std::vector<CsiFrame>& frames,
                          const std::filesystem::path& path) {
  atomic_write_file(path, format_csi_log(frames));
}

namespace detail {

inline double parse_csi_number(const std::string& token, std::size_t line_no) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &pos);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + token + "'");
  }
  if (pos != token.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + token + "'");
  }
  return v;
}

}  // namespace detail

inline std::vector<CsiFrame> parse_csi_log(const std::string& text, double center_hz = 0.0,
                                           double spacing_hz = 0.0) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<CsiFrame> frames;
  std::size_t expected_m = 0, expected_k = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() < 3 || fields[0].rfind("t=", 0) != 0 || fields[1].rfind("M=", 0) != 0 ||
        fields[2].rfind("K=", 0) != 0) {
      throw ParseError("line " + std::to_string(line_no) + ": expected t=,M=,K= prefix");
    }
    CsiFrame frame;
    frame.timestamp = detail::parse_csi_number(fields[0].substr(2), line_no);
    const double m_val = detail::parse_csi_number(fields[1].substr(2), line_no);
    const double k_val = detail::parse_csi_number(fields[2].substr(2), line_no);
    if (m_val < 1 || k_val < 1 || m_val != std::floor(m_val) || k_val != std::floor(k_val)) {
      throw ParseError("line " + std::to_string(line_no) + ": M and K must be positive integers");
    }
    frame.subcarriers = static_cast<std::size_t>(m_val);
    frame.links = static_cast<std::size_t>(k_val);
    frame.center_hz = center_hz;
    frame.spacing_hz = spacing_hz;
    const std::size_t want = frame.subcarriers * frame.links;
    if (fields.size() - 3 != 2 * want) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(2 * want) +
                       " real values for M*K complex entries, got " +
                       std::to_string(fields.size() - 3));
    }
    if (expected_m == 0) {
      expected_m = frame.subcarriers;
      expected_k = frame.links;
    } else if (frame.subcarriers != expected_m || frame.links != expected_k) {
      throw ParseError("line " + std::to_string(line_no) + ": M/K inconsistent with earlier frames");
    }
    frame.h.resize(want);
    for (std::size_t i = 0; i < want; ++i) {
      frame.h[i] = Complex(detail::parse_csi_number(fields[3 + 2 * i], line_no),
                           detail::parse_csi_number(fields[4 + 2 * i], line_no));
    }
    frames.push_back(std::move(frame));
  }
  std::stable_sort(frames.begin(), frames.end(),
                   [](const CsiFrame& a, const CsiFrame& b) { return a.timestamp < b.timestamp; });
  return frames;
}

inline std::vector<CsiFrame> load_csi_log(const std::filesystem::path& path,
                                          double center_hz = 0.0, double spacing_hz = 0.0) {
  return parse_csi_log(read_file(path), center_hz, spacing_hz);
}

}  // namespace c2c
