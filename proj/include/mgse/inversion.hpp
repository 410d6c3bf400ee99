#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mgse/core.hpp"
#include "mgse/schedule.hpp"

namespace mgse {

struct NnlsResult {
  Eigen::VectorXd x;
  double residual_norm = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lawson-Hanson active-set NNLS: min ||A x - b|| subject to x >= 0.
inline NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, std::size_t max_iter = 0) {
  require(A.rows() == b.size(), ErrorCode::dimension_mismatch, "nnls: A and b sizes differ");
  const Eigen::Index n = A.cols();
  if (max_iter == 0) max_iter = 3 * static_cast<std::size_t>(n) + 30;
  NnlsResult r;
  r.x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 10 * std::numeric_limits<double>::epsilon() * A.cwiseAbs().colwise().sum().maxCoeff() *
                     static_cast<double>(std::max(A.rows(), n));
  Eigen::VectorXd w = A.transpose() * (b - A * r.x);

  auto solve_passive = [&](Eigen::VectorXd& s) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[j]) idx.push_back(j);
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    Eigen::VectorXd sp = Ap.colPivHouseholderQr().solve(b);
    s.setZero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) s(idx[k]) = sp(static_cast<Eigen::Index>(k));
  };

  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    Eigen::Index j_best = -1;
    double w_best = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[j] && w(j) > w_best) {
        w_best = w(j);
        j_best = j;
      }
    if (j_best < 0) {
      r.converged = true;
      break;
    }
    passive[j_best] = true;
    Eigen::VectorXd s;
    for (std::size_t inner = 0; inner < static_cast<std::size_t>(3 * n + 3); ++inner) {
      solve_passive(s);
      double alpha = 1;
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && s(j) <= 0) {
          feasible = false;
          const double den = r.x(j) - s(j);
          if (den > 0) alpha = std::min(alpha, r.x(j) / den);
        }
      }
      if (feasible) {
        r.x = s;
        break;
      }
      r.x += alpha * (s - r.x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && r.x(j) <= tol * 1e-3) {
          passive[j] = false;
          r.x(j) = 0;
        }
    }
    w = A.transpose() * (b - A * r.x);
  }
  r.residual_norm = (A * r.x - b).norm();
  return r;
}

/// Largest violation of the NNLS optimality conditions relative to the
/// gradient scale: gradient >= 0 where x = 0 and gradient = 0 where x > 0.
inline double kkt_violation(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = A.transpose() * (A * x - b);
  const double scale = std::max((A.transpose() * b).cwiseAbs().maxCoeff(), 1e-300);
  double worst = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x(j) < 0) worst = std::max(worst, -x(j));
    worst = std::max(worst, x(j) > 0 ? std::abs(g(j)) / scale : std::max(0.0, -g(j)) / scale);
  }
  return worst;
}

inline Eigen::MatrixXd exponential_kernel(const std::vector<double>& t, const std::vector<double>& T2) {
  Eigen::MatrixXd K(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(T2.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < T2.size(); ++j) K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(-t[i] / T2[j]);
  return K;
}

/// 64 log-spaced points over [0.1 x shortest positive time, 10 x longest time].
inline std::vector<double> default_relaxation_grid(const std::vector<double>& t, std::size_t n = 64) {
  double lo = infinity, hi = 0;
  for (double x : t) {
    if (x > 0) lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  require(hi > 0 && std::isfinite(lo), ErrorCode::empty_input, "no positive sample times");
  return log_grid(0.1 * lo, 10 * hi, n);
}

struct RelaxationDistribution {
  std::vector<double> T2;
  std::vector<double> amplitude;
  double lambda = 0;
  double residual_norm = 0;
  double kkt = 0;
  Flags flags;
};

inline void check_decay(const std::vector<double>& t, const std::vector<double>& y) {
  require(!t.empty() && t.size() == y.size(), ErrorCode::empty_input, "decay is empty or lengths differ");
  double lo = infinity, hi = 0;
  for (double x : t) {
    if (x > 0) lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double decades = hi > lo ? std::log10(hi / lo) : 0.0;
  require(static_cast<double>(t.size()) >= 2 * decades, ErrorCode::invalid_argument,
          "decay has fewer than two samples per decade of time coverage");
}

/// min ||K f - y||^2 + lambda^2 ||f||^2 with f >= 0, K_jk = exp(-t_j / T2_k).
inline RelaxationDistribution nnls_tikhonov_1d(const std::vector<double>& t, const std::vector<double>& y,
                                               const std::vector<double>& grid, double lambda) {
  check_decay(t, y);
  require(lambda >= 0, ErrorCode::invalid_argument, "lambda must be non-negative");
  require(!grid.empty() && std::is_sorted(grid.begin(), grid.end()), ErrorCode::non_monotone,
          "relaxation grid must be increasing");
  RelaxationDistribution d;
  d.T2 = grid;
  d.lambda = lambda;
  const auto m = static_cast<Eigen::Index>(t.size());
  const auto n = static_cast<Eigen::Index>(grid.size());
  const Eigen::MatrixXd K = exponential_kernel(t, grid);
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), m);
  if (b.cwiseAbs().maxCoeff() == 0) {
    d.amplitude.assign(grid.size(), 0.0);
    d.flags.push_back("all-zero data");
    return d;
  }
  Eigen::MatrixXd A(m + (lambda > 0 ? n : 0), n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(A.rows());
  A.topRows(m) = K;
  rhs.head(m) = b;
  if (lambda > 0) A.bottomRows(n) = lambda * Eigen::MatrixXd::Identity(n, n);
  const auto r = nnls(A, rhs);
  d.amplitude.assign(r.x.data(), r.x.data() + n);
  d.residual_norm = (K * r.x - b).norm();
  d.kkt = kkt_violation(A, rhs, r.x);
  if (!r.converged) d.flags.push_back("nnls iteration limit reached");
  return d;
}

struct RegularizationChoice {
  double lambda = 0;
  double sigma = 0;
  bool fallback = false;  // L-curve corner used
  Flags flags;
};

namespace detail {

// Late-time noise estimate; negative when the tail still carries signal.
inline double tail_sigma(const std::vector<double>& y) {
  const std::size_t n = y.size();
  const std::size_t m = std::max<std::size_t>(n / 4, 4);
  if (n < 8) return -1;
  double mean = 0;
  for (std::size_t i = n - m; i < n; ++i) mean += y[i];
  mean /= static_cast<double>(m);
  double var = 0;
  for (std::size_t i = n - m; i < n; ++i) var += (y[i] - mean) * (y[i] - mean);
  var /= static_cast<double>(m - 1);
  const double sd = std::sqrt(var);
  if (!(sd > 0) || std::abs(mean) > 3 * sd / std::sqrt(static_cast<double>(m))) return -1;
  return sd;
}

inline double menger_curvature(double x0, double y0, double x1, double y1, double x2, double y2) {
  const double a = std::hypot(x1 - x0, y1 - y0), b = std::hypot(x2 - x1, y2 - y1), c = std::hypot(x2 - x0, y2 - y0);
  const double area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
  const double den = a * b * c;
  return den > 0 ? 2 * area2 / den : 0.0;
}

}  // namespace detail

/// Discrepancy principle over a log lambda grid. `sigma <= 0` estimates the
/// noise from the late-time tail.
inline RegularizationChoice choose_regularization(const std::vector<double>& t, const std::vector<double>& y,
                                                  const std::vector<double>& grid, double sigma,
                                                  std::size_t n_lambda = 41) {
  check_decay(t, y);
  RegularizationChoice c;
  const Eigen::MatrixXd K = exponential_kernel(t, grid);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(K);
  const double s1 = svd.singularValues()(0);
  const auto lambdas = log_grid(1e-8 * s1, 10 * s1, n_lambda);
  const double N = static_cast<double>(y.size());

  bool estimable = true;
  if (sigma < 0 || std::isnan(sigma)) {
    sigma = detail::tail_sigma(y);
    if (sigma <= 0) {
      estimable = false;
      c.flags.push_back("noise level not estimable from the decay tail");
    } else {
      c.flags.push_back("noise level estimated from the decay tail");
    }
  }
  c.sigma = std::max(sigma, 0.0);
  if (estimable && sigma == 0) {
    c.lambda = lambdas.front();
    return c;
  }

  double ynorm = 0;
  for (double v : y) ynorm += v * v;
  ynorm = std::sqrt(ynorm);
  const double target = 1.05 * sigma * std::sqrt(N);
  if (estimable && ynorm <= target) {
    c.flags.push_back("data indistinguishable from noise");
    estimable = false;
  }

  std::vector<double> rho, eta;
  for (double lam : lambdas) {
    const auto d = nnls_tikhonov_1d(t, y, grid, lam);
    double fn = 0;
    for (double a : d.amplitude) fn += a * a;
    rho.push_back(d.residual_norm);
    eta.push_back(std::sqrt(fn));
  }
  if (estimable) {
    for (std::size_t i = lambdas.size(); i-- > 0;) {
      if (rho[i] <= target) {
        c.lambda = lambdas[i];
        return c;
      }
    }
    c.flags.push_back("discrepancy target not met on the lambda grid; smallest lambda used");
    c.lambda = lambdas.front();
    return c;
  }
  c.fallback = true;
  double best = -infinity;
  std::size_t arg = lambdas.size() / 2;
  for (std::size_t i = 1; i + 1 < lambdas.size(); ++i) {
    auto L = [](double v) { return std::log(std::max(v, 1e-300)); };
    const double k = detail::menger_curvature(L(rho[i - 1]), L(eta[i - 1]), L(rho[i]), L(eta[i]), L(rho[i + 1]), L(eta[i + 1]));
    if (k > best) {
      best = k;
      arg = i;
    }
  }
  c.lambda = lambdas[arg];
  return c;
}

struct Peak {
  double centre = 0;  // amplitude-weighted geometric mean of T2
  double mass = 0;
  std::size_t first = 0, last = 0;
};

/// Contiguous clusters of the distribution above `rel` x max amplitude.
inline std::vector<Peak> find_peaks(const std::vector<double>& grid, const std::vector<double>& amp, double rel = 1e-3) {
  std::vector<Peak> out;
  if (amp.empty()) return out;
  const double mx = *std::max_element(amp.begin(), amp.end());
  if (!(mx > 0)) return out;
  std::size_t i = 0;
  while (i < amp.size()) {
    if (amp[i] <= rel * mx) {
      ++i;
      continue;
    }
    Peak p;
    p.first = i;
    double wl = 0;
    while (i < amp.size() && amp[i] > rel * mx) {
      p.mass += amp[i];
      wl += amp[i] * std::log(grid[i]);
      ++i;
    }
    p.last = i - 1;
    p.centre = std::exp(wl / p.mass);
    out.push_back(p);
  }
  return out;
}

struct PencilComponent {
  std::complex<double> rate;       // s^-1; signal ~ exp(-rate t)
  std::complex<double> amplitude;
};

struct PencilResult {
  std::vector<PencilComponent> components;
  std::size_t order = 0;
  std::size_t pencil = 0;
  std::vector<double> singular_values;
};

struct PencilOptions {
  std::size_t L = 0;          // 0 selects N/3
  double noise_sigma = 0;     // cutoff = max(sigma sqrt(N), rel_cutoff s1)
  double rel_cutoff = 1e-8;
};

inline PencilResult matrix_pencil(const std::vector<std::complex<double>>& y, double dt, const PencilOptions& opt = {}) {
  const std::size_t N = y.size();
  require(dt > 0, ErrorCode::invalid_argument, "sampling interval must be positive");
  const std::size_t L = opt.L ? opt.L : N / 3;
  require(N >= 2 * L + 1 && L >= 1, ErrorCode::invalid_argument, "signal too short for the pencil parameter");
  require(4 * L >= N && 2 * L <= N, ErrorCode::invalid_argument, "pencil parameter must lie in [N/4, N/2]");
  using CM = Eigen::MatrixXcd;
  const auto rows = static_cast<Eigen::Index>(N - L), cols = static_cast<Eigen::Index>(L + 1);
  CM Y(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) Y(i, j) = y[static_cast<std::size_t>(i + j)];
  Eigen::BDCSVD<CM> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  PencilResult r;
  r.pencil = L;
  r.singular_values.assign(sv.data(), sv.data() + sv.size());
  if (sv.size() == 0 || sv(0) == 0) return r;
  const double cutoff = std::max(opt.noise_sigma * std::sqrt(static_cast<double>(N)), opt.rel_cutoff * sv(0));
  Eigen::Index M = 0;
  while (M < sv.size() && sv(M) > cutoff) ++M;
  if (M == 0) fail(ErrorCode::rank_collapse, "singular-value threshold retains no components");
  r.order = static_cast<std::size_t>(M);
  const CM V = svd.matrixV().leftCols(M);
  const CM V1h = V.topRows(cols - 1).adjoint();
  const CM V2h = V.bottomRows(cols - 1).adjoint();
  const CM A = V2h * V1h.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::ComplexEigenSolver<CM> es(A);
  const Eigen::VectorXcd z = es.eigenvalues();
  CM Z(static_cast<Eigen::Index>(N), M);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(N); ++k)
    for (Eigen::Index i = 0; i < M; ++i) Z(k, i) = std::pow(z(i), static_cast<double>(k));
  Eigen::VectorXcd yv(static_cast<Eigen::Index>(N));
  for (std::size_t k = 0; k < N; ++k) yv(static_cast<Eigen::Index>(k)) = y[k];
  const Eigen::VectorXcd a = Z.colPivHouseholderQr().solve(yv);
  for (Eigen::Index i = 0; i < M; ++i) r.components.push_back({-std::log(z(i)) / dt, a(i)});
  std::sort(r.components.begin(), r.components.end(),
            [](const PencilComponent& p, const PencilComponent& q) { return p.rate.real() > q.rate.real(); });
  return r;
}

struct Map2D {
  std::vector<double> rows, cols;
  Eigen::MatrixXd F;
  double lambda = 0;
  double residual_norm = 0;
  std::size_t rank_rows = 0, rank_cols = 0;
  std::size_t iterations = 0;
  Flags flags;
  double total() const { return F.sum(); }
};

namespace detail {

struct Compressed {
  Eigen::MatrixXd U;   // data-space basis (m x r)
  Eigen::MatrixXd Kc;  // S V^T (r x n)
};

inline Compressed compress(const Eigen::MatrixXd& K, double rel) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(K, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::Index r = 0;
  if (s.size() > 0 && s(0) > 0)
    while (r < s.size() && s(r) >= rel * s(0)) ++r;
  Compressed c;
  c.U = svd.matrixU().leftCols(r);
  c.Kc = s.head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose();
  return c;
}

// Dual Newton solve of min 1/2||K f - m||^2 + alpha/2 ||f||^2, f >= 0, for
// small row count: f = max(0, K^T c) at the unique minimiser c of
// chi(c) = 1/2 ||max(0, K^T c)||^2 + alpha/2 ||c||^2 - c^T m.
inline Eigen::VectorXd nonneg_tikhonov_dual(const Eigen::MatrixXd& K, const Eigen::VectorXd& m, double alpha,
                                            std::size_t& iterations) {
  const Eigen::Index r = K.rows();
  Eigen::VectorXd c = Eigen::VectorXd::Zero(r);
  auto chi = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd f = (K.transpose() * v).cwiseMax(0.0);
    return 0.5 * f.squaredNorm() + 0.5 * alpha * v.squaredNorm() - v.dot(m);
  };
  double val = chi(c);
  const double gscale = std::max(m.norm(), 1e-300);
  for (iterations = 0; iterations < 500; ++iterations) {
    const Eigen::VectorXd kc = K.transpose() * c;
    const Eigen::VectorXd f = kc.cwiseMax(0.0);
    const Eigen::VectorXd grad = K * f + alpha * c - m;
    if (grad.norm() <= 1e-13 * gscale) break;
    Eigen::MatrixXd H = alpha * Eigen::MatrixXd::Identity(r, r);
    for (Eigen::Index j = 0; j < K.cols(); ++j)
      if (kc(j) > 0) H.noalias() += K.col(j) * K.col(j).transpose();
    const Eigen::VectorXd step = -H.ldlt().solve(grad);
    double t = 1;
    double next = chi(c + step);
    while (next > val + 1e-4 * t * grad.dot(step) && t > 1e-12) {
      t *= 0.5;
      next = chi(c + t * step);
    }
    c += t * step;
    if (std::abs(val - next) <= 1e-16 * std::max(1.0, std::abs(val)) && t < 1) {
      val = next;
      break;
    }
    val = next;
  }
  return (K.transpose() * c).cwiseMax(0.0);
}

}  // namespace detail

/// min ||K1 F K2^T - E||^2 + lambda^2 ||F||^2 with F >= 0, after truncating
/// both kernels to singular values >= `rel_cutoff` of their largest.
inline Map2D invert_2d(const Eigen::MatrixXd& E, const Eigen::MatrixXd& K1, const Eigen::MatrixXd& K2, double lambda,
                       const std::vector<double>& row_grid = {}, const std::vector<double>& col_grid = {},
                       double rel_cutoff = 1e-3) {
  require(E.rows() == K1.rows() && E.cols() == K2.rows(), ErrorCode::dimension_mismatch,
          "data and kernel dimensions do not match");
  require(lambda >= 0, ErrorCode::invalid_argument, "lambda must be non-negative");
  Map2D map;
  map.rows = row_grid;
  map.cols = col_grid;
  map.lambda = lambda;
  const Eigen::Index n1 = K1.cols(), n2 = K2.cols();
  map.F = Eigen::MatrixXd::Zero(n1, n2);
  if (E.cwiseAbs().maxCoeff() == 0) {
    map.flags.push_back("all-zero data");
    return map;
  }
  const auto c1 = detail::compress(K1, rel_cutoff);
  const auto c2 = detail::compress(K2, rel_cutoff);
  map.rank_rows = static_cast<std::size_t>(c1.Kc.rows());
  map.rank_cols = static_cast<std::size_t>(c2.Kc.rows());
  if (map.rank_rows == 0 || map.rank_cols == 0) fail(ErrorCode::rank_collapse, "kernel compression retained no singular values");
  const Eigen::MatrixXd Ec = c1.U.transpose() * E * c2.U;
  const Eigen::Index r1 = c1.Kc.rows(), r2 = c2.Kc.rows();
  // vec(K1 F K2^T) = (K2 kron K1) vec(F), column-major.
  Eigen::MatrixXd K(r1 * r2, n1 * n2);
  for (Eigen::Index b = 0; b < r2; ++b)
    for (Eigen::Index j = 0; j < n2; ++j) K.block(b * r1, j * n1, r1, n1) = c2.Kc(b, j) * c1.Kc;
  const Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(Ec.data(), r1 * r2);
  Eigen::VectorXd f;
  if (lambda > 0) {
    f = detail::nonneg_tikhonov_dual(K, m, lambda * lambda, map.iterations);
  } else {
    const auto res = nnls(K, m);
    f = res.x;
    map.iterations = res.iterations;
  }
  map.F = Eigen::Map<const Eigen::MatrixXd>(f.data(), n1, n2);
  map.residual_norm = (K1 * map.F * K2.transpose() - E).norm();
  return map;
}

}  // namespace mgse
