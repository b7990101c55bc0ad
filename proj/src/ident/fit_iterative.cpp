#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "rodspring/core/errors.hpp"
#include "rodspring/ident/fit.hpp"

namespace rodspring::ident {

ThetaLayout theta_layout(const std::vector<BlockLayout>& layout) {
  ThetaLayout out;
  out.lin_offset.resize(layout.size());
  out.ang_offset.resize(layout.size());
  long offset = 0;
  for (size_t b = 0; b < layout.size(); ++b) {
    out.lin_offset[b] = offset;
    offset += layout[b].n_cols();
    out.ang_offset[b] = offset;
    offset += layout[b].n_cols();
  }
  out.size = offset;
  return out;
}

namespace {

/// Loss of one row under ratio vector theta, gradient accumulated into
/// `grad` when non-null. Terms follow the integrator: v' = v + dt a,
/// p' = p + dt v', w' = w + dt alpha, q' = normalize(q + dt/2 (0,w') q).
/// Scale 2/denominator is applied by the caller through `weight`.
double row_loss(const RodRow& row, double dt, const ThetaLayout& tl,
                const Eigen::VectorXd& theta, double weight, Eigen::VectorXd* grad) {
  const long lo = tl.lin_offset[row.block];
  const long ao = tl.ang_offset[row.block];
  const long n = row.lin.cols();

  const auto th_lin = theta.segment(lo, n);
  const auto th_ang = theta.segment(ao, n);

  const Vec3 r_v = row.lin * th_lin - row.y_lin;
  const Vec3 r_p = row.lin * th_lin - row.y_pos;
  const Vec3 r_w = row.ang * th_ang - row.y_ang;
  const Vec3 e_v = dt * r_v;
  const Vec3 e_p = dt * dt * r_p;
  const Vec3 e_w = dt * r_w;

  const Vec3 w1 = row.omega0 + dt * (r_w + row.y_ang);  // = omega0 + dt ang th_ang
  const Quat spin(0.0, w1.x(), w1.y(), w1.z());
  Eigen::Vector4d g = row.q0.coeffs() + 0.5 * dt * (spin * row.q0).coeffs();
  const double gnorm = g.norm();
  const Eigen::Vector4d ghat = g / gnorm;
  const Eigen::Vector4d e_q = ghat - row.q1_obs.coeffs();

  const double loss =
      e_v.squaredNorm() + e_p.squaredNorm() + e_w.squaredNorm() + e_q.squaredNorm();

  if (grad != nullptr) {
    grad->segment(lo, n) +=
        weight * (dt * row.lin.transpose() * e_v + dt * dt * row.lin.transpose() * e_p);

    // d e_q / d w1 = J_n * dt/2 * G, G.col(j) = (e_j * q0).coeffs().
    Eigen::Matrix<double, 4, 3> basis;
    for (int j = 0; j < 3; ++j) {
      Quat ej(0.0, j == 0 ? 1.0 : 0.0, j == 1 ? 1.0 : 0.0, j == 2 ? 1.0 : 0.0);
      basis.col(j) = (ej * row.q0).coeffs();
    }
    const Eigen::Vector4d jn_eq = (e_q - ghat * ghat.dot(e_q)) / gnorm;
    const Vec3 dq_dw = 0.5 * dt * basis.transpose() * jn_eq;
    grad->segment(ao, n) +=
        weight * (dt * row.ang.transpose() * e_w + dt * row.ang.transpose() * dq_dw);
  }
  return loss;
}

double loss_on(const TransitionBatch& batch, const std::vector<long>& rows,
               const ThetaLayout& tl, const Eigen::VectorXd& theta,
               Eigen::VectorXd* grad) {
  if (grad != nullptr) grad->setZero(tl.size);
  if (rows.empty()) return 0.0;
  const double denom = static_cast<double>(rows.size()) * 13.0;
  const double weight = 2.0 / denom;
  double total = 0.0;
  for (long i : rows)
    total += row_loss(batch.rows[i], batch.dt, tl, theta, weight, grad);
  return total / denom;
}

}  // namespace

double iterative_loss(const TransitionBatch& batch, const Eigen::VectorXd& theta,
                      Eigen::VectorXd* grad) {
  const ThetaLayout tl = theta_layout(batch.layout);
  std::vector<long> all(batch.rows.size());
  std::iota(all.begin(), all.end(), 0L);
  return loss_on(batch, all, tl, theta, grad);
}

IterativeFit fit_iterative(const TransitionBatch& batch, const FitConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const ThetaLayout tl = theta_layout(batch.layout);
  if (batch.rows.empty()) throw InsufficientDataError(0, tl.size);

  Eigen::VectorXd theta = Eigen::VectorXd::Ones(tl.size);
  Eigen::VectorXd grad(tl.size);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(tl.size);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(tl.size);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::vector<long> order(batch.rows.size());
  std::iota(order.begin(), order.end(), 0L);
  std::mt19937_64 rng(config.shuffle_seed);

  IterativeFit fit;
  long t = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        config.initial_lr * std::pow(0.5, epoch / config.lr_halving_period);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const size_t end = std::min(order.size(), begin + config.batch_size);
      const std::vector<long> chunk(order.begin() + begin, order.begin() + end);
      const double loss = loss_on(batch, chunk, tl, theta, &grad);
      if (!std::isfinite(loss)) throw NonFiniteLossError(epoch);
      ++t;
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseAbs2();
      const double mc = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double vc = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      theta.array() -=
          lr * (m.array() / mc) / ((v.array() / vc).sqrt() + kEps);
    }
    fit.loss_curve.push_back(iterative_loss(batch, theta, nullptr));
    if (!std::isfinite(fit.loss_curve.back())) throw NonFiniteLossError(epoch);
  }

  fit.ratios.tying = batch.tying;
  for (const BlockLayout& block : batch.layout) {
    BlockEstimate est;
    est.block = block.block;
    est.springs = block.springs;
    est.k_lin.resize(block.n_pairs);
    est.c_lin.resize(block.n_pairs);
    est.k_ang.resize(block.n_pairs);
    est.c_ang.resize(block.n_pairs);
    const long lo = tl.lin_offset[block.block];
    const long ao = tl.ang_offset[block.block];
    for (int i = 0; i < block.n_pairs; ++i) {
      est.k_lin[i] = theta[lo + 2 * i];
      est.c_lin[i] = theta[lo + 2 * i + 1];
      est.k_ang[i] = theta[ao + 2 * i];
      est.c_ang[i] = theta[ao + 2 * i + 1];
    }
    if (block.control) {
      est.control_lin = theta[lo + block.n_cols() - 1];
      est.control_ang = theta[ao + block.n_cols() - 1];
    }
    fit.ratios.blocks.push_back(std::move(est));
  }

  // One-step acceleration residuals under the final ratios, per block.
  std::vector<double> lin2(batch.layout.size(), 0.0), ang2(batch.layout.size(), 0.0);
  std::vector<long> nrows(batch.layout.size(), 0);
  for (const RodRow& row : batch.rows) {
    const long lo = tl.lin_offset[row.block];
    const long ao = tl.ang_offset[row.block];
    const long n = row.lin.cols();
    lin2[row.block] += (row.lin * theta.segment(lo, n) - row.y_lin).squaredNorm();
    ang2[row.block] += (row.ang * theta.segment(ao, n) - row.y_ang).squaredNorm();
    nrows[row.block] += 3;
  }
  for (BlockEstimate& est : fit.ratios.blocks) {
    if (nrows[est.block] == 0) continue;
    est.lin_rows = nrows[est.block];
    est.ang_rows = nrows[est.block];
    est.lin_residual_rms = std::sqrt(lin2[est.block] / nrows[est.block]);
    est.ang_residual_rms = std::sqrt(ang2[est.block] / nrows[est.block]);
  }

  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fit.seconds_per_epoch = fit.wall_seconds / std::max(1, config.epochs);
  return fit;
}

}  // namespace rodspring::ident
