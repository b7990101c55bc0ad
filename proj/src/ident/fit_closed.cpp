#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <sstream>

#include "rodspring/core/errors.hpp"
#include "rodspring/ident/fit.hpp"

namespace rodspring::ident {

namespace {

/// Incremental least squares on the augmented matrix [A | y]: rows are
/// appended into a buffer and periodically compressed to the triangular
/// factor, so memory stays O(cols^2) no matter how many rows stream by.
/// After the final compression the top-left n x n block is R of A's QR and
/// entry (n, n) is +-|residual| of the minimum-norm fit.
class StreamingLS {
 public:
  explicit StreamingLS(int n)
      : n_(n), buf_(Eigen::MatrixXd::Zero(n + 1 + kChunk, n + 1)) {}

  void add_row(const Eigen::RowVectorXd& features, double target) {
    // Rows that say nothing (no excitation, no response) are dropped so they
    // cannot mask an under-determined fit.
    if (features.isZero(0.0) && target == 0.0) return;
    buf_.row(used_).head(n_) = features;
    buf_(used_, n_) = target;
    ++used_;
    ++rows_;
    if (used_ == buf_.rows()) compress();
  }

  long rows() const { return rows_; }

  struct Solution {
    Eigen::VectorXd x;
    double residual_rms = 0.0;
    long rows = 0;
  };

  /// Throws InsufficientDataError / RankDeficientError; `describe_col` names
  /// column c for the rank-deficiency message.
  Solution solve(const std::function<std::string(int)>& describe_col) {
    triangularize();
    if (rows_ < n_) throw InsufficientDataError(rows_, n_);

    const Eigen::MatrixXd r_full = buf_.topRows(used_);
    const Eigen::MatrixXd r_a = r_full.topLeftCorner(std::min<long>(used_, n_), n_);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_check(r_a);
    if (rank_check.rank() < n_) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(r_a);
      lu.setThreshold(rank_check.threshold());
      const Eigen::MatrixXd kernel = lu.kernel();
      std::ostringstream msg;
      msg << "rank-deficient design (rank " << rank_check.rank() << " of " << n_
          << "); unidentifiable combination(s):";
      for (long k = 0; k < kernel.cols(); ++k) {
        Eigen::VectorXd dir = kernel.col(k).normalized();
        msg << (k ? "; " : " ");
        bool first = true;
        for (int c = 0; c < n_; ++c) {
          if (std::abs(dir[c]) < 1e-8) continue;
          msg << (first ? "" : " + ") << dir[c] << "*" << describe_col(c);
          first = false;
        }
      }
      throw RankDeficientError(msg.str(), rank_check.rank(), n_);
    }

    Solution sol;
    sol.rows = rows_;
    sol.x = rank_check.solve(r_full.topRows(std::min<long>(used_, n_)).col(n_));
    if (used_ > n_) {
      double res2 = 0.0;
      // Everything below row n in the compressed factor is residual mass.
      for (long i = n_; i < used_; ++i) res2 += r_full(i, n_) * r_full(i, n_);
      sol.residual_rms = std::sqrt(res2 / static_cast<double>(rows_));
    }
    return sol;
  }

 private:
  static constexpr long kChunk = 256;

  void compress() {
    if (used_ <= n_ + 1) return;
    triangularize();
  }

  void triangularize() {
    if (used_ == 0) return;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(buf_.topRows(used_));
    const long keep = std::min<long>(used_, static_cast<long>(n_) + 1);
    const Eigen::MatrixXd r =
        qr.matrixQR().topRows(keep).triangularView<Eigen::Upper>();
    buf_.setZero();
    buf_.topRows(keep) = r;
    used_ = keep;
  }

  int n_;
  Eigen::MatrixXd buf_;
  long used_ = 0;
  long rows_ = 0;
};

std::string column_name(const BlockLayout& block, bool angular, int col) {
  const char* denom = angular ? "I11" : "M";
  if (block.control && col == block.n_cols() - 1) return std::string("h/") + denom;
  const int pair = col / 2;
  const char* num = (col % 2 == 0) ? "K" : "c";
  std::ostringstream name;
  name << num;
  if (!block.springs.empty()) name << "[s" << block.springs[pair] << "]";
  name << "/" << denom;
  return name.str();
}

struct BlockSolvers {
  std::unique_ptr<StreamingLS> lin;
  std::unique_ptr<StreamingLS> ang;
};

ClosedFormFit solve_blocks(const std::vector<BlockLayout>& layout,
                           std::vector<BlockSolvers>& solvers, Tying tying,
                           const std::chrono::steady_clock::time_point& start) {
  ClosedFormFit fit;
  fit.ratios.tying = tying;
  double lin_res2 = 0.0, ang_res2 = 0.0;
  long lin_rows = 0, ang_rows = 0;

  for (const BlockLayout& block : layout) {
    auto lin_sol = solvers[block.block].lin->solve(
        [&](int c) { return column_name(block, false, c); });
    auto ang_sol = solvers[block.block].ang->solve(
        [&](int c) { return column_name(block, true, c); });

    BlockEstimate est;
    est.block = block.block;
    est.springs = block.springs;
    est.k_lin.resize(block.n_pairs);
    est.c_lin.resize(block.n_pairs);
    est.k_ang.resize(block.n_pairs);
    est.c_ang.resize(block.n_pairs);
    for (int i = 0; i < block.n_pairs; ++i) {
      est.k_lin[i] = lin_sol.x[2 * i];
      est.c_lin[i] = lin_sol.x[2 * i + 1];
      est.k_ang[i] = ang_sol.x[2 * i];
      est.c_ang[i] = ang_sol.x[2 * i + 1];
    }
    if (block.control) {
      est.control_lin = lin_sol.x[block.n_cols() - 1];
      est.control_ang = ang_sol.x[block.n_cols() - 1];
    }
    est.lin_residual_rms = lin_sol.residual_rms;
    est.ang_residual_rms = ang_sol.residual_rms;
    est.lin_rows = lin_sol.rows;
    est.ang_rows = ang_sol.rows;
    fit.ratios.blocks.push_back(std::move(est));

    lin_res2 += lin_sol.residual_rms * lin_sol.residual_rms * lin_sol.rows;
    ang_res2 += ang_sol.residual_rms * ang_sol.residual_rms * ang_sol.rows;
    lin_rows += lin_sol.rows;
    ang_rows += ang_sol.rows;
  }

  fit.lin_residual_rms = lin_rows ? std::sqrt(lin_res2 / lin_rows) : 0.0;
  fit.ang_residual_rms = ang_rows ? std::sqrt(ang_res2 / ang_rows) : 0.0;
  fit.rows = lin_rows + ang_rows;
  fit.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fit;
}

std::vector<BlockSolvers> make_solvers(const std::vector<BlockLayout>& layout) {
  std::vector<BlockSolvers> solvers(layout.size());
  for (const BlockLayout& block : layout) {
    solvers[block.block].lin = std::make_unique<StreamingLS>(block.n_cols());
    solvers[block.block].ang = std::make_unique<StreamingLS>(block.n_cols());
  }
  return solvers;
}

void feed_row(std::vector<BlockSolvers>& solvers, const RodRow& row) {
  StreamingLS& lin = *solvers[row.block].lin;
  StreamingLS& ang = *solvers[row.block].ang;
  for (int i = 0; i < 3; ++i) {
    lin.add_row(row.lin.row(i), row.y_lin[i]);
    ang.add_row(row.ang.row(i), row.y_ang[i]);
  }
}

}  // namespace

ClosedFormFit fit_closed_form(const TransitionStream& stream, const SystemConfig& config,
                              Tying tying, bool include_control) {
  const auto start = std::chrono::steady_clock::now();
  const auto layout = make_layout(config.topology, tying, include_control);
  auto solvers = make_solvers(layout);
  stream([&](const SystemState& s0, const SystemState& s1,
             const std::vector<ControlInput>* u) {
    emit_rows(s0, s1, u, config, layout,
              [&](RodRow&& row) { feed_row(solvers, row); });
  });
  return solve_blocks(layout, solvers, tying, start);
}

ClosedFormFit fit_closed_form(const TransitionBatch& batch) {
  const auto start = std::chrono::steady_clock::now();
  auto solvers = make_solvers(batch.layout);
  for (const RodRow& row : batch.rows) feed_row(solvers, row);
  return solve_blocks(batch.layout, solvers, batch.tying, start);
}

}  // namespace rodspring::ident
