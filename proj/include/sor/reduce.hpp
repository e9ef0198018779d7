#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <vector>

namespace sor {

// Number of worker threads: SOR_THREADS if set (>=1), else 1.
// This box may be single-core; results never depend on the value because all
// reductions below use fixed-size leaf blocks merged in index order.
int thread_count();

// Runs body(begin, end) over fixed 1024-item blocks, possibly on several
// threads. Block boundaries depend only on n, never on the thread count.
void parallel_for_blocks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body);

// Deterministic pairwise reduction of per-record vectors:
//   mean = (1/W) * sum_i w_i * g(i)     with W = sum_i w_i (or n when w==nullptr).
// Leaf sums are taken over fixed 1024-record blocks and merged as a binary
// tree over leaf indices, so the floating-point result is identical for any
// thread count.
// eval(i, out) writes record i's dim-vector into out.
void blocked_mean(std::size_t n, int dim,
                  const std::function<void(std::size_t, double*)>& eval,
                  Eigen::VectorXd& mean, const Eigen::VectorXd* weights = nullptr);

// Same traversal, also accumulating the weighted mean of outer products
// g(i) g(i)^T (used for the filling of the sandwich variance).
void blocked_mean_and_outer(std::size_t n, int dim,
                            const std::function<void(std::size_t, double*)>& eval,
                            Eigen::VectorXd& mean, Eigen::MatrixXd& outer,
                            const Eigen::VectorXd* weights = nullptr);

}  // namespace sor
