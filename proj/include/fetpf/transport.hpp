#pragma once

/**
 * @file transport.hpp
 * @brief Discrete optimal transport between weighted particle sets.
 *
 * The Monge-Kantorovich problem
 *
 *     min_T  sum_{j,k} T_jk C_jk
 *     s.t.   T 1 = r,  T^T 1 = c,  T >= 0
 *
 * is solved exactly with the transportation simplex: the basis is a spanning
 * tree of the bipartite source/destination graph, dual potentials come from
 * the tree, and each pivot pushes flow around the unique cycle closed by the
 * entering cell. Degeneracy is removed by the classic marginal perturbation
 * r_i + eps, c_last + m eps; the optimal tree is then re-solved with the
 * exact marginals.
 */

#include "fetpf/ensembles.hpp"
#include "fetpf/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fetpf {

struct TransportPlan {
  Matrix matrix;  ///< K_src x K_dst
  Vector row_marginals;
  Vector col_marginals;
  double cost = 0.0;
  std::size_t pivots = 0;
};

struct TransportOptions {
  /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
  std::size_t degenerate_run_limit = 50;
  /// Hard pivot cap as a multiple of the cell count.
  std::size_t pivot_cap_factor = 50;
};

/// C(j, k) = |src_j - dst_k|^2.
inline Matrix cost_matrix(const Matrix& src, const Matrix& dst) {
  detail::require(src.rows() == dst.rows(), "cost matrix: state dimensions differ");
  Matrix c(src.cols(), dst.cols());
  for (Eigen::Index k = 0; k < dst.cols(); ++k)
    for (Eigen::Index j = 0; j < src.cols(); ++j) c(j, k) = (src.col(j) - dst.col(k)).squaredNorm();
  return c;
}

namespace detail {

class TransportationSimplex {
 public:
  TransportationSimplex(const Matrix& cost, const Vector& supply, const Vector& demand,
                        const TransportOptions& opts)
      : cost_(cost),
        m_(static_cast<int>(cost.rows())),
        n_(static_cast<int>(cost.cols())),
        opts_(opts) {
    const double total = supply.sum();
    const double eps = 1e-12 * std::max(total, 1.0) / static_cast<double>(m_ + n_);
    supply_.assign(supply.data(), supply.data() + m_);
    demand_.assign(demand.data(), demand.data() + n_);
    for (double& a : supply_) a += eps;
    demand_.back() += eps * m_;

    double cmax = 0.0;
    for (Eigen::Index k = 0; k < cost.size(); ++k) cmax = std::max(cmax, std::abs(cost.data()[k]));
    tol_ = 1e-11 * std::max(cmax, std::numeric_limits<double>::min());
  }

  TransportPlan solve(const Vector& exact_supply, const Vector& exact_demand) {
    initial_basis();
    rebuild_tree();
    peel_flows(supply_, demand_);

    const std::size_t cap = opts_.pivot_cap_factor * static_cast<std::size_t>(m_) * n_ + 1000;
    std::size_t degenerate_run = 0;
    std::size_t pivots = 0;
    bool bland = false;
    while (true) {
      const int cell = bland ? price_bland() : price_block();
      if (cell < 0) break;
      const double theta = pivot(cell);
      ++pivots;
      if (theta <= 0.0) {
        if (++degenerate_run > opts_.degenerate_run_limit) bland = true;
      } else {
        degenerate_run = 0;
      }
      if (pivots > cap)
        throw std::runtime_error("transport solver exceeded pivot cap (" + std::to_string(cap) + ")");
    }

    std::vector<double> a(exact_supply.data(), exact_supply.data() + m_);
    std::vector<double> b(exact_demand.data(), exact_demand.data() + n_);
    peel_flows(a, b);

    TransportPlan plan;
    plan.matrix = Matrix::Zero(m_, n_);
    const double total = std::max(exact_supply.sum(), 1.0);
    for (const Arc& arc : arcs_) {
      double x = arc.flow;
      if (x < 0.0 || std::abs(x) <= 4.0 * std::numeric_limits<double>::epsilon() * total) x = 0.0;
      plan.matrix(arc.src, arc.dst) = x;
    }
    plan.row_marginals = exact_supply;
    plan.col_marginals = exact_demand;
    plan.cost = (plan.matrix.array() * cost_.array()).sum();
    plan.pivots = pivots;
    return plan;
  }

 private:
  struct Arc {
    int src;
    int dst;
    double flow;
  };

  int node_of_dst(int j) const { return m_ + j; }
  int cell_index(int i, int j) const { return i * n_ + j; }

  void add_arc(int slot, int i, int j, double flow) {
    arcs_[slot] = Arc{i, j, flow};
    adj_[i].push_back(slot);
    adj_[node_of_dst(j)].push_back(slot);
    in_basis_[cell_index(i, j)] = 1;
  }

  void drop_arc(int slot) {
    const Arc& arc = arcs_[slot];
    auto erase = [slot](std::vector<int>& v) { v.erase(std::find(v.begin(), v.end(), slot)); };
    erase(adj_[arc.src]);
    erase(adj_[node_of_dst(arc.dst)]);
    in_basis_[cell_index(arc.src, arc.dst)] = 0;
  }

  // Least-cost greedy start. Every chosen cell retires exactly one row or
  // column (both for the final cell), so the m + n - 1 cells form a tree.
  void initial_basis() {
    const int cells = m_ * n_;
    arcs_.assign(m_ + n_ - 1, Arc{0, 0, 0.0});
    adj_.assign(m_ + n_, {});
    in_basis_.assign(cells, 0);

    std::vector<int> order(cells);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [this](int x, int y) {
      return cost_(x / n_, x % n_) < cost_(y / n_, y % n_);
    });

    std::vector<double> ra = supply_, rb = demand_;
    std::vector<char> row_done(m_, 0), col_done(n_, 0);
    int rows_left = m_, cols_left = n_, placed = 0;
    for (const int cell : order) {
      const int i = cell / n_, j = cell % n_;
      if (row_done[i] || col_done[j]) continue;
      const double x = std::max(0.0, std::min(ra[i], rb[j]));
      add_arc(placed++, i, j, x);
      ra[i] -= x;
      rb[j] -= x;
      if (placed == m_ + n_ - 1) break;
      const bool retire_row = (ra[i] <= rb[j] && rows_left > 1) || cols_left == 1;
      if (retire_row) {
        row_done[i] = 1;
        --rows_left;
      } else {
        col_done[j] = 1;
        --cols_left;
      }
    }
  }

  // Parent pointers, depths, BFS order and dual potentials (u_i + v_j = c_ij)
  // from a traversal rooted at source 0.
  void rebuild_tree() {
    const int nodes = m_ + n_;
    parent_arc_.assign(nodes, -1);
    depth_.assign(nodes, -1);
    potential_.assign(nodes, 0.0);
    bfs_order_.clear();
    bfs_order_.reserve(nodes);
    depth_[0] = 0;
    bfs_order_.push_back(0);
    for (std::size_t head = 0; head < bfs_order_.size(); ++head) {
      const int x = bfs_order_[head];
      for (const int slot : adj_[x]) {
        const Arc& arc = arcs_[slot];
        const int y = (x < m_) ? node_of_dst(arc.dst) : arc.src;
        if (depth_[y] >= 0) continue;
        depth_[y] = depth_[x] + 1;
        parent_arc_[y] = slot;
        potential_[y] = cost_(arc.src, arc.dst) - potential_[x];
        bfs_order_.push_back(y);
      }
    }
    if (static_cast<int>(bfs_order_.size()) != nodes)
      throw std::logic_error("transport basis is not a spanning tree");
  }

  int parent_node(int node) const {
    const Arc& arc = arcs_[parent_arc_[node]];
    return node < m_ ? node_of_dst(arc.dst) : arc.src;
  }

  // Basic flows for the given marginals, solved leaf-first on the tree.
  void peel_flows(std::vector<double> a, std::vector<double> b) {
    for (auto it = bfs_order_.rbegin(); it != bfs_order_.rend(); ++it) {
      const int node = *it;
      if (parent_arc_[node] < 0) continue;
      Arc& arc = arcs_[parent_arc_[node]];
      if (node < m_) {
        arc.flow = a[node];
        b[arc.dst] -= arc.flow;
      } else {
        arc.flow = b[node - m_];
        a[arc.src] -= arc.flow;
      }
    }
  }

  double reduced_cost(int i, int j) const {
    return cost_(i, j) - potential_[i] - potential_[node_of_dst(j)];
  }

  // Block pricing: scan cyclically, return the most negative cell of the
  // first block that has one.
  int price_block() {
    const int cells = m_ * n_;
    const int block = std::max(8, static_cast<int>(std::sqrt(static_cast<double>(cells))));
    int best = -1;
    double best_rc = -tol_;
    int scanned_in_block = 0;
    for (int count = 0; count < cells; ++count) {
      const int cell = next_cell_;
      next_cell_ = (next_cell_ + 1 == cells) ? 0 : next_cell_ + 1;
      if (!in_basis_[cell]) {
        const double rc = reduced_cost(cell / n_, cell % n_);
        if (rc < best_rc) {
          best_rc = rc;
          best = cell;
        }
      }
      if (++scanned_in_block == block) {
        if (best >= 0) return best;
        scanned_in_block = 0;
      }
    }
    return best;
  }

  // Bland: lowest-index improving cell.
  int price_bland() const {
    for (int cell = 0; cell < m_ * n_; ++cell)
      if (!in_basis_[cell] && reduced_cost(cell / n_, cell % n_) < -tol_) return cell;
    return -1;
  }

  // Pushes flow around the cycle closed by `cell`; returns the step length.
  double pivot(int cell) {
    const int i = cell / n_, j = cell % n_;
    int s = i, t = node_of_dst(j);
    std::vector<int>& up_t = path_t_;
    std::vector<int>& up_s = path_s_;
    up_t.clear();
    up_s.clear();
    while (depth_[t] > depth_[s]) {
      up_t.push_back(parent_arc_[t]);
      t = parent_node(t);
    }
    while (depth_[s] > depth_[t]) {
      up_s.push_back(parent_arc_[s]);
      s = parent_node(s);
    }
    while (s != t) {
      up_t.push_back(parent_arc_[t]);
      t = parent_node(t);
      up_s.push_back(parent_arc_[s]);
      s = parent_node(s);
    }
    // Cycle order from the destination end: up_t, then up_s reversed.
    // Arcs at even positions lose flow.
    cycle_.assign(up_t.begin(), up_t.end());
    cycle_.insert(cycle_.end(), up_s.rbegin(), up_s.rend());

    int leaving = -1;
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < cycle_.size(); p += 2) {
      const Arc& arc = arcs_[cycle_[p]];
      const double f = std::max(arc.flow, 0.0);
      if (f < theta || (f == theta && cell_index(arc.src, arc.dst) <
                                          cell_index(arcs_[leaving].src, arcs_[leaving].dst))) {
        theta = f;
        leaving = cycle_[p];
      }
    }
    for (std::size_t p = 0; p < cycle_.size(); ++p) arcs_[cycle_[p]].flow += (p % 2 == 0 ? -theta : theta);

    drop_arc(leaving);
    add_arc(leaving, i, j, theta);
    rebuild_tree();
    return theta;
  }

  const Matrix& cost_;
  int m_;
  int n_;
  TransportOptions opts_;
  double tol_ = 0.0;
  std::vector<double> supply_, demand_;
  std::vector<Arc> arcs_;
  std::vector<std::vector<int>> adj_;
  std::vector<char> in_basis_;
  std::vector<int> parent_arc_, depth_, bfs_order_;
  std::vector<double> potential_;
  std::vector<int> path_t_, path_s_, cycle_;
  int next_cell_ = 0;
};

}  // namespace detail

/**
 * Optimal transport plan for `cost` with the given marginals.
 *
 * Throws std::invalid_argument for negative or unbalanced marginals and for
 * non-finite costs.
 */
inline TransportPlan solve_transport(const Matrix& cost, const Vector& row_marginals,
                                     const Vector& col_marginals, const TransportOptions& opts = {}) {
  detail::require(cost.rows() >= 1 && cost.cols() >= 1, "transport: empty cost matrix");
  detail::require(row_marginals.size() == cost.rows() && col_marginals.size() == cost.cols(),
                  "transport: marginal lengths do not match cost matrix");
  detail::require(cost.allFinite(), "transport: cost matrix has non-finite entries");
  detail::require(row_marginals.allFinite() && col_marginals.allFinite(),
                  "transport: marginals must be finite");
  detail::require(row_marginals.minCoeff() >= 0.0 && col_marginals.minCoeff() >= 0.0,
                  "transport: marginals must be nonnegative");
  const double gap = std::abs(row_marginals.sum() - col_marginals.sum());
  detail::require(gap <= 1e-9, "transport: unbalanced marginals (mass gap " + std::to_string(gap) + ")");

  detail::TransportationSimplex simplex(cost, row_marginals, col_marginals, opts);
  return simplex.solve(row_marginals, col_marginals);
}

/// src * T. Each destination must receive unit mass.
inline Matrix apply_transport(const Matrix& src_states, const TransportPlan& plan) {
  detail::require(src_states.cols() == plan.matrix.rows(), "apply_transport: source count mismatch");
  const Vector received = plan.matrix.colwise().sum().transpose();
  detail::require((received.array() - 1.0).abs().maxCoeff() <= 1e-9,
                  "apply_transport: every destination column must carry unit mass");
  return src_states * plan.matrix;
}

namespace detail {

inline Matrix symmetric_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

inline Matrix symmetric_inv_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector ev = eig.eigenvalues().cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

namespace detail {

// Ensemble-space correction: T + D = W^{1/2} R + w 1^T with W = K(diag(w) - ww^T)
// and R orthogonal, fixing 1 and closest to the centered plan. Then
// (T + D) P (T + D)^T = W exactly, P the centering projector.
inline Matrix ensemble_space_correction(const Matrix& plan, const Vector& weights) {
  const auto k = plan.rows();
  const double kd = static_cast<double>(k);
  const Matrix w_mat = kd * (Matrix(weights.asDiagonal()) - weights * weights.transpose());
  // W 1 = 0; projecting removes the eigensolver noise from that null direction.
  const Matrix center = Matrix::Identity(k, k) - Matrix::Constant(k, k, 1.0 / kd);
  const Matrix w_half = center * symmetric_sqrt(0.5 * (w_mat + w_mat.transpose())) * center;

  // Orthonormal basis of the complement of 1.
  Matrix basis = Matrix::Identity(k, k);
  basis.col(0).setConstant(1.0 / std::sqrt(kd));
  const Matrix q = Eigen::HouseholderQR<Matrix>(basis).householderQ();
  const Matrix comp = q.rightCols(k - 1);

  const Matrix centered_plan = plan.rowwise() - plan.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd((w_half * comp).transpose() * (centered_plan * comp),
                               Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix rot = svd.matrixU() * svd.matrixV().transpose();
  const Matrix corrected = w_half * comp * rot * comp.transpose() + weights * Vector::Ones(k).transpose();
  return corrected - plan;
}

}  // namespace detail

/**
 * Second-order correction D for a square plan: X^f (T* + D) keeps the mean
 * X^f w^a and has sample covariance equal to the importance estimate
 * Sigma_a = K/(K-1) X^f (diag(w^a) - w^a w^aT) X^fT. D satisfies
 * 1^T D = 0 and D 1 = 0.
 *
 * Primary route, in state space: the transported anomalies A_Z are mapped by
 * the symmetric S with S cov(Z) S = Sigma_a, and (S - I) A_Z is pulled back
 * into ensemble space through the pseudo-inverse of the forecast anomalies.
 * When cov(Z) is (nearly) singular, or the forecast anomalies do not span
 * state space, or that route leaves a residual above 1e-12 |Sigma_a|_F, the
 * ensemble-space construction is also evaluated and the smaller residual wins.
 *
 * Throws FilterDivergence if the covariance residual still exceeds
 * `tolerance` (relative to |Sigma_a|_F, floored at 1).
 */
inline Matrix second_order_correction(const Matrix& src_states, const TransportPlan& plan,
                                      const Vector& posterior_weights, double tolerance = 1e-8) {
  const auto k = src_states.cols();
  const auto n = src_states.rows();
  detail::require(plan.matrix.rows() == k && plan.matrix.cols() == k,
                  "second-order correction needs a square plan matching the ensemble");
  detail::require(posterior_weights.size() == k, "posterior weight count mismatch");
  detail::require(k >= 2, "second-order correction needs at least two members");

  const Matrix target = weighted_covariance(src_states, posterior_weights);
  const Matrix z = src_states * plan.matrix;
  const Matrix cov_z = sample_covariance(z);

  const double scale = std::max(1.0, target.norm());
  if ((cov_z - target).norm() <= 1e-14 * scale) return Matrix::Zero(k, k);

  auto residual_of = [&](const Matrix& d) {
    return (sample_covariance(src_states * (plan.matrix + d)) - target).norm();
  };
  auto min_rel_eig = [](const Matrix& m) {
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues();
    return ev.maxCoeff() > 0.0 ? ev.minCoeff() / ev.maxCoeff() : 0.0;
  };

  Matrix best;
  double best_residual = std::numeric_limits<double>::infinity();
  const Matrix af = anomalies(src_states);
  const Matrix gram = af * af.transpose();
  if (min_rel_eig(cov_z) > 1e-8 && min_rel_eig(gram) > 1e-10) {
    const Matrix c_half = detail::symmetric_sqrt(cov_z);
    const Matrix c_inv_half = detail::symmetric_inv_sqrt(cov_z);
    const Matrix inner = c_half * target * c_half;
    const Matrix s = c_inv_half * detail::symmetric_sqrt(0.5 * (inner + inner.transpose())) * c_inv_half;
    const Matrix rhs = (s - Matrix::Identity(n, n)) * anomalies(z);
    // D = A^fT (A^f A^fT)^{-1} (S - I) A_Z
    best = af.transpose() * gram.ldlt().solve(rhs);
    best_residual = residual_of(best);
    if (best_residual <= 1e-12 * scale) return best;
  }

  Matrix d = detail::ensemble_space_correction(plan.matrix, posterior_weights);
  const double residual = residual_of(d);
  if (residual < best_residual) {
    best = std::move(d);
    best_residual = residual;
  }
  if (!(best_residual <= tolerance * scale))
    throw FilterDivergence("second-order correction: covariance residual " + std::to_string(best_residual) +
                           " exceeds tolerance (K=" + std::to_string(k) + ")");
  return best;
}

}  // namespace fetpf
