#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "scenediff/geometry.hpp"

namespace scenediff::ad {

/// Shared compute kernels. The recorded graph and the plain evaluation path in
/// net.cpp both go through these, so the two paths agree bitwise.
namespace kernels {

/// C (m x n) += A (m x k) * B (k x n). C must be zeroed by the caller.
inline void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }

}  // namespace kernels

/// A small tape for reverse-mode differentiation over dense row-major
/// matrices. Nodes are identified by index; a graph is built per training
/// step and discarded.
class Graph {
 public:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward_fn;
  };

  int leaf(int rows, int cols, const double* data, bool requires_grad);
  int constant(int rows, int cols, const double* data);
  int constant(int rows, int cols, std::vector<double> data);

  int matmul(int a, int b);
  int add(int a, int b);                 // same shape
  int add_row(int a, int bias);          // bias is 1 x cols, broadcast over rows
  int silu(int a);
  int scale(int a, double s);
  int concat_cols(const std::vector<int>& parts);
  int gather_rows(int a, std::vector<int> idx);

  /// n x 3 points -> n x n Euclidean (non-squared) distance matrix.
  int pairwise_distance(int a);

  // scalar reductions (1 x 1 nodes)
  int sum(int a);
  int dot_sum(int a, int b);             // sum(a .* b)
  int sum_sq_diff(int a, int b);         // sum((a - b)^2)
  int mean_sq_diff(int a, int b);        // mean((a - b)^2)
  /// mean over rows of the squared distance to the nearest reference point;
  /// the argmin index is treated as locally constant.
  int nearest_sq_mean(int a, const std::vector<Vec3>& refs);
  /// weighted sum of scalar nodes
  int combine(const std::vector<std::pair<int, double>>& terms);

  void backward(int loss_node);

  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }
  const std::vector<double>& value(int id) const { return nodes_[id].val; }
  const std::vector<double>& gradient(int id) const { return nodes_[id].grad; }
  double scalar(int id) const { return nodes_[id].val[0]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  int push(Node n);
  int sq_diff_reduce(int a, int b, bool mean_reduce);
  std::vector<Node> nodes_;
};

}  // namespace scenediff::ad
