#include "scenediff/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace scenediff::ad {

namespace {
void check_same_shape(const Graph::Node& a, const Graph::Node& b, const char* who) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}
}  // namespace

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(int rows, int cols, const double* data, bool requires_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val.assign(data, data + static_cast<std::size_t>(rows) * cols);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

int Graph::constant(int rows, int cols, const double* data) {
  return leaf(rows, cols, data, false);
}

int Graph::constant(int rows, int cols, std::vector<double> data) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(data);
  return push(std::move(n));
}

int Graph::matmul(int a, int b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.cols != nb.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
  Node out;
  out.rows = na.rows;
  out.cols = nb.cols;
  out.val.assign(static_cast<std::size_t>(out.rows) * out.cols, 0.0);
  kernels::matmul_acc(na.val.data(), nb.val.data(), out.val.data(), na.rows, na.cols, nb.cols);
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.backward_fn = [a, b](Graph& g, int self) {
    Node& A = g.nodes_[a];
    Node& B = g.nodes_[b];
    const Node& C = g.nodes_[self];
    const int m = A.rows, k = A.cols, n = B.cols;
    if (A.requires_grad) {  // dA += dC * B^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* dc = C.grad.data() + static_cast<std::size_t>(i) * n;
          const double* brow = B.val.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) acc += dc[j] * brow[j];
          A.grad[static_cast<std::size_t>(i) * k + p] += acc;
        }
    }
    if (B.requires_grad) {  // dB += A^T * dC
      for (int i = 0; i < m; ++i) {
        const double* arow = A.val.data() + static_cast<std::size_t>(i) * k;
        const double* dc = C.grad.data() + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double av = arow[p];
          double* db = B.grad.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) db[j] += av * dc[j];
        }
      }
    }
  };
  return push(std::move(out));
}

int Graph::add(int a, int b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check_same_shape(na, nb, "add");
  Node out;
  out.rows = na.rows;
  out.cols = na.cols;
  out.val.resize(na.val.size());
  for (std::size_t i = 0; i < na.val.size(); ++i) out.val[i] = na.val[i] + nb.val[i];
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.backward_fn = [a, b](Graph& g, int self) {
    const Node& C = g.nodes_[self];
    for (int p : {a, b}) {
      Node& P = g.nodes_[p];
      if (!P.requires_grad) continue;
      for (std::size_t i = 0; i < C.grad.size(); ++i) P.grad[i] += C.grad[i];
    }
  };
  return push(std::move(out));
}

int Graph::add_row(int a, int bias) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[bias];
  if (nb.rows != 1 || nb.cols != na.cols) throw std::invalid_argument("add_row: bias shape");
  Node out;
  out.rows = na.rows;
  out.cols = na.cols;
  out.val.resize(na.val.size());
  for (int i = 0; i < na.rows; ++i)
    for (int j = 0; j < na.cols; ++j)
      out.val[static_cast<std::size_t>(i) * na.cols + j] =
          na.val[static_cast<std::size_t>(i) * na.cols + j] + nb.val[j];
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.backward_fn = [a, bias](Graph& g, int self) {
    const Node& C = g.nodes_[self];
    Node& A = g.nodes_[a];
    Node& B = g.nodes_[bias];
    if (A.requires_grad)
      for (std::size_t i = 0; i < C.grad.size(); ++i) A.grad[i] += C.grad[i];
    if (B.requires_grad)
      for (int i = 0; i < C.rows; ++i)
        for (int j = 0; j < C.cols; ++j)
          B.grad[j] += C.grad[static_cast<std::size_t>(i) * C.cols + j];
  };
  return push(std::move(out));
}

int Graph::silu(int a) {
  const Node& na = nodes_[a];
  Node out;
  out.rows = na.rows;
  out.cols = na.cols;
  out.val.resize(na.val.size());
  for (std::size_t i = 0; i < na.val.size(); ++i) out.val[i] = kernels::silu(na.val[i]);
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const Node& C = g.nodes_[self];
    for (std::size_t i = 0; i < C.grad.size(); ++i) {
      const double x = A.val[i];
      const double s = kernels::sigmoid(x);
      A.grad[i] += C.grad[i] * s * (1.0 + x * (1.0 - s));
    }
  };
  return push(std::move(out));
}

int Graph::scale(int a, double s) {
  const Node& na = nodes_[a];
  Node out;
  out.rows = na.rows;
  out.cols = na.cols;
  out.val.resize(na.val.size());
  for (std::size_t i = 0; i < na.val.size(); ++i) out.val[i] = s * na.val[i];
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a, s](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const Node& C = g.nodes_[self];
    for (std::size_t i = 0; i < C.grad.size(); ++i) A.grad[i] += s * C.grad[i];
  };
  return push(std::move(out));
}

int Graph::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = nodes_[parts[0]].rows;
  int cols = 0;
  bool rg = false;
  for (int p : parts) {
    if (nodes_[p].rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += nodes_[p].cols;
    rg = rg || nodes_[p].requires_grad;
  }
  Node out;
  out.rows = rows;
  out.cols = cols;
  out.val.resize(static_cast<std::size_t>(rows) * cols);
  int off = 0;
  for (int p : parts) {
    const Node& np = nodes_[p];
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < np.cols; ++j)
        out.val[static_cast<std::size_t>(i) * cols + off + j] =
            np.val[static_cast<std::size_t>(i) * np.cols + j];
    off += np.cols;
  }
  out.requires_grad = rg;
  out.backward_fn = [parts, cols](Graph& g, int self) {
    const Node& C = g.nodes_[self];
    int off2 = 0;
    for (int p : parts) {
      Node& P = g.nodes_[p];
      if (P.requires_grad)
        for (int i = 0; i < C.rows; ++i)
          for (int j = 0; j < P.cols; ++j)
            P.grad[static_cast<std::size_t>(i) * P.cols + j] +=
                C.grad[static_cast<std::size_t>(i) * cols + off2 + j];
      off2 += P.cols;
    }
  };
  return push(std::move(out));
}

int Graph::gather_rows(int a, std::vector<int> idx) {
  const Node& na = nodes_[a];
  Node out;
  out.rows = static_cast<int>(idx.size());
  out.cols = na.cols;
  out.val.resize(idx.size() * na.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < na.cols; ++j)
      out.val[i * na.cols + j] = na.val[static_cast<std::size_t>(idx[i]) * na.cols + j];
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a, idx = std::move(idx)](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const Node& C = g.nodes_[self];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < C.cols; ++j)
        A.grad[static_cast<std::size_t>(idx[i]) * C.cols + j] += C.grad[i * C.cols + j];
  };
  return push(std::move(out));
}

int Graph::pairwise_distance(int a) {
  const Node& na = nodes_[a];
  if (na.cols != 3) throw std::invalid_argument("pairwise_distance: expected n x 3");
  const int n = na.rows;
  Node out;
  out.rows = n;
  out.cols = n;
  out.val.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = na.val[static_cast<std::size_t>(i) * 3 + k] -
                         na.val[static_cast<std::size_t>(j) * 3 + k];
        s += d * d;
      }
      const double d = std::sqrt(s);
      out.val[static_cast<std::size_t>(i) * n + j] = d;
      out.val[static_cast<std::size_t>(j) * n + i] = d;
    }
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a, n](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const Node& C = g.nodes_[self];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double d = C.val[static_cast<std::size_t>(i) * n + j];
        if (d == 0.0) continue;  // coincident points: subgradient 0
        const double gd = C.grad[static_cast<std::size_t>(i) * n + j];
        if (gd == 0.0) continue;
        for (int k = 0; k < 3; ++k) {
          const double diff = A.val[static_cast<std::size_t>(i) * 3 + k] -
                              A.val[static_cast<std::size_t>(j) * 3 + k];
          A.grad[static_cast<std::size_t>(i) * 3 + k] += gd * diff / d;
          A.grad[static_cast<std::size_t>(j) * 3 + k] -= gd * diff / d;
        }
      }
  };
  return push(std::move(out));
}

int Graph::sum(int a) {
  const Node& na = nodes_[a];
  Node out;
  out.rows = 1;
  out.cols = 1;
  double s = 0.0;
  for (double v : na.val) s += v;
  out.val = {s};
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const double gd = g.nodes_[self].grad[0];
    for (double& v : A.grad) v += gd;
  };
  return push(std::move(out));
}

int Graph::dot_sum(int a, int b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check_same_shape(na, nb, "dot_sum");
  Node out;
  out.rows = 1;
  out.cols = 1;
  double s = 0.0;
  for (std::size_t i = 0; i < na.val.size(); ++i) s += na.val[i] * nb.val[i];
  out.val = {s};
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.backward_fn = [a, b](Graph& g, int self) {
    const double gd = g.nodes_[self].grad[0];
    Node& A = g.nodes_[a];
    Node& B = g.nodes_[b];
    if (A.requires_grad)
      for (std::size_t i = 0; i < A.val.size(); ++i) A.grad[i] += gd * B.val[i];
    if (B.requires_grad)
      for (std::size_t i = 0; i < B.val.size(); ++i) B.grad[i] += gd * A.val[i];
  };
  return push(std::move(out));
}

int Graph::sq_diff_reduce(int a, int b, bool mean_reduce) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check_same_shape(na, nb, "sq_diff");
  const double denom = mean_reduce ? static_cast<double>(na.val.size()) : 1.0;
  double s = 0.0;
  for (std::size_t i = 0; i < na.val.size(); ++i) {
    const double d = na.val[i] - nb.val[i];
    s += d * d;
  }
  Node out;
  out.rows = 1;
  out.cols = 1;
  out.val = {s / denom};
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.backward_fn = [a, b, denom](Graph& g, int self) {
    const double gd = g.nodes_[self].grad[0];
    Node& A = g.nodes_[a];
    Node& B = g.nodes_[b];
    for (std::size_t i = 0; i < A.val.size(); ++i) {
      const double d = 2.0 * (A.val[i] - B.val[i]) / denom * gd;
      if (A.requires_grad) A.grad[i] += d;
      if (B.requires_grad) B.grad[i] -= d;
    }
  };
  return push(std::move(out));
}

int Graph::sum_sq_diff(int a, int b) { return sq_diff_reduce(a, b, false); }
int Graph::mean_sq_diff(int a, int b) { return sq_diff_reduce(a, b, true); }

int Graph::nearest_sq_mean(int a, const std::vector<Vec3>& refs) {
  const Node& na = nodes_[a];
  if (na.cols != 3) throw std::invalid_argument("nearest_sq_mean: expected n x 3");
  if (refs.empty()) throw std::invalid_argument("nearest_sq_mean: empty reference set");
  const int n = na.rows;
  std::vector<int> nearest(n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 p{na.val[static_cast<std::size_t>(i) * 3],
                 na.val[static_cast<std::size_t>(i) * 3 + 1],
                 na.val[static_cast<std::size_t>(i) * 3 + 2]};
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const double d = norm2(refs[r] - p);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(r);
      }
    }
    nearest[i] = best;
    s += best_d;
  }
  Node out;
  out.rows = 1;
  out.cols = 1;
  out.val = {s / n};
  out.requires_grad = na.requires_grad;
  out.backward_fn = [a, nearest = std::move(nearest), refs, n](Graph& g, int self) {
    Node& A = g.nodes_[a];
    if (!A.requires_grad) return;
    const double gd = g.nodes_[self].grad[0];
    for (int i = 0; i < n; ++i) {
      const Vec3& r = refs[nearest[i]];
      for (int k = 0; k < 3; ++k)
        A.grad[static_cast<std::size_t>(i) * 3 + k] +=
            gd * 2.0 * (A.val[static_cast<std::size_t>(i) * 3 + k] - r[k]) / n;
    }
  };
  return push(std::move(out));
}

int Graph::combine(const std::vector<std::pair<int, double>>& terms) {
  double s = 0.0;
  bool rg = false;
  for (auto& [id, w] : terms) {
    if (nodes_[id].rows != 1 || nodes_[id].cols != 1)
      throw std::invalid_argument("combine: terms must be scalars");
    s += w * nodes_[id].val[0];
    rg = rg || nodes_[id].requires_grad;
  }
  Node out;
  out.rows = 1;
  out.cols = 1;
  out.val = {s};
  out.requires_grad = rg;
  out.backward_fn = [terms](Graph& g, int self) {
    const double gd = g.nodes_[self].grad[0];
    for (auto& [id, w] : terms)
      if (g.nodes_[id].requires_grad) g.nodes_[id].grad[0] += w * gd;
  };
  return push(std::move(out));
}

void Graph::backward(int loss_node) {
  Node& loss = nodes_[loss_node];
  if (loss.rows != 1 || loss.cols != 1)
    throw std::logic_error("backward: loss must be scalar");
  if (!loss.requires_grad)
    throw std::logic_error("backward: no recorded computation requires gradients");
  for (Node& n : nodes_)
    if (n.requires_grad) n.grad.assign(n.val.size(), 0.0);
  loss.grad[0] = 1.0;
  for (int i = loss_node; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward_fn) n.backward_fn(*this, i);
  }
}

}  // namespace scenediff::ad
