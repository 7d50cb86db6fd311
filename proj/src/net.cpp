#include "scenediff/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "scenediff/rng.hpp"

namespace scenediff {

namespace {

std::vector<std::pair<int, int>> layer_shapes(const NetDescriptor& d) {
  std::vector<std::pair<int, int>> shapes;
  int in = d.input_dim();
  for (int l = 0; l < d.depth; ++l) {
    const int out = (l == d.depth - 1) ? 3 : d.width;
    shapes.emplace_back(in, out);
    in = out;
  }
  return shapes;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

DenoiserModel DenoiserModel::init(const NetDescriptor& desc, ModelRole role, std::uint64_t seed) {
  DenoiserModel m;
  m.desc = desc;
  m.role = role;
  Rng rng(seed);
  const auto shapes = layer_shapes(desc);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    auto [in, out] = shapes[l];
    Param w;
    w.name = "W" + std::to_string(l);
    w.rows = in;
    w.cols = out;
    w.value.resize(static_cast<std::size_t>(in) * out, 0.0);
    const bool last = (l + 1 == shapes.size());
    if (!last) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& v : w.value) v = (2.0 * rng.uniform() - 1.0) * bound;
    }
    m.params.push_back(std::move(w));
    Param b;
    b.name = "b" + std::to_string(l);
    b.rows = 1;
    b.cols = out;
    b.value.assign(out, 0.0);
    m.params.push_back(std::move(b));
  }
  return m;
}

DenoiserModel DenoiserModel::clone(ModelRole new_role) const {
  DenoiserModel m = *this;
  m.role = new_role;
  clear_gradients(m);
  return m;
}

std::uint64_t DenoiserModel::checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  h = fnv1a(h, &desc.width, sizeof(desc.width));
  h = fnv1a(h, &desc.depth, sizeof(desc.depth));
  h = fnv1a(h, &desc.temb_dim, sizeof(desc.temb_dim));
  h = fnv1a(h, &desc.cond_neighbors, sizeof(desc.cond_neighbors));
  h = fnv1a(h, &desc.coord_scale, sizeof(desc.coord_scale));
  for (const Param& p : params)
    h = fnv1a(h, p.value.data(), p.value.size() * sizeof(double));
  return h;
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const Param& p : params) n += p.value.size();
  return n;
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  std::string out;
  out += "scenediff-model v1\n";
  out += "role " + std::to_string(static_cast<int>(role)) + "\n";
  out += "desc " + std::to_string(desc.width) + " " + std::to_string(desc.depth) + " " +
         std::to_string(desc.temb_dim) + " " + std::to_string(desc.cond_neighbors) + " ";
  format_double(out, desc.coord_scale);
  out += "\nparams " + std::to_string(params.size()) + "\n";
  for (const Param& p : params) {
    out += p.name + " " + std::to_string(p.rows) + " " + std::to_string(p.cols) + "\n";
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      format_double(out, p.value[i]);
      out += (i + 1 == p.value.size()) ? '\n' : ' ';
    }
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("save: cannot open " + tmp);
    f << out;
  }
  std::filesystem::rename(tmp, path);
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load: cannot open " + path.string());
  std::string magic, version, key;
  f >> magic >> version;
  if (magic != "scenediff-model" || version != "v1")
    throw std::runtime_error("load: unrecognized checkpoint format in " + path.string());
  DenoiserModel m;
  int role_int = 0;
  std::size_t count = 0;
  f >> key >> role_int;
  f >> key >> m.desc.width >> m.desc.depth >> m.desc.temb_dim >> m.desc.cond_neighbors >>
      m.desc.coord_scale;
  f >> key >> count;
  m.role = static_cast<ModelRole>(role_int);
  m.params.resize(count);
  for (Param& p : m.params) {
    f >> p.name >> p.rows >> p.cols;
    p.value.resize(static_cast<std::size_t>(p.rows) * p.cols);
    for (double& v : p.value) f >> v;
  }
  if (!f) throw std::runtime_error("load: truncated checkpoint " + path.string());
  return m;
}

ConditionEncoding encode_condition(const Scene& scan, const std::vector<Vec3>& noisy_points,
                                   int neighbors) {
  if (scan.size() < 1) throw std::invalid_argument("encode_condition: empty scan");
  ConditionEncoding enc;
  enc.rows = static_cast<int>(noisy_points.size());
  enc.cols = 3 * neighbors;
  enc.features.resize(static_cast<std::size_t>(enc.rows) * enc.cols);
  std::vector<std::pair<double, int>> by_dist(scan.size());
  for (int i = 0; i < enc.rows; ++i) {
    const Vec3& q = noisy_points[i];
    for (int j = 0; j < scan.size(); ++j) by_dist[j] = {norm2(scan.points[j] - q), j};
    const int take = std::min(neighbors, scan.size());
    std::partial_sort(by_dist.begin(), by_dist.begin() + take, by_dist.end());
    for (int k = 0; k < neighbors; ++k) {
      const int src = by_dist[std::min(k, take - 1)].second;  // pad when scan is tiny
      const Vec3 off = scan.points[src] - q;
      for (int c = 0; c < 3; ++c)
        enc.features[(static_cast<std::size_t>(i) * neighbors + k) * 3 + c] = off[c];
    }
  }
  return enc;
}

std::vector<double> timestep_embedding(int t, int dim) {
  std::vector<double> emb(dim, 0.0);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * k / half);
    emb[2 * k] = std::sin(t * w);
    emb[2 * k + 1] = std::cos(t * w);
  }
  return emb;
}

ModelBinding bind_model(ad::Graph& g, const DenoiserModel& model, bool trainable) {
  ModelBinding b;
  b.param_nodes.reserve(model.params.size());
  for (const Param& p : model.params)
    b.param_nodes.push_back(g.leaf(p.rows, p.cols, p.value.data(), trainable));
  return b;
}

namespace {

int make_input_node(ad::Graph& g, const NetDescriptor& desc, int points_node,
                    const ConditionEncoding& cond, int t) {
  const int rows = g.node(points_node).rows;
  if (cond.rows != rows || cond.cols != desc.cond_dim())
    throw std::invalid_argument("forward: condition shape mismatch");
  const int scaled = g.scale(points_node, desc.coord_scale);
  const int cond_node = g.constant(rows, cond.cols, cond.features.data());
  const std::vector<double> emb = timestep_embedding(t, desc.temb_dim);
  std::vector<double> emb_rows(static_cast<std::size_t>(rows) * desc.temb_dim);
  for (int i = 0; i < rows; ++i)
    std::copy(emb.begin(), emb.end(), emb_rows.begin() + static_cast<std::size_t>(i) * desc.temb_dim);
  const int emb_node = g.constant(rows, desc.temb_dim, std::move(emb_rows));
  return g.concat_cols({scaled, cond_node, emb_node});
}

}  // namespace

int forward_graph(ad::Graph& g, const DenoiserModel& model, const ModelBinding& binding,
                  int points_node, const ConditionEncoding& cond, int t) {
  if (g.node(points_node).cols != 3)
    throw std::invalid_argument("forward_graph: points node must be M x 3");
  int h = make_input_node(g, model.desc, points_node, cond, t);
  for (int l = 0; l < model.desc.depth; ++l) {
    h = g.matmul(h, binding.param_nodes[2 * l]);
    h = g.add_row(h, binding.param_nodes[2 * l + 1]);
    if (l + 1 < model.desc.depth) h = g.silu(h);
  }
  return h;
}

std::vector<Vec3> forward_eval(const DenoiserModel& model, const std::vector<Vec3>& points,
                               const ConditionEncoding& cond, int t) {
  const NetDescriptor& d = model.desc;
  const int m = static_cast<int>(points.size());
  if (cond.rows != m || cond.cols != d.cond_dim())
    throw std::invalid_argument("forward_eval: condition shape mismatch");

  std::vector<double> h(static_cast<std::size_t>(m) * d.input_dim());
  const std::vector<double> emb = timestep_embedding(t, d.temb_dim);
  for (int i = 0; i < m; ++i) {
    double* row = h.data() + static_cast<std::size_t>(i) * d.input_dim();
    for (int c = 0; c < 3; ++c) row[c] = points[i][c] * d.coord_scale;
    const double* cf = cond.features.data() + static_cast<std::size_t>(i) * cond.cols;
    for (int c = 0; c < cond.cols; ++c) row[3 + c] = cf[c];
    for (int c = 0; c < d.temb_dim; ++c) row[3 + cond.cols + c] = emb[c];
  }

  int in = d.input_dim();
  for (int l = 0; l < d.depth; ++l) {
    const Param& w = model.params[2 * l];
    const Param& b = model.params[2 * l + 1];
    const int out = w.cols;
    std::vector<double> next(static_cast<std::size_t>(m) * out, 0.0);
    ad::kernels::matmul_acc(h.data(), w.value.data(), next.data(), m, in, out);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < out; ++j)
        next[static_cast<std::size_t>(i) * out + j] += b.value[j];
    if (l + 1 < d.depth)
      for (double& v : next) v = ad::kernels::silu(v);
    h = std::move(next);
    in = out;
  }

  std::vector<Vec3> pred(m);
  for (int i = 0; i < m; ++i)
    pred[i] = {h[static_cast<std::size_t>(i) * 3], h[static_cast<std::size_t>(i) * 3 + 1],
               h[static_cast<std::size_t>(i) * 3 + 2]};
  return pred;
}

void collect_gradients(const ad::Graph& g, const ModelBinding& binding, DenoiserModel& model) {
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Param& p = model.params[i];
    const auto& grad = g.gradient(binding.param_nodes[i]);
    if (grad.empty()) throw std::logic_error("collect_gradients: backward has not run");
    if (!p.has_grad) {
      p.grad.assign(p.value.size(), 0.0);
      p.has_grad = true;
    }
    for (std::size_t k = 0; k < grad.size(); ++k) p.grad[k] += grad[k];
  }
}

void sgd_step(DenoiserModel& model, double lr) {
  for (const Param& p : model.params)
    if (!p.has_grad) throw std::logic_error("sgd_step: gradients not populated");
  for (Param& p : model.params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.value[i] -= lr * p.grad[i];
      if (!std::isfinite(p.value[i]))
        throw std::runtime_error("sgd_step: non-finite parameter after update");
    }
  }
  clear_gradients(model);
}

void clear_gradients(DenoiserModel& model) {
  for (Param& p : model.params) {
    p.grad.clear();
    p.has_grad = false;
  }
}

}  // namespace scenediff
