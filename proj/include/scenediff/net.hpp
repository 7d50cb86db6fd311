#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenediff/autodiff.hpp"
#include "scenediff/geometry.hpp"

namespace scenediff {

/// Shared-weight per-point MLP consuming
/// [scaled point coords || condition features || sinusoidal timestep embedding].
struct NetDescriptor {
  int width = 64;
  int depth = 4;             // number of linear layers
  int temb_dim = 16;
  int cond_neighbors = 3;    // offsets to this many nearest scan points
  double coord_scale = 0.2;  // applied to raw coordinates before the first layer

  int cond_dim() const { return 3 * cond_neighbors; }
  int input_dim() const { return 3 + cond_dim() + temb_dim; }
  bool operator==(const NetDescriptor&) const = default;
};

enum class ModelRole { Teacher, Auxiliary, Student };

struct Param {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool has_grad = false;
};

struct DenoiserModel {
  NetDescriptor desc;
  ModelRole role = ModelRole::Teacher;
  std::vector<Param> params;

  /// Uniform fan-in init; final layer zero-initialized.
  static DenoiserModel init(const NetDescriptor& desc, ModelRole role, std::uint64_t seed);

  DenoiserModel clone(ModelRole new_role) const;
  std::uint64_t checksum() const;  // FNV-1a over parameter bit patterns
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static DenoiserModel load(const std::filesystem::path& path);
};

/// Per noisy point: offset vectors to its nearest scan points, concatenated.
struct ConditionEncoding {
  int rows = 0, cols = 0;
  std::vector<double> features;  // row-major
};

ConditionEncoding encode_condition(const Scene& scan, const std::vector<Vec3>& noisy_points,
                                   int neighbors = 3);

std::vector<double> timestep_embedding(int t, int dim);

/// Parameter leaves for one model inside a graph, in params order.
struct ModelBinding {
  std::vector<int> param_nodes;
};

ModelBinding bind_model(ad::Graph& g, const DenoiserModel& model, bool trainable);

/// Builds the (M x input_dim) input node from a points node plus constant
/// condition/timestep features, then runs the MLP. Returns the M x 3
/// prediction node.
int forward_graph(ad::Graph& g, const DenoiserModel& model, const ModelBinding& binding,
                  int points_node, const ConditionEncoding& cond, int t);

/// Plain forward pass without recording; bitwise identical to forward_graph.
std::vector<Vec3> forward_eval(const DenoiserModel& model, const std::vector<Vec3>& points,
                               const ConditionEncoding& cond, int t);

/// Copies (accumulates) gradients from the graph leaves back into the model.
void collect_gradients(const ad::Graph& g, const ModelBinding& binding, DenoiserModel& model);

/// p <- p - lr * grad on every parameter; clears gradients.
/// Throws std::logic_error when gradients are missing.
void sgd_step(DenoiserModel& model, double lr);

void clear_gradients(DenoiserModel& model);

}  // namespace scenediff
