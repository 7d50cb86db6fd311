#include "scenediff/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "scenediff/rng.hpp"

namespace scenediff {

namespace {

using Json = nlohmann::ordered_json;

std::string method_name(KeypointMethod m) {
  switch (m) {
    case KeypointMethod::Curvature: return "curvature";
    case KeypointMethod::Random: return "random";
    default: return "farthest";
  }
}

KeypointMethod method_from_name(const std::string& s) {
  if (s == "curvature") return KeypointMethod::Curvature;
  if (s == "random") return KeypointMethod::Random;
  if (s == "farthest") return KeypointMethod::Farthest;
  throw std::invalid_argument("unknown keypoint method: " + s);
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["threads"] = c.threads;
  j["schedule"] = {{"T", c.schedule_T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
  j["net"] = {{"width", c.net.width},
              {"depth", c.net.depth},
              {"temb_dim", c.net.temb_dim},
              {"cond_neighbors", c.net.cond_neighbors},
              {"coord_scale", c.net.coord_scale}};
  j["data"] = {{"manifest", c.data.manifest},
               {"train_scenes", c.data.train_scenes},
               {"heldout_scenes", c.data.heldout_scenes},
               {"ground_extent", c.data.ground_extent},
               {"density", c.data.density},
               {"keep_fraction", c.data.keep_fraction},
               {"min_objects", c.data.min_objects},
               {"max_objects", c.data.max_objects}};
  j["teacher"] = {{"epochs", c.teacher.epochs}, {"lr", c.teacher.lr}};
  j["distill"] = {{"lambda_scene", c.distill.lambda_scene},
                  {"lambda_point", c.distill.lambda_point},
                  {"keypoint_fraction", c.distill.keypoint_fraction},
                  {"prefilter_fraction", c.distill.prefilter_fraction},
                  {"keypoint_method", method_name(c.distill.keypoint_method)},
                  {"k_nn", c.distill.k_nn},
                  {"k_dup", c.distill.k_dup},
                  {"t_min", c.distill.t_min},
                  {"t_max", c.distill.t_max},
                  {"student_steps_per_iter", c.distill.student_steps_per_iter},
                  {"aux_steps_per_iter", c.distill.aux_steps_per_iter},
                  {"lr_student", c.distill.lr_student},
                  {"lr_aux", c.distill.lr_aux},
                  {"iterations", c.distill.iterations},
                  {"offset_consistent_inversion", c.distill.offset_consistent_inversion}};
  j["sampler_steps"] = c.sampler_steps;
  j["metrics"] = {{"n_emd", c.metrics.n_emd},
                  {"grid",
                   {{"nx", c.metrics.grid.nx},
                    {"ny", c.metrics.grid.ny},
                    {"min_x", c.metrics.grid.min_x},
                    {"min_y", c.metrics.grid.min_y},
                    {"max_x", c.metrics.grid.max_x},
                    {"max_y", c.metrics.grid.max_y}},
                   },
                  {"iou_resolutions", c.metrics.iou_resolutions}};
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.threads = j.at("threads").get<int>();
  const Json& s = j.at("schedule");
  c.schedule_T = s.at("T").get<int>();
  c.beta_start = s.at("beta_start").get<double>();
  c.beta_end = s.at("beta_end").get<double>();
  const Json& n = j.at("net");
  c.net.width = n.at("width").get<int>();
  c.net.depth = n.at("depth").get<int>();
  c.net.temb_dim = n.at("temb_dim").get<int>();
  c.net.cond_neighbors = n.at("cond_neighbors").get<int>();
  c.net.coord_scale = n.at("coord_scale").get<double>();
  const Json& d = j.at("data");
  c.data.manifest = d.at("manifest").get<std::string>();
  c.data.train_scenes = d.at("train_scenes").get<int>();
  c.data.heldout_scenes = d.at("heldout_scenes").get<int>();
  c.data.ground_extent = d.at("ground_extent").get<double>();
  c.data.density = d.at("density").get<double>();
  c.data.keep_fraction = d.at("keep_fraction").get<double>();
  c.data.min_objects = d.at("min_objects").get<int>();
  c.data.max_objects = d.at("max_objects").get<int>();
  const Json& t = j.at("teacher");
  c.teacher.epochs = t.at("epochs").get<int>();
  c.teacher.lr = t.at("lr").get<double>();
  const Json& di = j.at("distill");
  c.distill.lambda_scene = di.at("lambda_scene").get<double>();
  c.distill.lambda_point = di.at("lambda_point").get<double>();
  c.distill.keypoint_fraction = di.at("keypoint_fraction").get<double>();
  c.distill.prefilter_fraction = di.at("prefilter_fraction").get<double>();
  c.distill.keypoint_method = method_from_name(di.at("keypoint_method").get<std::string>());
  c.distill.k_nn = di.at("k_nn").get<int>();
  c.distill.k_dup = di.at("k_dup").get<int>();
  c.distill.t_min = di.at("t_min").get<int>();
  c.distill.t_max = di.at("t_max").get<int>();
  c.distill.student_steps_per_iter = di.at("student_steps_per_iter").get<int>();
  c.distill.aux_steps_per_iter = di.at("aux_steps_per_iter").get<int>();
  c.distill.lr_student = di.at("lr_student").get<double>();
  c.distill.lr_aux = di.at("lr_aux").get<double>();
  c.distill.iterations = di.at("iterations").get<int>();
  c.distill.offset_consistent_inversion = di.at("offset_consistent_inversion").get<bool>();
  c.sampler_steps = j.at("sampler_steps").get<std::vector<int>>();
  if (c.sampler_steps.empty()) throw std::invalid_argument("config: empty sampler_steps");
  const Json& m = j.at("metrics");
  c.metrics.n_emd = m.at("n_emd").get<int>();
  const Json& g = m.at("grid");
  c.metrics.grid.nx = g.at("nx").get<int>();
  c.metrics.grid.ny = g.at("ny").get<int>();
  c.metrics.grid.min_x = g.at("min_x").get<double>();
  c.metrics.grid.min_y = g.at("min_y").get<double>();
  c.metrics.grid.max_x = g.at("max_x").get<double>();
  c.metrics.grid.max_y = g.at("max_y").get<double>();
  c.metrics.iou_resolutions = m.at("iou_resolutions").get<std::vector<double>>();
  return c;
}

/// Merge `patch` into `base`, rejecting keys that do not exist in the
/// defaults so typos fail loudly.
void merge_strict(Json& base, const Json& patch, const std::string& prefix) {
  for (const auto& [key, val] : patch.items()) {
    if (!base.contains(key))
      throw std::invalid_argument("config: unknown key " + prefix + key);
    if (val.is_object() && base[key].is_object())
      merge_strict(base[key], val, prefix + key + ".");
    else
      base[key] = val;
  }
}

void set_by_path(Json& j, const std::string& dotted, const std::string& raw) {
  Json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (!cur->contains(key))
      throw std::invalid_argument("config override: unknown key " + dotted);
    if (dot == std::string::npos) {
      Json parsed = Json::parse(raw, nullptr, false);
      if (parsed.is_discarded() || ((*cur)[key].is_string() && !parsed.is_string()))
        (*cur)[key] = raw;
      else
        (*cur)[key] = parsed;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

std::uint64_t fnv1a_str(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

std::string ExperimentConfig::dump() const { return config_to_json(*this).dump(2); }

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a_str(dump()); }

void ExperimentConfig::apply_override(const std::string& key_value) {
  const std::size_t eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("config override must be key=value: " + key_value);
  Json j = config_to_json(*this);
  set_by_path(j, key_value.substr(0, eq), key_value.substr(eq + 1));
  *this = config_from_json(j);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  Json file_json;
  try {
    f >> file_json;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config: parse error in " + path.string() + ": " + e.what());
  }
  Json j = config_to_json(ExperimentConfig{});
  merge_strict(j, file_json, "");
  ExperimentConfig cfg = config_from_json(j);

  const auto base = path.parent_path();
  if (cfg.out_dir.is_relative()) cfg.out_dir = base / cfg.out_dir;
  if (!cfg.data.manifest.empty() &&
      std::filesystem::path(cfg.data.manifest).is_relative())
    cfg.data.manifest = (base / cfg.data.manifest).string();

  if (const char* env = std::getenv("SCENEDIFF_OUT_DIR")) cfg.out_dir = env;
  if (const char* env = std::getenv("SCENEDIFF_THREADS")) cfg.threads = std::atoi(env);

  for (const std::string& ov : overrides) cfg.apply_override(ov);
  return cfg;
}

SceneSpec make_scene_spec(const DataConfig& data, std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.ground_extent = data.ground_extent;
  spec.density = data.density;
  spec.keep_fraction = data.keep_fraction;
  Rng rng(seed ^ 0x853c49e6748fea9bull);
  const int n_obj = rng.uniform_int(data.min_objects, data.max_objects);
  const double place = 0.35 * data.ground_extent;
  for (int i = 0; i < n_obj; ++i) {
    const Vec3 pos{(rng.uniform() - 0.5) * 2.0 * place, (rng.uniform() - 0.5) * 2.0 * place, 0.0};
    if (rng.uniform() < 0.5) {
      BoxSpec b;
      b.center = pos;
      b.size = {0.6 + 1.4 * rng.uniform(), 0.6 + 1.4 * rng.uniform(), 0.5 + rng.uniform()};
      spec.boxes.push_back(b);
    } else {
      CylinderSpec c;
      c.base = pos;
      c.radius = 0.15 + 0.35 * rng.uniform();
      c.height = 0.8 + 1.2 * rng.uniform();
      spec.cylinders.push_back(c);
    }
  }
  const double az = rng.uniform() * 6.283185307179586;
  spec.occlusion_directions.push_back({std::cos(az), std::sin(az), 0.0});
  return spec;
}

PipelineData prepare_data(const ExperimentConfig& cfg) {
  PipelineData data;
  if (!cfg.data.manifest.empty()) {
    const std::filesystem::path mp = cfg.data.manifest;
    const DatasetManifest manifest = DatasetManifest::load(mp);
    data.train = load_split(manifest, "train", mp.parent_path());
    data.heldout = load_split(manifest, "held-out", mp.parent_path());
  } else {
    for (int i = 0; i < cfg.data.train_scenes; ++i) {
      auto [gt, scan] = generate_scene(make_scene_spec(cfg.data, cfg.seed + i));
      data.train.emplace_back(std::move(scan), std::move(gt));
    }
    for (int i = 0; i < cfg.data.heldout_scenes; ++i) {
      auto [gt, scan] = generate_scene(make_scene_spec(cfg.data, cfg.seed + 100000 + i));
      data.heldout.emplace_back(std::move(scan), std::move(gt));
    }
  }
  if (data.train.empty() || data.heldout.empty())
    throw std::invalid_argument("prepare_data: empty split");
  return data;
}

BenchmarkRow evaluate_method(const DenoiserModel& model, const std::string& method, int steps,
                             const std::vector<std::pair<Scene, Scene>>& heldout,
                             const NoiseSchedule& sched, const ExperimentConfig& cfg) {
  const int n = static_cast<int>(heldout.size());
  std::vector<MetricReport> reports(n);
  std::vector<double> times(n);
  MetricConfig mc = cfg.metrics;
  mc.seed = cfg.seed;

  auto worker = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const auto& [scan, gt] = heldout[i];
      const std::uint64_t seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (i + 1));
      const auto t0 = std::chrono::steady_clock::now();
      Scene completion;
      if (steps == 1) {
        completion = sample_onestep(model, scan, sched, cfg.distill.k_dup, seed,
                                    cfg.distill.offset_consistent_inversion);
      } else {
        SamplerConfig sc = SamplerConfig::even(steps, sched.T, cfg.distill.k_dup);
        sc.offset_consistent_inversion = cfg.distill.offset_consistent_inversion;
        completion = (model.role == ModelRole::Teacher)
                         ? sample_multistep(model, scan, sched, sc, seed)
                         : sample_fewstep(model, scan, sched, sc, seed);
      }
      const auto t1 = std::chrono::steady_clock::now();
      times[i] = std::chrono::duration<double>(t1 - t0).count();
      reports[i] = evaluate(completion, gt, mc);
    }
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || n == 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const int per = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * per, hi = std::min(n, lo + per);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  BenchmarkRow row;
  row.method = method;
  row.steps = steps;
  row.config_hash = cfg.config_hash();
  for (const MetricReport& r : reports) {
    row.report.cd += r.cd / n;
    row.report.jsd += r.jsd / n;
    row.report.emd += r.emd / n;
    for (const auto& [res, v] : r.iou) row.report.iou[res] += v / n;
  }
  row.report.wall_time_s = median(times);
  return row;
}

std::string format_table(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "method,steps,cd,jsd,emd";
  if (!rows.empty())
    for (const auto& [r, v] : rows.front().report.iou) out << ",iou@" << r;
  out << ",time_s,config_hash\n";
  out.setf(std::ios::fmtflags(0), std::ios::floatfield);
  out.precision(9);
  for (const BenchmarkRow& row : rows) {
    out << row.method << "," << row.steps << "," << row.report.cd << "," << row.report.jsd << ","
        << row.report.emd;
    for (const auto& [r, v] : row.report.iou) out << "," << v;
    out << "," << row.report.wall_time_s << "," << row.config_hash << "\n";
  }
  return out.str();
}

void write_table(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("write_table: cannot open " + tmp);
    f << format_table(rows);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp);
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

void write_dataset_artifacts(const ExperimentConfig& cfg, const PipelineData& data) {
  const auto dir = cfg.out_dir / "data";
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  auto dump_split = [&](const std::vector<std::pair<Scene, Scene>>& split,
                        const std::string& tag, const std::string& prefix) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      char num[16];
      std::snprintf(num, sizeof(num), "%03zu", i);
      ManifestRecord r;
      r.scan_file = prefix + num + "_scan.xyz";
      r.gt_file = prefix + num + "_gt.xyz";
      r.seed = cfg.seed;
      r.split = tag;
      write_pointcloud(split[i].first, dir / r.scan_file);
      write_pointcloud(split[i].second, dir / r.gt_file);
      manifest.records.push_back(std::move(r));
    }
  };
  dump_split(data.train, "train", "train");
  dump_split(data.heldout, "held-out", "heldout");
  manifest.save(dir / "manifest.json");
}

}  // namespace

std::filesystem::path run_pipeline(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "config.json", cfg.dump() + "\n");

  const NoiseSchedule sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
  const PipelineData data = prepare_data(cfg);
  if (cfg.data.manifest.empty()) write_dataset_artifacts(cfg, data);

  std::vector<double> teacher_losses;
  const DenoiserModel teacher = train_teacher(data.train, cfg.teacher.epochs, sched, cfg.net,
                                              cfg.teacher.lr, cfg.seed, &teacher_losses);
  teacher.save(cfg.out_dir / "teacher.ckpt");

  DistillConfig dc = cfg.distill;
  dc.seed = cfg.seed;
  dc.loss_log_path = (cfg.out_dir / "distill_log.jsonl").string();
  const DistillResult dres = distill(teacher, data.train, sched, dc);
  dres.student.save(cfg.out_dir / "student.ckpt");
  dres.auxiliary.save(cfg.out_dir / "auxiliary.ckpt");

  std::vector<int> steps = cfg.sampler_steps;
  std::sort(steps.begin(), steps.end(), std::greater<int>());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  const int t_max_steps = steps.front();

  std::vector<BenchmarkRow> rows;
  rows.push_back(evaluate_method(teacher, "teacher@" + std::to_string(t_max_steps), t_max_steps,
                                 data.heldout, sched, cfg));
  if (t_max_steps != 8 && std::count(steps.begin(), steps.end(), 8))
    rows.push_back(evaluate_method(teacher, "teacher@8", 8, data.heldout, sched, cfg));
  for (int s : steps) {
    if (s == t_max_steps && steps.size() > 1) continue;
    rows.push_back(evaluate_method(dres.student, "student@" + std::to_string(s), s,
                                   data.heldout, sched, cfg));
  }

  for (const BenchmarkRow& row : rows)
    write_text(cfg.out_dir / ("report_" + row.method + ".json"), row.report.to_json() + "\n");
  write_table(rows, cfg.out_dir / "benchmark.csv");
  return cfg.out_dir;
}

std::vector<BenchmarkRow> run_ablation(const ExperimentConfig& cfg, const std::string& name) {
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  auto with = [&](const std::string& tag, auto&& mutate) {
    ExperimentConfig v = cfg;
    mutate(v);
    variants.emplace_back(tag, std::move(v));
  };

  if (name == "no-structural") {
    variants.emplace_back("default", cfg);
    with("no-structural", [](ExperimentConfig& v) {
      v.distill.lambda_scene = 0.0;
      v.distill.lambda_point = 0.0;
    });
  } else if (name == "no-scene") {
    variants.emplace_back("default", cfg);
    with("no-scene", [](ExperimentConfig& v) { v.distill.lambda_scene = 0.0; });
  } else if (name == "no-point") {
    variants.emplace_back("default", cfg);
    with("no-point", [](ExperimentConfig& v) { v.distill.lambda_point = 0.0; });
  } else if (name == "weights") {
    for (const auto& [ls, lp] :
         std::vector<std::pair<double, double>>{{0.5, 0.01}, {0.05, 0.01}, {0.5, 0.1}}) {
      std::ostringstream tag;
      tag << "weights_" << ls << "_" << lp;
      with(tag.str(), [ls = ls, lp = lp](ExperimentConfig& v) {
        v.distill.lambda_scene = ls;
        v.distill.lambda_point = lp;
      });
    }
  } else if (name == "keypoint-count") {
    for (const int denom : {20, 30, 60, 70}) {
      with("fraction_1_" + std::to_string(denom), [denom, &cfg](ExperimentConfig& v) {
        // overall fraction = prefilter * keypoint_fraction
        v.distill.keypoint_fraction = 1.0 / (denom * cfg.distill.prefilter_fraction);
      });
    }
  } else if (name == "selection-method") {
    for (const KeypointMethod m :
         {KeypointMethod::Curvature, KeypointMethod::Random, KeypointMethod::Farthest}) {
      with(method_name(m), [m](ExperimentConfig& v) { v.distill.keypoint_method = m; });
    }
  } else {
    throw std::invalid_argument("run_ablation: unknown ablation " + name);
  }

  std::filesystem::create_directories(cfg.out_dir);
  const NoiseSchedule sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
  const PipelineData data = prepare_data(cfg);
  const DenoiserModel teacher =
      train_teacher(data.train, cfg.teacher.epochs, sched, cfg.net, cfg.teacher.lr, cfg.seed);

  const int eval_steps = std::min(8, *std::max_element(cfg.sampler_steps.begin(),
                                                       cfg.sampler_steps.end()));
  std::vector<BenchmarkRow> rows;
  for (const auto& [tag, vcfg] : variants) {
    DistillConfig dc = vcfg.distill;
    dc.seed = vcfg.seed;
    const DistillResult dres = distill(teacher, data.train, sched, dc);
    BenchmarkRow row =
        evaluate_method(dres.student, tag + "@" + std::to_string(eval_steps), eval_steps,
                        data.heldout, sched, vcfg);
    row.config_hash = vcfg.config_hash();
    rows.push_back(std::move(row));
  }
  write_table(rows, cfg.out_dir / ("ablation_" + name + ".csv"));
  return rows;
}

}  // namespace scenediff
