#pragma once

// End-to-end edit run: guidance -> segmentation -> partition -> edit region
// -> mask downscale -> inversion + repaint -> preservation report. Every
// stage writes its artifact into the output directory and the run finishes
// with manifest.json holding artifact hashes, the config snapshot, metrics
// and timings.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxedit/edit_region.hpp"
#include "voxedit/error.hpp"
#include "voxedit/geometry.hpp"
#include "voxedit/grid_io.hpp"
#include "voxedit/guidance.hpp"
#include "voxedit/hash.hpp"
#include "voxedit/inpaint.hpp"
#include "voxedit/synthetic.hpp"

namespace voxedit {

/// Flat `key = value` text; '#' starts a comment line; later keys win.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, const std::string& source = "config") {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::ConfigFault,
            source + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::ConfigFault, source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string to_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  return parse_key_values(io::read_file(path), path.string());
}

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorCode::ConfigFault, "bad value for " + key + ": '" + value + "'");
  return out;
}

inline std::set<int> parse_id_list(const std::string& key, const std::string& value) {
  std::set<int> ids;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ','))
    if (item.find_first_not_of(" \t") != std::string::npos) {
      const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
      ids.insert(parse_value<int>(key, item.substr(b, e - b + 1)));
    }
  return ids;
}

}  // namespace detail

struct RunConfig {
  std::filesystem::path asset;
  std::filesystem::path labels;     // ground-truth labels, for segmentation = labels
  std::filesystem::path bundle;     // pre-computed guidance; skips the guidance request
  std::filesystem::path fixtures;
  std::filesystem::path models;
  std::filesystem::path out_dir;
  std::string prompt;
  ProviderConfig provider = ProviderConfig::from_env();
  std::string segmentation = "provider";  // provider | toy | labels
  std::set<int> edit_parts;                // overrides provider part selection
  std::optional<int> granularity;
  RegionParams region;
  SoftMaskParams soft;
  double rho = 0.5;
  int stage1_resolution = 16;
  std::size_t steps_stage1 = 50;
  std::size_t steps_stage2 = 50;
  CfgParams cfg_stage1{3.0};
  CfgParams cfg_stage2{3.0};
  InterleaveOrder order = InterleaveOrder::TextFirst;
  Stepper stepper = Stepper::RfSolver;
  std::optional<std::uint64_t> seed;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "asset", "labels", "bundle", "fixtures", "models", "out", "prompt", "provider", "endpoint", "timeout",
        "retries", "segmentation", "edit_parts", "granularity", "k", "tau", "bandwidth", "rho",
        "stage1_resolution", "steps_stage1", "steps_stage2", "cfg_stage1", "cfg_stage2", "interleave", "stepper",
        "seed"};
    return k;
  }

  /// Applies every key present in `kv`; unknown keys are rejected.
  void apply(const KeyValues& kv) {
    using detail::parse_value;
    for (const auto& [key, v] : kv) {
      if (key == "asset") asset = v;
      else if (key == "labels") labels = v;
      else if (key == "bundle") bundle = v;
      else if (key == "fixtures") fixtures = v, provider.fixture_dir = v;
      else if (key == "models") models = v;
      else if (key == "out") out_dir = v;
      else if (key == "prompt") prompt = v;
      else if (key == "provider") provider.mode = parse_provider_mode(v);
      else if (key == "endpoint") provider.endpoint = v;
      else if (key == "timeout") provider.timeout = parse_value<double>(key, v);
      else if (key == "retries") provider.retries = parse_value<int>(key, v);
      else if (key == "segmentation") segmentation = v;
      else if (key == "edit_parts") edit_parts = detail::parse_id_list(key, v);
      else if (key == "granularity") granularity = parse_value<int>(key, v);
      else if (key == "k") region.k = parse_value<std::size_t>(key, v);
      else if (key == "tau") region.tau = parse_value<double>(key, v);
      else if (key == "bandwidth") soft.bandwidth = parse_value<double>(key, v);
      else if (key == "rho") rho = parse_value<double>(key, v);
      else if (key == "stage1_resolution") stage1_resolution = parse_value<int>(key, v);
      else if (key == "steps_stage1") steps_stage1 = parse_value<std::size_t>(key, v);
      else if (key == "steps_stage2") steps_stage2 = parse_value<std::size_t>(key, v);
      else if (key == "cfg_stage1") cfg_stage1.scale = parse_value<double>(key, v);
      else if (key == "cfg_stage2") cfg_stage2.scale = parse_value<double>(key, v);
      else if (key == "interleave") order = parse_interleave_order(v);
      else if (key == "stepper") stepper = parse_stepper(v);
      else if (key == "seed") seed = parse_value<std::uint64_t>(key, v);
      else fail(ErrorCode::ConfigFault, "unknown config key '" + key + "'");
    }
  }

  static RunConfig from_key_values(const KeyValues& kv) {
    RunConfig c;
    c.apply(kv);
    return c;
  }

  KeyValues snapshot() const {
    KeyValues kv{{"asset", asset.string()},
                 {"prompt", prompt},
                 {"provider", to_string(provider.mode)},
                 {"segmentation", segmentation},
                 {"k", std::to_string(region.k)},
                 {"tau", io::format_number(region.tau)},
                 {"bandwidth", io::format_number(soft.bandwidth)},
                 {"rho", io::format_number(rho)},
                 {"stage1_resolution", std::to_string(stage1_resolution)},
                 {"steps_stage1", std::to_string(steps_stage1)},
                 {"steps_stage2", std::to_string(steps_stage2)},
                 {"cfg_stage1", io::format_number(cfg_stage1.scale)},
                 {"cfg_stage2", io::format_number(cfg_stage2.scale)},
                 {"interleave", to_string(order)},
                 {"stepper", to_string(stepper)},
                 {"models", models.string()},
                 {"out", out_dir.string()}};
    if (seed) kv["seed"] = std::to_string(*seed);
    if (!labels.empty()) kv["labels"] = labels.string();
    if (!bundle.empty()) kv["bundle"] = bundle.string();
    if (!fixtures.empty()) kv["fixtures"] = fixtures.string();
    if (provider.mode == ProviderConfig::Mode::Live) {
      kv["endpoint"] = provider.endpoint;
      kv["timeout"] = io::format_number(provider.timeout);
      kv["retries"] = std::to_string(provider.retries);
    }
    if (!edit_parts.empty()) {
      std::string ids;
      for (int id : edit_parts) ids += (ids.empty() ? "" : ",") + std::to_string(id);
      kv["edit_parts"] = ids;
    }
    if (granularity) kv["granularity"] = std::to_string(*granularity);
    return kv;
  }

  void validate() const {
    require(seed.has_value(), ErrorCode::ConfigFault, "seed is required");
    require(!prompt.empty() || !bundle.empty(), ErrorCode::ConfigFault, "prompt is required");
    require(!out_dir.empty(), ErrorCode::ConfigFault, "out is required");
    const auto exists = [](const std::filesystem::path& p, const char* what) {
      require(!p.empty() && std::filesystem::exists(p), ErrorCode::ConfigFault,
              std::string(what) + " path '" + p.string() + "' does not exist");
    };
    exists(asset, "asset");
    exists(models, "models");
    if (!bundle.empty()) exists(bundle, "bundle");
    if (segmentation == "labels") exists(labels, "labels");
    require(segmentation == "provider" || segmentation == "toy" || segmentation == "labels", ErrorCode::ConfigFault,
            "segmentation must be provider, toy or labels");
    if (provider.mode == ProviderConfig::Mode::Fixture) exists(fixtures, "fixtures");
    provider.validate();
    region.validate();
    soft.validate();
    require(rho > 0.0 && rho <= 1.0, ErrorCode::ConfigFault, "rho must lie in (0,1]");
    require(steps_stage1 >= 1 && steps_stage2 >= 1, ErrorCode::ConfigFault, "step counts must be >= 1");
    require(cfg_stage1.scale >= 0.0 && cfg_stage2.scale >= 0.0, ErrorCode::ConfigFault, "CFG scales must be >= 0");
    if (granularity) check_part_count(*granularity);
  }
};

// ---------------------------------------------------------------------------
// Plan files.

inline json condition_to_json(const Condition& c) {
  const char* kind = c.kind == Condition::Kind::Text ? "text" : c.kind == Condition::Kind::Image ? "image" : "unconditional";
  return {{"kind", kind}, {"embedding", c.embedding}};
}

inline Condition condition_from_json(const json& j) {
  require(j.is_object() && j.contains("kind") && j.contains("embedding"), ErrorCode::ConfigFault,
          "condition needs kind and embedding");
  const auto kind = j.at("kind").get<std::string>();
  Condition c;
  c.embedding = j.at("embedding").get<std::vector<double>>();
  if (kind == "text") c.kind = Condition::Kind::Text;
  else if (kind == "image") c.kind = Condition::Kind::Image;
  else if (kind == "unconditional") c.kind = Condition::Kind::Unconditional;
  else fail(ErrorCode::ConfigFault, "unknown condition kind '" + kind + "'");
  c.validate();
  return c;
}

/// Writes plan.json plus the two mask files it references.
inline void save_plan(const EditPlan& plan, const std::filesystem::path& path,
                      const std::string& mask_name = "region.vxm", const std::string& stage1_name = "region_stage1.vxm") {
  const auto dir = path.parent_path();
  save_mask(plan.r_edit, dir / mask_name);
  save_mask(plan.r_edit_stage1, dir / stage1_name);
  json j{{"edit_type", to_string(plan.edit_type)},
         {"r_edit", mask_name},
         {"r_edit_stage1", stage1_name},
         {"cond_original", condition_to_json(plan.cond_original)},
         {"cond_text_s1", condition_to_json(plan.cond_text_s1)},
         {"cond_text_s2", condition_to_json(plan.cond_text_s2)},
         {"cond_image", plan.cond_image ? condition_to_json(*plan.cond_image) : json(nullptr)},
         {"steps_stage1", plan.steps_stage1},
         {"steps_stage2", plan.steps_stage2},
         {"cfg_stage1", plan.cfg_stage1.scale},
         {"cfg_stage2", plan.cfg_stage2.scale},
         {"bandwidth", plan.soft.bandwidth},
         {"interleave", to_string(plan.order)},
         {"rho", plan.rho},
         {"stepper", to_string(plan.stepper)},
         {"seed", plan.seed}};
  io::write_file(path, j.dump(2) + "\n");
}

inline EditPlan load_plan(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigFault, path.string() + ": " + e.what());
  }
  const auto dir = path.parent_path();
  EditPlan p;
  try {
    p.edit_type = parse_edit_type(j.at("edit_type").get<std::string>());
    p.r_edit = load_mask(dir / j.at("r_edit").get<std::string>());
    p.r_edit_stage1 = load_mask(dir / j.at("r_edit_stage1").get<std::string>());
    p.cond_original = condition_from_json(j.at("cond_original"));
    p.cond_text_s1 = condition_from_json(j.at("cond_text_s1"));
    p.cond_text_s2 = condition_from_json(j.at("cond_text_s2"));
    if (!j.at("cond_image").is_null()) p.cond_image = condition_from_json(j.at("cond_image"));
    p.steps_stage1 = j.at("steps_stage1").get<std::size_t>();
    p.steps_stage2 = j.at("steps_stage2").get<std::size_t>();
    p.cfg_stage1.scale = j.at("cfg_stage1").get<double>();
    p.cfg_stage2.scale = j.at("cfg_stage2").get<double>();
    p.soft.bandwidth = j.at("bandwidth").get<double>();
    p.order = parse_interleave_order(j.at("interleave").get<std::string>());
    p.rho = j.at("rho").get<double>();
    p.stepper = parse_stepper(j.at("stepper").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigFault, path.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

// Trajectory dump: "VXT1 <count>\n", then per state a "t=<time>" line and a
// VXG1 text block of doubles. All states share one support.
inline std::string to_vxt1(const Trajectory& traj) {
  require(traj.states.size() == traj.schedule.times.size(), ErrorCode::ShapeFault,
          "trajectory states do not match its schedule");
  std::ostringstream out;
  out << "VXT1 " << traj.states.size() << '\n';
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const auto& s = traj.states[i];
    out << "t=" << io::format_number(traj.schedule.times[i]) << '\n';
    write_vxg1_block<double>(out, s.support->dims, s.support->coords, s.values);
  }
  return out.str();
}

inline Trajectory parse_vxt1(std::string_view text, const std::string& source = "trajectory") {
  io::Tokens tokens(text, source);
  tokens.expect("VXT1");
  const auto count = tokens.number<std::size_t>();
  require(count >= 2, ErrorCode::IoFault, source + ": trajectory needs at least two states");
  Trajectory traj;
  std::shared_ptr<const Support> support;
  for (std::size_t i = 0; i < count; ++i) {
    const auto tag = tokens.next();
    double t = 0.0;
    const auto [ptr, ec] = std::from_chars(tag.data() + std::min<std::size_t>(2, tag.size()), tag.data() + tag.size(), t);
    require(tag.starts_with("t=") && ec == std::errc() && ptr == tag.data() + tag.size(), ErrorCode::IoFault,
            source + ": expected t=<time>, got '" + std::string(tag) + "'");
    auto block = read_vxg1_block<double>(tokens);
    if (!support) {
      support = std::make_shared<const Support>(Support{block.dims, std::move(block.coords)});
    } else {
      require(block.dims == support->dims && block.coords == support->coords, ErrorCode::IoFault,
              source + ": trajectory states have different supports");
    }
    traj.schedule.times.push_back(t);
    traj.states.emplace_back(support, std::move(block.values));
  }
  traj.schedule.validate();
  return traj;
}

inline void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  io::write_file(path, to_vxt1(traj));
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  return parse_vxt1(io::read_file(path), path.string());
}

inline json report_to_json(const PreservationReport& r, const EditPlan& plan) {
  return {{"chamfer_pres", r.chamfer_pres ? json(*r.chamfer_pres) : json(nullptr)},
          {"chamfer_points", "voxel-centers"},
          {"feature_mse_pres", r.feature_mse_pres},
          {"changed_voxel_count", r.changed_voxel_count},
          {"compared_voxels", r.compared_voxels},
          {"edit_type", to_string(plan.edit_type)},
          {"steps_stage1", plan.edit_type == EditType::Deletion ? 0 : plan.steps_stage1},
          {"steps_stage2", plan.steps_stage2},
          {"stepper", to_string(plan.stepper)}};
}

// ---------------------------------------------------------------------------

/// Error raised by run_edit_pipeline; names the stage that failed.
class PipelineError : public Error {
 public:
  PipelineError(const std::string& stage, const Error& cause)
      : Error(cause.code(), "stage " + stage + ": " + strip_code(cause)), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  static std::string strip_code(const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(e.code())) + ": ";
    return what.starts_with(prefix) ? what.substr(prefix.size()) : what;
  }

  std::string stage_;
};

struct RunManifest {
  json document;
  std::map<std::string, std::string> artifact_hashes;  // file name -> content hash
};

/// Voxel centers in [0,1]^3, one point per occupied voxel.
inline std::vector<std::array<double, 3>> voxel_points(const LatentGrid& grid) {
  std::vector<std::array<double, 3>> pts;
  for (const auto& c : grid.coords()) pts.push_back(voxel_center(c, grid.dims().resolution));
  return pts;
}

inline PartLabeling labeling_from_points(const LatentGrid& grid, const std::vector<int>& labels) {
  std::vector<LabeledPoint> lp;
  const auto pts = voxel_points(grid);
  for (std::size_t i = 0; i < pts.size(); ++i) lp.push_back({pts[i], labels[i]});
  return majority_vote_labels(lp, grid.dims());
}

inline RunManifest run_edit_pipeline(const RunConfig& config, std::shared_ptr<Transport> transport = nullptr) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path out = config.out_dir;
  fs::create_directories(out);

  json timings = json::object();
  std::map<std::string, std::string> hashes;
  std::string stage = "load";
  const auto record = [&](const std::string& name) { hashes[name] = content_hash(io::read_file(out / name)); };
  const auto manifest = [&](const json& failure, const json& metrics) {
    json artifacts = json::object();
    const bool partial = !failure.is_null();
    for (const auto& [name, h] : hashes) artifacts[name] = {{"hash", h}, {"partial", partial}};
    json m{{"status", partial ? "failed" : "ok"},
           {"failure", failure},
           {"config", config.snapshot()},
           {"artifacts", artifacts},
           {"metrics", metrics},
           {"timings", timings}};
    io::write_file(out / "manifest.json", m.dump(2) + "\n");
    return m;
  };

  auto clock = std::chrono::steady_clock::now();
  const auto lap = [&](const std::string& next) {
    const auto now = std::chrono::steady_clock::now();
    timings[stage] = std::chrono::duration<double>(now - clock).count();
    clock = now;
    stage = next;
  };

  try {
    const LatentGrid asset = load_grid(config.asset);
    require(!asset.empty(), ErrorCode::EmptyAsset, "asset has no voxels");
    const int r2 = asset.dims().resolution;
    const VoxelMask occupancy(r2, asset.coords());
    const GuidanceClient client(config.provider, transport);

    lap("guidance");
    GuidanceBundle bundle;
    if (!config.bundle.empty()) {
      bundle = bundle_from_json(json::parse(io::read_file(config.bundle)));
    } else {
      bundle = client.request_text_guidance(render_views(canonical_views(8), occupancy), config.prompt);
    }
    io::write_file(out / "bundle.json", to_json(bundle).dump(2) + "\n");
    record("bundle.json");

    lap("segmentation");
    Partition partition = whole_asset_preserved(asset.coords());
    if (bundle.edit_type != EditType::Addition) {
      PartLabeling labeling;
      std::set<int> ids = config.edit_parts;
      if (config.segmentation == "labels") {
        labeling = load_labels(config.labels);
        require(!ids.empty(), ErrorCode::ConfigFault, "segmentation = labels needs edit_parts");
      } else {
        const auto pts = voxel_points(asset);
        std::map<int, std::vector<int>> grans;
        for (int s = 3; s <= 8; ++s)
          grans[s] = config.segmentation == "toy" ? kmeans_labels(pts, s, *config.seed)
                                                  : client.request_segmentation(pts, s, *config.seed);
        json parts = json::object();
        for (const auto& [s, l] : grans) parts[std::to_string(s)] = l;
        io::write_file(out / "parts.json", parts.dump() + "\n");
        record("parts.json");
        int s = config.granularity.value_or(0);
        if (ids.empty()) {
          const auto sel = client.request_part_selection(bundle, grans);
          s = sel.granularity;
          ids = sel.part_ids;
        } else if (s == 0) {
          s = fallback_granularity(grans);
        }
        labeling = labeling_from_points(asset, grans.at(s));
      }
      save_labels(labeling, out / "labels.json");
      record("labels.json");
      partition = partition_from_labels(labeling, ids);
    }

    lap("region");
    EditPlan plan;
    plan.edit_type = bundle.edit_type;
    plan.rho = config.rho;
    plan.r_edit = compute_edit_region(bundle.edit_type, partition, asset.dims(), config.region);
    plan.derive_stage1(config.stage1_resolution);

    lap("image");
    if (bundle.edit_type != EditType::Deletion && config.provider.mode != ProviderConfig::Mode::Offline) {
      const auto views = render_views(canonical_views(24), occupancy);
      const CoordSet targets = partition.p_edit.empty() ? asset.coords() : partition.p_edit;
      const int id = client.select_best_view(views, bundle, &occupancy, &targets);
      const auto image = client.request_image_edit(views.at(id).payload, config.prompt, bundle.new_part_description);
      io::write_file(out / "image.bin", image.payload);
      record("image.bin");
      plan.cond_image = image.condition;
    }

    lap("plan");
    const auto or_full = [&](const std::string& s) { return s.empty() ? bundle.new_complete_description : s; };
    plan.cond_original = text_condition(bundle.original_description);
    plan.cond_text_s1 = text_condition(or_full(bundle.stage1_text));
    plan.cond_text_s2 = text_condition(or_full(bundle.stage2_text));
    plan.steps_stage1 = config.steps_stage1;
    plan.steps_stage2 = config.steps_stage2;
    plan.cfg_stage1 = config.cfg_stage1;
    plan.cfg_stage2 = config.cfg_stage2;
    plan.soft = config.soft;
    plan.order = config.order;
    plan.stepper = config.stepper;
    plan.seed = *config.seed;
    plan.validate();
    save_plan(plan, out / "plan.json");
    for (const char* name : {"plan.json", "region.vxm", "region_stage1.vxm"}) record(name);

    lap("edit");
    const auto models = load_models(config.models);
    const LatentGrid edited = apply_edit(asset, plan, models);
    save_grid(edited, out / "edited.vxg");
    record("edited.vxg");

    lap("report");
    const auto report = report_to_json(preservation_report(asset, edited, preserved_mask(plan.r_edit)), plan);
    io::write_file(out / "report.json", report.dump(2) + "\n");
    record("report.json");
    lap("done");
    return {manifest(nullptr, report), hashes};
  } catch (const Error& e) {
    lap(stage);
    manifest({{"failed_stage", stage}, {"code", std::string(to_string(e.code()))}, {"message", e.what()}}, nullptr);
    throw PipelineError(stage, e);
  }
}

}  // namespace voxedit
