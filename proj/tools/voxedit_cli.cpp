// voxedit command line. Every subcommand accepts --config <file>, a flat
// `key = value` file whose keys are the long option names (dashes or
// underscores). Command-line values win over config values; keys a
// subcommand does not use are ignored.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "voxedit/voxedit.hpp"

namespace fs = std::filesystem;
using namespace voxedit;

namespace {

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

/// Splices config-file values in front of the user's arguments for the chosen
/// subcommand; options take their last value, so explicit flags override.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  const auto* sub = [&]() -> const CLI::App* {
    for (const auto* s : app.get_subcommands([](const CLI::App*) { return true; }))
      if (s->get_name() == args[1]) return s;
    return nullptr;
  }();
  if (!sub) return args;
  std::optional<std::string> path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (!path) return args;
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const auto& [key, value] : load_key_values(*path)) {
    const auto name = "--" + dashed(key);
    if (name == "--config" || sub->get_option_no_throw(name) == nullptr) continue;
    out.push_back(name + "=" + value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

struct SynthArgs {
  std::string shape = "sphere";
  int resolution = 16;
  int channels = 8;
  std::optional<std::uint64_t> seed;
  std::string out, labels_out, ply;
};

struct TrainArgs {
  ModelTraining t;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct SegmentArgs {
  std::string asset, out, fixtures, provider = "offline";
  int granularity = 4;
  std::optional<std::uint64_t> seed;
};

struct RegionArgs {
  std::string asset, labels, edit_parts, type = "modification", out, stage1_out;
  RegionParams region;
  int stage1_resolution = 0;
  double rho = 0.5;
};

struct InvertArgs {
  std::string asset, models, prompt, out, stepper = "rf-solver";
  int stage = 2;
  int stage1_resolution = 16;
  std::size_t steps = 50;
};

struct EditArgs {
  std::string asset, plan, models, out, report;
};

struct ReportArgs {
  std::string original, edited, region, out;
};

struct PlyArgs {
  std::string grid, out;
};

void run_synth(const SynthArgs& a) {
  require(a.seed.has_value(), ErrorCode::ConfigFault, "--seed is required");
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  const auto asset = make_synthetic_asset(parse_shape(a.shape), {a.resolution, a.channels}, *a.seed);
  save_grid(asset.grid, a.out);
  if (!a.labels_out.empty()) save_labels(asset.labels, a.labels_out);
  if (!a.ply.empty()) export_ply(asset.grid, a.ply);
  std::cout << a.shape << ": " << asset.grid.size() << " voxels, " << asset.labels.part_count << " parts\n";
}

void run_train(const TrainArgs& a) {
  require(a.seed.has_value(), ErrorCode::ConfigFault, "--seed is required");
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  fs::create_directories(a.out);
  save_models(train_toy_models(a.t, *a.seed), a.out);
  std::cout << "models written to " << a.out << "\n";
}

void run_segment(const SegmentArgs& a) {
  require(a.seed.has_value(), ErrorCode::ConfigFault, "--seed is required");
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  const auto grid = load_grid(a.asset);
  const auto pts = voxel_points(grid);
  ProviderConfig provider = ProviderConfig::from_env();
  provider.mode = parse_provider_mode(a.provider);
  provider.fixture_dir = a.fixtures;
  const GuidanceClient client(provider);
  const auto labels = client.request_segmentation(pts, a.granularity, *a.seed);
  save_labels(labeling_from_points(grid, labels), a.out);
  std::cout << "S=" << a.granularity << " labels written to " << a.out << "\n";
}

void run_detect_region(const RegionArgs& a) {
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  const auto grid = load_grid(a.asset);
  const auto type = parse_edit_type(a.type);
  Partition partition = whole_asset_preserved(grid.coords());
  if (type != EditType::Addition) {
    require(!a.labels.empty() && !a.edit_parts.empty(), ErrorCode::ConfigFault,
            "--labels and --edit-parts are required for modification and deletion");
    partition = partition_from_labels(load_labels(a.labels), detail::parse_id_list("edit_parts", a.edit_parts));
  }
  a.region.validate();
  const auto r_edit = compute_edit_region(type, partition, grid.dims(), a.region);
  save_mask(r_edit, a.out);
  if (!a.stage1_out.empty()) {
    require(a.stage1_resolution >= 1 && grid.dims().resolution % a.stage1_resolution == 0, ErrorCode::BadFactor,
            "--stage1-resolution must divide the asset resolution");
    save_mask(downscale_mask(r_edit, grid.dims().resolution / a.stage1_resolution, a.rho), a.stage1_out);
  }
  std::cout << "R_edit: " << r_edit.size() << " voxels\n";
}

void run_invert(const InvertArgs& a) {
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  const auto grid = load_grid(a.asset);
  const auto models = load_models(a.models);
  require(a.stage == 1 || a.stage == 2, ErrorCode::ConfigFault, "--stage must be 1 or 2");
  const FlowState data =
      a.stage == 2 ? FlowState::from_grid(grid)
                   : encode_structure(grid.coords(), grid.dims().resolution,
                                      grid.dims().resolution / std::max(1, a.stage1_resolution));
  const auto& field = a.stage == 2 ? *models.features.text : *models.structure.text;
  const auto traj = invert(data, field, text_condition(a.prompt), TimeSchedule::uniform(a.steps), parse_stepper(a.stepper));
  save_trajectory(traj, a.out);
  std::cout << "trajectory with " << traj.states.size() << " states written to " << a.out << "\n";
}

void run_edit(const EditArgs& a) {
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  const auto start = std::chrono::steady_clock::now();
  const auto asset = load_grid(a.asset);
  const auto plan = load_plan(a.plan);
  const auto edited = apply_edit(asset, plan, load_models(a.models));
  save_grid(edited, a.out);
  if (!a.report.empty()) {
    const auto report = preservation_report(asset, edited, preserved_mask(plan.r_edit));
    io::write_file(a.report, report_to_json(report, plan).dump(2) + "\n");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "edited " << edited.size() << " voxels in " << secs << " s\n";
}

void run_report(const ReportArgs& a) {
  const auto original = load_grid(a.original);
  const auto edited = load_grid(a.edited);
  const auto r_edit = load_mask(a.region);
  const auto r = preservation_report(original, edited, preserved_mask(r_edit));
  const json j{{"chamfer_pres", r.chamfer_pres ? json(*r.chamfer_pres) : json(nullptr)},
               {"chamfer_points", "voxel-centers"},
               {"feature_mse_pres", r.feature_mse_pres},
               {"changed_voxel_count", r.changed_voxel_count},
               {"compared_voxels", r.compared_voxels}};
  if (a.out.empty()) std::cout << j.dump(2) << "\n";
  else io::write_file(a.out, j.dump(2) + "\n");
}

void run_export_ply(const PlyArgs& a) {
  require(!a.out.empty(), ErrorCode::ConfigFault, "--out is required");
  export_ply(load_grid(a.grid), a.out);
}

void run_pipeline(const std::map<std::string, std::string>& values) {
  const auto config = RunConfig::from_key_values(values);
  const auto m = run_edit_pipeline(config);
  for (const auto& [name, hash] : m.artifact_hashes) std::cout << hash << "  " << name << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free voxel latent editing toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  const auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    return sub;
  };

  SynthArgs synth;
  auto* s = with_config(app.add_subcommand("synth", "generate a synthetic asset with part labels"));
  s->add_option("--shape", synth.shape, "sphere | box | dumbbell");
  s->add_option("--resolution", synth.resolution);
  s->add_option("--channels", synth.channels);
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out, "VXG1 grid output");
  s->add_option("--labels-out", synth.labels_out, "ground-truth labels JSON");
  s->add_option("--ply", synth.ply, "optional PLY export");

  TrainArgs train;
  auto* t = with_config(app.add_subcommand("train", "train the four toy flow models on synthetic shapes"));
  t->add_option("--resolution", train.t.resolution);
  t->add_option("--stage1-resolution", train.t.stage1_resolution);
  t->add_option("--channels", train.t.channels);
  t->add_option("--assets-per-shape", train.t.assets_per_shape);
  t->add_option("--steps", train.t.params.steps);
  t->add_option("--batch", train.t.params.batch);
  t->add_option("--learning-rate", train.t.params.learning_rate);
  t->add_option("--hidden", train.t.params.hidden);
  t->add_option("--seed", train.seed);
  t->add_option("--out", train.out, "model directory");

  SegmentArgs seg;
  auto* g = with_config(app.add_subcommand("segment", "segment an asset into S parts"));
  g->add_option("--asset", seg.asset)->required();
  g->add_option("--granularity", seg.granularity, "part count S in [3,8]");
  g->add_option("--provider", seg.provider, "fixture | live | offline");
  g->add_option("--fixtures", seg.fixtures);
  g->add_option("--seed", seg.seed);
  g->add_option("--out", seg.out, "labels JSON");

  RegionArgs reg;
  auto* d = with_config(app.add_subcommand("detect-region", "compute the edit region mask"));
  d->add_option("--asset", reg.asset)->required();
  d->add_option("--labels", reg.labels);
  d->add_option("--edit-parts", reg.edit_parts, "comma-separated part ids");
  d->add_option("--type", reg.type, "addition | modification | deletion");
  d->add_option("--k", reg.region.k);
  d->add_option("--tau", reg.region.tau);
  d->add_option("--out", reg.out, "VXM1 mask");
  d->add_option("--stage1-out", reg.stage1_out, "downscaled VXM1 mask");
  d->add_option("--stage1-resolution", reg.stage1_resolution);
  d->add_option("--rho", reg.rho);

  InvertArgs inv;
  auto* v = with_config(app.add_subcommand("invert", "invert an asset to its noise trajectory"));
  v->add_option("--asset", inv.asset)->required();
  v->add_option("--models", inv.models)->required();
  v->add_option("--stage", inv.stage, "1 = structure, 2 = features");
  v->add_option("--stage1-resolution", inv.stage1_resolution);
  v->add_option("--prompt", inv.prompt, "text condition, usually the original description")->required();
  v->add_option("--steps", inv.steps);
  v->add_option("--stepper", inv.stepper, "euler | rf-solver");
  v->add_option("--out", inv.out, "VXT1 trajectory");

  EditArgs edit;
  auto* e = with_config(app.add_subcommand("edit", "apply a saved edit plan"));
  e->add_option("--asset", edit.asset)->required();
  e->add_option("--plan", edit.plan)->required();
  e->add_option("--models", edit.models)->required();
  e->add_option("--out", edit.out);
  e->add_option("--report", edit.report);

  std::map<std::string, std::string> pipe_values;
  auto* p = with_config(app.add_subcommand("pipeline", "run the full guided edit"));
  std::vector<std::pair<std::string, CLI::Option*>> pipe_opts;
  for (const auto& key : RunConfig::keys()) {
    auto* opt = p->add_option("--" + dashed(key), pipe_values[key]);
    pipe_opts.emplace_back(key, opt);
  }

  ReportArgs rep;
  auto* r = with_config(app.add_subcommand("report", "preservation metrics of an edit"));
  r->add_option("--original", rep.original)->required();
  r->add_option("--edited", rep.edited)->required();
  r->add_option("--region", rep.region, "R_edit mask")->required();
  r->add_option("--out", rep.out);

  PlyArgs ply;
  auto* x = with_config(app.add_subcommand("export-ply", "export a grid as ASCII PLY"));
  x->add_option("--grid", ply.grid)->required();
  x->add_option("--out", ply.out);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    args.pop_back();
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (*s) run_synth(synth);
    else if (*t) run_train(train);
    else if (*g) run_segment(seg);
    else if (*d) run_detect_region(reg);
    else if (*v) run_invert(inv);
    else if (*e) run_edit(edit);
    else if (*r) run_report(rep);
    else if (*x) run_export_ply(ply);
    else if (*p) {
      std::map<std::string, std::string> kv;
      for (const auto& [key, opt] : pipe_opts)
        if (opt->count() > 0) kv[key] = pipe_values[key];
      run_pipeline(kv);
    }
  } catch (const PipelineError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
