// cvl: cross-view video localisation pipeline driver.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "cvl/commands.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cvl;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  cmd::Settings settings() const {
    io::Config c = config_path.empty() ? io::Config{} : io::Config::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
      c.set(std::string(io::trim(std::string_view(kv).substr(0, eq))),
            std::string(io::trim(std::string_view(kv).substr(eq + 1))));
    }
    return cmd::Settings::from(c);
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", common.overrides, "override a configuration key (key=value), repeatable");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view video localisation: projection, fusion, matching and evaluation"};
  app.require_subcommand(1);
  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic satellite database and query sequences");
  add_common(synth, common);
  cmd::SynthOptions synth_opt;
  std::string synth_out;
  long long seed = -1;
  synth->add_option("--seed", seed, "scene seed (overrides config 'seed')");
  synth->add_option("--frames", synth_opt.n_frames, "frames per query sequence")->capture_default_str();
  synth->add_option("--spacing", synth_opt.spacing_m, "metres between consecutive frames")->capture_default_str();
  synth->add_option("--queries", synth_opt.n_queries, "number of query sequences")->capture_default_str();
  synth->add_option("--grid", synth_opt.grid, "database grid side")->capture_default_str();
  synth->add_option("--pitch", synth_opt.grid_pitch_m, "database grid pitch in metres")->capture_default_str();
  synth->add_option("--noise", synth_opt.noise_sigma, "Gaussian noise sigma on ground frames")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // project
  auto* project = app.add_subcommand("project", "Project ground-view frames onto the overhead canvas");
  add_common(project, common);
  cmd::ProjectOptions project_opt;
  std::string sequence_dir, poses_path, intrinsics_path, project_out;
  std::vector<std::string> frames;
  bool nearest = false;
  project->add_option("frames", frames, "ground-view tensors (or PGM images with --image-level)");
  project->add_option("--sequence", sequence_dir, "sequence directory with frame_i.cvlt, poses.csv, intrinsics.csv");
  project->add_option("--poses", poses_path, "pose CSV");
  project->add_option("--intrinsics", intrinsics_path, "intrinsics CSV (one row, or one per frame)");
  project->add_option("--out", project_out, "output directory")->required();
  project->add_flag("--image-level", project_opt.image_level, "inputs are raw images; also write PGM previews");
  project->add_flag("--nearest", nearest, "nearest-neighbour sampling instead of bilinear");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Fuse projected frames into one overhead map");
  add_common(fuse, common);
  cmd::FuseOptions fuse_opt;
  std::vector<std::string> fuse_inputs;
  std::string q_w, k_w, v_w, fuse_out;
  bool use_identity = false, use_mean = false;
  fuse->add_option("inputs", fuse_inputs, "projected tensors")->required();
  auto* id_flag = fuse->add_flag("--identity", use_identity, "attention fusion with identity Q/K/V stacks");
  auto* mean_flag = fuse->add_flag("--mean", use_mean, "mask-weighted mean instead of attention");
  id_flag->excludes(mean_flag);
  fuse->add_option("--q", q_w, "query conv stack weights")->excludes(id_flag)->excludes(mean_flag);
  fuse->add_option("--k", k_w, "key conv stack weights")->excludes(id_flag)->excludes(mean_flag);
  fuse->add_option("--v", v_w, "value conv stack weights")->excludes(id_flag)->excludes(mean_flag);
  fuse->add_flag("--scale-logits", fuse_opt.scale_logits, "divide attention logits by sqrt(C)");
  fuse->add_option("--out", fuse_out, "output tensor")->required();

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Rank database patches for fused queries");
  add_common(retrieve, common);
  std::string query_list, manifest, uncertainty, retrieve_out;
  std::vector<std::string> query_pairs;
  bool no_uncertainty = false;
  int radius = -1;
  retrieve->add_option("--queries", query_list, "CSV with query_id,path");
  retrieve->add_option("--query", query_pairs, "id=path, repeatable");
  retrieve->add_option("--manifest", manifest, "database manifest")->required();
  auto* u_opt = retrieve->add_option("--uncertainty", uncertainty, "uncertainty conv stack weights");
  retrieve->add_flag("--no-uncertainty", no_uncertainty, "uniform uncertainty (U = 1)")->excludes(u_opt);
  retrieve->add_option("--radius", radius, "search radius in cells (default covers a 10 m region)");
  retrieve->add_option("--out", retrieve_out, "rankings CSV")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Recall at k from a rankings CSV");
  add_common(eval, common);
  cmd::EvalOptions eval_opt;
  std::string rankings, positions, metrics_out, flags_out;
  double threshold = -1;
  eval->add_option("--rankings", rankings, "rankings CSV")->required();
  eval->add_option("--manifest", manifest, "database manifest")->required();
  eval->add_option("--positions", positions, "query positions CSV (query_id,lat,lon)")->required();
  eval->add_option("--ks", eval_opt.ks, "k values")->delimiter(',')->capture_default_str();
  eval->add_option("--threshold", threshold, "success radius in metres (default eval.threshold_m)");
  eval->add_option("--out", metrics_out, "metrics CSV")->required();
  eval->add_option("--flags", flags_out, "per-query success flags CSV");

  // loss
  auto* loss = app.add_subcommand("loss", "Exhaustive-batch soft-margin triplet loss and gradients");
  cmd::LossOptions loss_opt;
  std::string matrix, grad_out;
  loss->add_option("--matrix", matrix, "B x B distance matrix CSV")->required();
  loss->add_option("--alpha", loss_opt.alpha, "loss sharpness")->capture_default_str();
  loss->add_option("--grad-out", grad_out, "gradient CSV (q,s,grad)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) {
      synth_opt.settings = common.settings();
      if (seed >= 0) synth_opt.settings.seed = static_cast<std::uint64_t>(seed);
      synth_opt.out_dir = synth_out;
      const auto r = cmd::cmd_synth(synth_opt);
      std::cout << "manifest " << r.manifest.string() << "\nqueries " << r.queries_csv.string() << "\n";
    } else if (*project) {
      project_opt.settings = common.settings();
      project_opt.interpolation = nearest ? Interpolation::Nearest : Interpolation::Bilinear;
      if (!sequence_dir.empty()) {
        if (!frames.empty()) throw CLI::ValidationError("--sequence", "cannot be combined with explicit frames");
        cmd::use_sequence_dir(project_opt, sequence_dir);
      } else {
        if (frames.empty() || poses_path.empty() || intrinsics_path.empty())
          throw CLI::ValidationError("project", "give --sequence DIR or frames with --poses and --intrinsics");
        project_opt.frames.assign(frames.begin(), frames.end());
        project_opt.poses = poses_path;
        project_opt.intrinsics = intrinsics_path;
      }
      project_opt.out_dir = project_out;
      for (const auto& p : cmd::cmd_project(project_opt)) std::cout << p.string() << "\n";
    } else if (*fuse) {
      fuse_opt.inputs.assign(fuse_inputs.begin(), fuse_inputs.end());
      fuse_opt.out = fuse_out;
      const bool have_weights = !q_w.empty() || !k_w.empty() || !v_w.empty();
      const std::string mode = use_mean       ? "mean"
                               : use_identity ? "identity"
                               : have_weights ? "attention"
                                              : common.settings().fusion_mode;
      if (mode == "mean") {
        fuse_opt.mode = cmd::FuseMode::Mean;
      } else if (mode == "identity") {
        fuse_opt.mode = cmd::FuseMode::Identity;
      } else {
        if (q_w.empty() || k_w.empty() || v_w.empty())
          throw CLI::ValidationError("fuse", "attention fusion needs all of --q --k --v (or --identity / --mean)");
        fuse_opt.mode = cmd::FuseMode::Attention;
        fuse_opt.query_weights = q_w;
        fuse_opt.key_weights = k_w;
        fuse_opt.value_weights = v_w;
      }
      cmd::cmd_fuse(fuse_opt);
      std::cout << fuse_out << "\n";
    } else if (*retrieve) {
      cmd::RetrieveOptions opt;
      opt.settings = common.settings();
      if (radius >= 0) opt.settings.radius_px = radius;
      if (!query_list.empty()) opt.queries = cmd::read_query_list(query_list);
      for (const auto& qp : query_pairs) {
        const auto eq = qp.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--query", "expected id=path, got '" + qp + "'");
        opt.queries.emplace_back(qp.substr(0, eq), qp.substr(eq + 1));
      }
      if (opt.queries.empty()) throw CLI::ValidationError("retrieve", "give --queries or --query");
      if (!no_uncertainty && uncertainty.empty())
        throw CLI::ValidationError("retrieve", "give --uncertainty WEIGHTS or --no-uncertainty");
      if (!uncertainty.empty()) opt.uncertainty_weights = uncertainty;
      opt.manifest = manifest;
      opt.out = retrieve_out;
      cmd::cmd_retrieve(opt);
      std::cout << retrieve_out << "\n";
    } else if (*eval) {
      eval_opt.rankings = rankings;
      eval_opt.manifest = manifest;
      eval_opt.query_positions = positions;
      eval_opt.threshold_m = threshold >= 0 ? threshold : common.settings().threshold_m;
      eval_opt.out = metrics_out;
      eval_opt.flags_out = flags_out;
      for (const auto& r : cmd::cmd_eval(eval_opt)) std::cout << "r@" << r.k << " " << r.recall << "\n";
    } else if (*loss) {
      loss_opt.matrix = matrix;
      loss_opt.grad_out = grad_out;
      const auto r = cmd::cmd_loss(loss_opt);
      std::cout << io::format_double(r.loss) << "\n";
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::IoError ? kExitIo : kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
