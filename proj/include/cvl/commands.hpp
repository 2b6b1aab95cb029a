#pragma once

// Subcommand implementations behind the `cvl` tool. Each command reads and
// writes the on-disk formats in io.hpp so the stages can be chained:
// synth -> project -> fuse -> retrieve -> eval, plus loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvl/error.hpp"
#include "cvl/eval.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/fusion.hpp"
#include "cvl/geometry.hpp"
#include "cvl/io.hpp"
#include "cvl/matching.hpp"
#include "cvl/parallel.hpp"
#include "cvl/synth.hpp"

namespace cvl::cmd {

namespace fs = std::filesystem;

// Effective settings: built-in defaults, then the config file, then flags.
struct Settings {
  std::size_t canvas_size = 512;
  double meters_per_pixel = 0.2;
  double camera_height = 1.65;
  std::optional<int> radius_px;  // derived from the 10 m search region when unset
  std::string fusion_mode = "attention";
  double threshold_m = kSuccessRadiusM;
  std::uint64_t seed = 0;
  std::size_t ground_width = 1024;
  std::size_t ground_height = 256;
  double ground_hfov_deg = 90.0;
  double scene_extent_m = 409.6;
  std::size_t scene_texture_size = 2048;

  static Settings from(const io::Config& c) {
    Settings s;
    s.canvas_size = static_cast<std::size_t>(c.get_int("canvas.size_px", static_cast<long long>(s.canvas_size)));
    s.meters_per_pixel = c.get_double("canvas.meters_per_pixel", s.meters_per_pixel);
    s.camera_height = c.get_double("canvas.camera_height", s.camera_height);
    if (c.has("match.radius_px")) s.radius_px = static_cast<int>(c.get_int("match.radius_px", 0));
    s.fusion_mode = c.get("fusion.mode", s.fusion_mode);
    s.threshold_m = c.get_double("eval.threshold_m", s.threshold_m);
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    s.ground_width = static_cast<std::size_t>(c.get_int("ground.width", static_cast<long long>(s.ground_width)));
    s.ground_height = static_cast<std::size_t>(c.get_int("ground.height", static_cast<long long>(s.ground_height)));
    s.ground_hfov_deg = c.get_double("ground.hfov_deg", s.ground_hfov_deg);
    s.scene_extent_m = c.get_double("scene.extent_m", s.scene_extent_m);
    s.scene_texture_size =
        static_cast<std::size_t>(c.get_int("scene.texture_size", static_cast<long long>(s.scene_texture_size)));
    require(s.canvas_size > 0 && s.meters_per_pixel > 0 && s.camera_height > 0, ErrorCode::InvalidArgument,
            "canvas settings must be positive");
    require(s.fusion_mode == "attention" || s.fusion_mode == "identity" || s.fusion_mode == "mean",
            ErrorCode::InvalidArgument, "fusion.mode must be attention, identity or mean");
    return s;
  }

  CanvasSpec canvas() const { return CanvasSpec::centered(canvas_size, meters_per_pixel, camera_height); }
  int radius() const { return radius_px ? *radius_px : search_radius(meters_per_pixel); }

  io::Config to_config() const {
    io::Config c;
    c.set("canvas.size_px", std::to_string(canvas_size));
    c.set("canvas.meters_per_pixel", io::format_double(meters_per_pixel));
    c.set("canvas.camera_height", io::format_double(camera_height));
    c.set("match.radius_px", std::to_string(radius()));
    c.set("fusion.mode", fusion_mode);
    c.set("eval.threshold_m", io::format_double(threshold_m));
    c.set("seed", std::to_string(seed));
    c.set("ground.width", std::to_string(ground_width));
    c.set("ground.height", std::to_string(ground_height));
    c.set("ground.hfov_deg", io::format_double(ground_hfov_deg));
    c.set("scene.extent_m", io::format_double(scene_extent_m));
    c.set("scene.texture_size", std::to_string(scene_texture_size));
    return c;
  }
};

inline std::string frame_name(std::size_t i) { return "frame_" + std::to_string(i) + ".cvlt"; }

inline std::string pad(std::size_t v, std::size_t width) {
  std::string s = std::to_string(v);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

// ---- synth -------------------------------------------------------------------

struct SynthOptions {
  Settings settings;
  std::size_t n_frames = 4;
  double spacing_m = 5.0;
  std::size_t n_queries = 25;
  std::size_t grid = 10;        // database is grid x grid satellite patches
  double grid_pitch_m = 10.0;
  double noise_sigma = 0.0;     // additive Gaussian noise on ground frames
  fs::path out_dir;
};

struct SynthResult {
  fs::path manifest;
  fs::path queries_csv;
  std::vector<fs::path> query_dirs;
};

/// Writes a synthetic world: a satellite database on a square grid and
/// query sequences whose last camera sits at the query position.
///
/// Layout under out_dir:
///   config.txt                 effective settings
///   database/manifest.csv      id,path,lat,lon
///   database/centers.csv       id,x,y (world metres)
///   database/<id>.cvlt         satellite patch, S x S x 1
///   queries/queries.csv        query_id,lat,lon,x,y,heading
///   queries/<qid>/frame_i.cvlt ground frames, H x W x 1
///   queries/<qid>/poses.csv    world->camera, world anchored at the query
///   queries/<qid>/intrinsics.csv
inline SynthResult cmd_synth(const SynthOptions& opt) {
  require(opt.n_frames >= 1, ErrorCode::InvalidArgument, "n_frames must be at least 1");
  require(opt.spacing_m > 0 && opt.grid_pitch_m > 0, ErrorCode::InvalidArgument, "spacing and pitch must be positive");
  require(opt.grid >= 1, ErrorCode::InvalidArgument, "grid must be at least 1");
  const Settings& s = opt.settings;
  const CanvasSpec canvas = s.canvas();
  const Scene scene = make_scene(s.seed, s.scene_extent_m, s.scene_texture_size);
  const CameraIntrinsics k =
      make_intrinsics(s.ground_width, s.ground_height, s.ground_hfov_deg * std::numbers::pi / 180.0);

  SynthResult result;
  io::write_file(opt.out_dir / "config.txt", s.to_config().str());

  const fs::path db_dir = opt.out_dir / "database";
  const double half_span = 0.5 * static_cast<double>(opt.grid - 1) * opt.grid_pitch_m;
  std::vector<io::ManifestEntry> entries(opt.grid * opt.grid);
  io::CsvWriter centers({"id", "x", "y"});
  for (std::size_t i = 0; i < opt.grid; ++i)
    for (std::size_t j = 0; j < opt.grid; ++j) {
      const double x = -half_span + static_cast<double>(i) * opt.grid_pitch_m;
      const double y = -half_span + static_cast<double>(j) * opt.grid_pitch_m;
      const std::string id = "sat_" + pad(i, 2) + "_" + pad(j, 2);
      entries[i * opt.grid + j] = {id, db_dir / (id + ".cvlt"), offset_to_geo(scene.origin, x, y)};
      centers.row({id, io::format_double(x), io::format_double(y)});
    }
  parallel_for(0, entries.size(), [&](std::size_t e) {
    const std::size_t i = e / opt.grid, j = e % opt.grid;
    const double x = -half_span + static_cast<double>(i) * opt.grid_pitch_m;
    const double y = -half_span + static_cast<double>(j) * opt.grid_pitch_m;
    io::write_feature_map(entries[e].tensor_path, render_satellite(scene, canvas, x, y));
  });
  result.manifest = db_dir / "manifest.csv";
  io::write_file(result.manifest, io::format_manifest(entries, db_dir));
  centers.save(db_dir / "centers.csv");

  // Queries fall inside the grid, at most half a pitch from the border
  // patches, so the nearest database patch is always within reach.
  const fs::path q_root = opt.out_dir / "queries";
  Rng rng(Rng::mix(s.seed ^ 0x7175657279ULL));
  struct Query {
    std::string id;
    double x, y, heading;
  };
  std::vector<Query> queries;
  const double q_span = std::max(0.0, half_span - 0.5 * opt.grid_pitch_m);
  for (std::size_t q = 0; q < opt.n_queries; ++q) {
    Query query{"q" + pad(q, 3), 0, 0, 0};
    query.x = rng.uniform(-q_span, q_span);
    query.y = rng.uniform(-q_span, q_span);
    query.heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    queries.push_back(query);
  }
  io::CsvWriter qcsv({"query_id", "lat", "lon", "x", "y", "heading"});
  for (const auto& q : queries) {
    const GeoPoint g = offset_to_geo(scene.origin, q.x, q.y);
    qcsv.row({q.id, io::format_double(g.lat), io::format_double(g.lon), io::format_double(q.x), io::format_double(q.y),
              io::format_double(q.heading)});
    result.query_dirs.push_back(q_root / q.id);
  }
  result.queries_csv = q_root / "queries.csv";
  qcsv.save(result.queries_csv);

  parallel_for(0, queries.size(), [&](std::size_t qi) {
    const Query& q = queries[qi];
    const Vec3 anchor{q.x, q.y, 0.0};
    const Trajectory traj = make_trajectory(opt.n_frames, opt.spacing_m, q.heading, 0.0, anchor);
    Rng noise(Rng::mix(s.seed * 1000003ULL + qi + 1));
    std::vector<RigidPose> local;
    for (std::size_t f = 0; f < traj.poses.size(); ++f) {
      FeatureMap<double> frame = render_ground(scene, k, traj.poses[f], s.camera_height);
      if (opt.noise_sigma > 0) add_gaussian_noise(frame, opt.noise_sigma, noise);
      io::write_feature_map(result.query_dirs[qi] / frame_name(f + 1), frame);
      local.push_back(reanchor(traj.poses[f], anchor));
    }
    io::write_poses(result.query_dirs[qi] / "poses.csv", local);
    io::write_intrinsics(result.query_dirs[qi] / "intrinsics.csv",
                         std::vector<CameraIntrinsics>(opt.n_frames, k));
  });
  return result;
}

// ---- project -----------------------------------------------------------------

struct ProjectOptions {
  Settings settings;
  std::vector<fs::path> frames;
  fs::path poses;
  fs::path intrinsics;
  fs::path out_dir;
  bool image_level = false;  // inputs may be PGM images; also writes PGM previews
  Interpolation interpolation = Interpolation::Bilinear;
};

// Frames, poses and intrinsics of a sequence directory written by synth.
inline void use_sequence_dir(ProjectOptions& opt, const fs::path& dir) {
  opt.poses = dir / "poses.csv";
  opt.intrinsics = dir / "intrinsics.csv";
  const auto n = io::read_poses(opt.poses).size();
  opt.frames.clear();
  for (std::size_t i = 1; i <= n; ++i) opt.frames.push_back(dir / frame_name(i));
}

inline std::vector<fs::path> cmd_project(const ProjectOptions& opt) {
  require(!opt.frames.empty(), ErrorCode::EmptySequence, "no frames to project");
  const auto poses = io::read_poses(opt.poses);
  auto intrinsics = io::read_intrinsics(opt.intrinsics);
  if (intrinsics.size() == 1 && opt.frames.size() > 1) intrinsics.resize(opt.frames.size(), intrinsics.front());
  require(poses.size() == opt.frames.size() && intrinsics.size() == opt.frames.size(), ErrorCode::DimensionMismatch,
          std::to_string(opt.frames.size()) + " frames but " + std::to_string(poses.size()) + " poses and " +
              std::to_string(intrinsics.size()) + " intrinsics");
  std::vector<FeatureMap<double>> sources;
  for (const auto& f : opt.frames)
    sources.push_back(opt.image_level && f.extension() == ".pgm" ? io::read_pgm(f) : io::read_feature_map(f));
  const auto projected =
      gvp_warp_sequence(sources, intrinsics, poses, opt.settings.canvas(), WarpOptions{opt.interpolation});
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < projected.size(); ++i) {
    const fs::path p = opt.out_dir / ("proj_" + std::to_string(i + 1) + ".cvlt");
    io::write_feature_map(p, projected[i]);
    if (opt.image_level) {
      fs::path preview = p;
      preview.replace_extension(".pgm");
      io::write_pgm(preview, projected[i]);
    }
    out.push_back(p);
  }
  return out;
}

// ---- fuse --------------------------------------------------------------------

enum class FuseMode { Attention, Identity, Mean };

struct FuseOptions {
  std::vector<fs::path> inputs;
  FuseMode mode = FuseMode::Identity;
  fs::path query_weights, key_weights, value_weights;  // FuseMode::Attention
  bool scale_logits = false;
  fs::path out;
};

inline FeatureMap<double> fuse_frames(const std::vector<FeatureMap<double>>& frames, const FuseOptions& opt) {
  require(!frames.empty(), ErrorCode::EmptySequence, "no frames to fuse");
  switch (opt.mode) {
    case FuseMode::Mean:
      return mean_fuse(frames);
    case FuseMode::Identity:
      return fuse_sequence(frames, QkvWeights::identity(frames.front().channels()), {opt.scale_logits});
    case FuseMode::Attention: {
      const QkvWeights w{io::read_conv_stack(opt.query_weights), io::read_conv_stack(opt.key_weights),
                         io::read_conv_stack(opt.value_weights)};
      return fuse_sequence(frames, w, {opt.scale_logits});
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown fusion mode");
}

inline FeatureMap<double> cmd_fuse(const FuseOptions& opt) {
  require(!opt.inputs.empty(), ErrorCode::EmptySequence, "no frames to fuse");
  std::vector<FeatureMap<double>> frames;
  for (const auto& p : opt.inputs) frames.push_back(io::read_feature_map(p));
  FeatureMap<double> fused = fuse_frames(frames, opt);
  io::write_feature_map(opt.out, fused);
  return fused;
}

// ---- retrieve ----------------------------------------------------------------

struct RetrieveOptions {
  Settings settings;
  std::vector<std::pair<std::string, fs::path>> queries;  // id -> fused tensor
  fs::path manifest;
  std::optional<fs::path> uncertainty_weights;  // empty: U = 1
  fs::path out;
};

struct RankedEntry {
  std::size_t db_index;
  Alignment alignment;
};

/// Ranks every database entry for every query by best-aligned distance
/// (ties keep manifest order). CSV columns: query_id, rank, db_id,
/// displacement_m, displacement_n (metres), ncc_score, weighted_score,
/// distance_d.
inline std::vector<std::vector<RankedEntry>> cmd_retrieve(const RetrieveOptions& opt) {
  const auto entries = io::read_manifest(opt.manifest);
  require(!entries.empty(), ErrorCode::InvalidArgument, "manifest has no entries");
  require(!opt.queries.empty(), ErrorCode::InvalidArgument, "no queries");
  const int radius = opt.settings.radius();
  const double cell_m = opt.settings.meters_per_pixel;

  std::vector<FeatureMap<double>> db(entries.size());
  std::vector<std::optional<UncertaintyField>> uncertainty(entries.size());
  std::optional<ConvStack> u_weights;
  if (opt.uncertainty_weights) u_weights = io::read_conv_stack(*opt.uncertainty_weights);
  parallel_for(0, entries.size(), [&](std::size_t e) {
    db[e] = io::read_feature_map(entries[e].tensor_path);
    if (u_weights) uncertainty[e] = uncertainty_field(db[e], *u_weights, radius);
  });

  std::vector<FeatureMap<double>> queries;
  for (const auto& [id, path] : opt.queries) queries.push_back(io::read_feature_map(path));

  std::vector<std::vector<RankedEntry>> rankings(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<RankedEntry> row(entries.size());
    parallel_for(0, entries.size(), [&](std::size_t e) {
      row[e] = {e, align(db[e], queries[q], uncertainty[e] ? &*uncertainty[e] : nullptr, radius, cell_m)};
    });
    std::stable_sort(row.begin(), row.end(), [](const RankedEntry& a, const RankedEntry& b) {
      return a.alignment.distance < b.alignment.distance;
    });
    rankings[q] = std::move(row);
  }

  io::CsvWriter csv({"query_id", "rank", "db_id", "displacement_m", "displacement_n", "ncc_score", "weighted_score",
                     "distance_d"});
  for (std::size_t q = 0; q < rankings.size(); ++q)
    for (std::size_t r = 0; r < rankings[q].size(); ++r) {
      const auto& e = rankings[q][r];
      const auto& a = e.alignment;
      csv.row({opt.queries[q].first, std::to_string(r + 1), entries[e.db_index].id,
               io::format_double(a.displacement.m * cell_m), io::format_double(a.displacement.n * cell_m),
               io::format_double(a.ncc), io::format_double(a.weighted), io::format_double(a.distance)});
    }
  csv.save(opt.out);
  return rankings;
}

// Queries listed as query_id,path (paths relative to the list file).
inline std::vector<std::pair<std::string, fs::path>> read_query_list(const fs::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t id_col = t.column("query_id", path.string());
  const std::size_t path_col = t.column("path", path.string());
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& r : t.rows) out.emplace_back(r[id_col], path.parent_path() / r[path_col]);
  return out;
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  fs::path rankings;
  fs::path manifest;
  fs::path query_positions;  // query_id,lat,lon
  std::vector<std::size_t> ks{1, 5, 10, 100};
  double threshold_m = kSuccessRadiusM;
  fs::path out;        // k,recall
  fs::path flags_out;  // per-query success flags
};

inline std::vector<QueryRanking> read_rankings(const fs::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::string ctx = path.string();
  const std::size_t qc = t.column("query_id", ctx), rc = t.column("rank", ctx), dc = t.column("db_id", ctx);
  std::vector<QueryRanking> out;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::pair<long long, std::string>>> ranked;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto [it, inserted] = index.emplace(r[qc], out.size());
    if (inserted) {
      out.push_back({r[qc], {}});
      ranked.emplace_back();
    }
    ranked[it->second].emplace_back(io::parse_int(r[rc], ctx + ":" + std::to_string(t.line_numbers[i])), r[dc]);
  }
  for (std::size_t q = 0; q < out.size(); ++q) {
    std::stable_sort(ranked[q].begin(), ranked[q].end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, id] : ranked[q]) out[q].ranked_ids.push_back(id);
  }
  return out;
}

inline std::unordered_map<std::string, GeoPoint> read_positions(const fs::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::string ctx = path.string();
  const std::size_t ic = t.column("query_id", ctx), la = t.column("lat", ctx), lo = t.column("lon", ctx);
  std::unordered_map<std::string, GeoPoint> out;
  for (const auto& r : t.rows) out[r[ic]] = {io::parse_double(r[la], ctx), io::parse_double(r[lo], ctx)};
  return out;
}

inline std::vector<RecallAtK> cmd_eval(const EvalOptions& opt) {
  require(!opt.ks.empty(), ErrorCode::InvalidArgument, "no k values");
  const auto rankings = read_rankings(opt.rankings);
  const auto queries = read_positions(opt.query_positions);
  std::unordered_map<std::string, GeoPoint> db;
  for (const auto& e : io::read_manifest(opt.manifest, false)) db[e.id] = e.position;
  const auto recalls = recall_at_k(rankings, queries, db, opt.ks, opt.threshold_m);

  io::CsvWriter metrics({"k", "recall"});
  for (const auto& r : recalls) metrics.row({std::to_string(r.k), io::format_double(r.recall)});
  metrics.save(opt.out);

  if (!opt.flags_out.empty()) {
    std::vector<std::string> header{"query_id", "first_success_rank"};
    for (auto k : opt.ks) header.push_back("success_at_" + std::to_string(k));
    io::CsvWriter flags(header);
    for (const auto& r : rankings) {
      const GeoPoint& qp = queries.at(r.query_id);
      std::size_t first = 0;
      for (std::size_t i = 0; i < r.ranked_ids.size() && first == 0; ++i)
        if (geo_distance(qp, db.at(r.ranked_ids[i])) <= opt.threshold_m) first = i + 1;
      std::vector<std::string> row{r.query_id, std::to_string(first)};
      for (auto k : opt.ks) row.push_back(first != 0 && first <= k ? "1" : "0");
      flags.row(row);
    }
    flags.save(opt.flags_out);
  }
  return recalls;
}

// ---- loss --------------------------------------------------------------------

struct LossOptions {
  fs::path matrix;  // B rows of B comma-separated distances
  double alpha = kDefaultAlpha;
  fs::path grad_out;  // q,s,grad
};

struct LossResult {
  double loss;
  DistanceMatrix grad;
};

inline DistanceMatrix read_distance_matrix(const fs::path& path) {
  const auto lines = io::content_lines(io::read_file(path));
  const std::size_t b = lines.size();
  DistanceMatrix d(b);
  for (std::size_t q = 0; q < b; ++q) {
    const std::string where = path.string() + ":" + std::to_string(lines[q].first);
    const auto f = io::split(lines[q].second);
    require(f.size() == b, ErrorCode::DimensionMismatch, where + ": matrix must be square");
    for (std::size_t s = 0; s < b; ++s) d(q, s) = io::parse_double(f[s], where);
  }
  d.validate();
  return d;
}

inline LossResult cmd_loss(const LossOptions& opt) {
  require(opt.alpha > 0, ErrorCode::InvalidArgument, "alpha must be positive");
  const DistanceMatrix d = read_distance_matrix(opt.matrix);
  LossResult r{batch_loss(d, opt.alpha), batch_loss_grad(d, opt.alpha)};
  if (!opt.grad_out.empty()) {
    io::CsvWriter csv({"q", "s", "grad"});
    for (std::size_t q = 0; q < d.batch(); ++q)
      for (std::size_t s = 0; s < d.batch(); ++s)
        csv.row({std::to_string(q), std::to_string(s), io::format_double(r.grad(q, s))});
    csv.save(opt.grad_out);
  }
  return r;
}

}  // namespace cvl::cmd
