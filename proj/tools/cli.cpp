// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "fieldfuse/distill.hpp"
#include "fieldfuse/embed.hpp"
#include "fieldfuse/error.hpp"
#include "fieldfuse/eval.hpp"
#include "fieldfuse/fusion.hpp"
#include "fieldfuse/io.hpp"
#include "fieldfuse/query.hpp"
#include "fieldfuse/server.hpp"

namespace fieldfuse::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path counts_path_for(const fs::path& features, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  fs::path p = features;
  p.replace_extension(".counts.feat");
  return p;
}

std::vector<std::int32_t> labels_from(const FeatureMatrix& m, const std::string& what) {
  if (m.cols() != 1) throw Error(ErrorCode::ShapeMismatch, what + " must be [M, 1]");
  std::vector<std::int32_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const float v = m(i, 0);
    if (!std::isfinite(v) || v != std::floor(v)) throw Error(ErrorCode::InvalidArgument, what + " holds a non-integer label");
    out[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

template <typename T>
FeatureMatrix column(const std::vector<T>& values) {
  FeatureMatrix m(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(i, 0) = static_cast<float>(values[i]);
  return m;
}

FusedFeatureCloud load_fused(const fs::path& features, const std::string& counts) {
  FusedFeatureCloud fused;
  fused.features = io::load_matrix(features);
  const auto c = labels_from(io::load_matrix(counts_path_for(features, counts)), "view counts");
  if (c.size() != fused.features.rows()) throw Error(ErrorCode::ShapeMismatch, "view counts and features differ in rows");
  for (auto v : c) {
    if (v < 0) throw Error(ErrorCode::InvalidArgument, "negative view count");
    fused.view_count.push_back(static_cast<std::uint32_t>(v));
  }
  return fused;
}

std::vector<float> query_vector(const Embedder& embedder, const std::string& text, const std::string& embedding_path) {
  if (text.empty() == embedding_path.empty()) throw Error(ErrorCode::InvalidArgument, "give exactly one of --text or --embedding");
  if (!text.empty()) {
    const std::vector<std::string> texts{text};
    const auto set = embedder.embed(texts);
    const auto row = set.embeddings.row(0);
    return {row.begin(), row.end()};
  }
  return io::load_feat(embedding_path).data;
}

void write_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  const auto text = j.dump(2);
  io::write_file(out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

PoolConfig parse_pool(const std::string& name, std::uint64_t seed) {
  if (name == "average") return {PoolKind::Average, seed};
  if (name == "random") return {PoolKind::Random, seed};
  if (name == "median") return {PoolKind::Median, seed};
  throw Error(ErrorCode::InvalidArgument, "pool must be average, random or median");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"fieldfuse: open-vocabulary 3D scene queries over fused and distilled point features", "fieldfuse"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse per-pixel features onto the point cloud");
  std::string scene_path, pool_name = "average", fuse_out, fuse_counts;
  bool no_occlusion = false;
  fuse_cmd->add_option("--scene", scene_path, "Scene manifest JSON")->required();
  fuse_cmd->add_option("--pool", pool_name, "average | random | median")->capture_default_str();
  fuse_cmd->add_option("--out", fuse_out, "Fused features .feat [M, C]")->required();
  fuse_cmd->add_option("--counts", fuse_counts, "View counts .feat [M, 1] (default: <out>.counts.feat)");
  fuse_cmd->add_flag("--no-occlusion", no_occlusion, "Skip the depth test even when depth is available");
  fuse_cmd->add_option("--seed", seed, "Seed for random pooling");

  // distill
  auto* distill_cmd = app.add_subcommand("distill", "Train a 3D feature field from fused features");
  std::string d_fused, d_counts, d_cloud, d_out, d_trace;
  TrainConfig cfg;
  distill_cmd->add_option("--fused", d_fused, "Fused features .feat")->required();
  distill_cmd->add_option("--counts", d_counts, "View counts .feat (default: <fused>.counts.feat)");
  distill_cmd->add_option("--cloud", d_cloud, "Point cloud PLY")->required();
  distill_cmd->add_option("--out", d_out, "Output field file")->required();
  distill_cmd->add_option("--levels", cfg.levels)->capture_default_str();
  distill_cmd->add_option("--base-voxel", cfg.base_voxel, "Coarsest voxel size in meters (0 = auto)")->capture_default_str();
  distill_cmd->add_option("--iters", cfg.iters)->capture_default_str();
  distill_cmd->add_option("--batch", cfg.batch_points)->capture_default_str();
  distill_cmd->add_option("--lr", cfg.learning_rate)->capture_default_str();
  distill_cmd->add_option("--loss-trace", d_trace, "Write per-step batch loss, one value per line");
  distill_cmd->add_option("--seed", seed, "Training seed");

  // shared by segment / ensemble
  std::string labels_path, embedder_spec = "toy:64:0";
  bool engineer = false;

  auto* ensemble_cmd = app.add_subcommand("ensemble", "Pick 2D or 3D feature per point against a label set");
  std::string e_fused, e_counts, e_field, e_cloud, e_out, e_source;
  ensemble_cmd->add_option("--fused", e_fused)->required();
  ensemble_cmd->add_option("--counts", e_counts);
  ensemble_cmd->add_option("--field", e_field)->required();
  ensemble_cmd->add_option("--cloud", e_cloud)->required();
  ensemble_cmd->add_option("--labels", labels_path, "Label file, one per line")->required();
  ensemble_cmd->add_option("--embedder", embedder_spec, "toy:<dim>:<seed> or table:<json>")->capture_default_str();
  ensemble_cmd->add_flag("--engineer-prompts", engineer, "Embed 'a <label> in a scene'");
  ensemble_cmd->add_option("--out", e_out, "Ensemble features .feat [M, C]")->required();
  ensemble_cmd->add_option("--source-out", e_source, "Per-point source .feat [M, 1]: 0=2D, 1=3D, 2=none");

  auto* segment_cmd = app.add_subcommand("segment", "Zero-shot labels by argmax cosine");
  std::string s_features, s_out, s_conf;
  segment_cmd->add_option("--features", s_features)->required();
  segment_cmd->add_option("--labels", labels_path)->required();
  segment_cmd->add_option("--embedder", embedder_spec)->capture_default_str();
  segment_cmd->add_flag("--engineer-prompts", engineer);
  segment_cmd->add_option("--out", s_out, "Labels .feat [M, 1] (-1 = no feature)")->required();
  segment_cmd->add_option("--confidence-out", s_conf);

  auto* query_cmd = app.add_subcommand("query", "Per-point similarity heatmap for one text or embedding");
  std::string q_features, q_text, q_embedding, q_out;
  query_cmd->add_option("--features", q_features)->required();
  query_cmd->add_option("--text", q_text);
  query_cmd->add_option("--embedding", q_embedding, "Query vector .feat [C]");
  query_cmd->add_option("--embedder", embedder_spec)->capture_default_str();
  query_cmd->add_option("--out", q_out, "Scores .feat [M, 1]")->required();

  auto* retrieve_cmd = app.add_subcommand("retrieve", "Ranked search, one hit per region");
  std::string r_features, r_cloud, r_text, r_embedding, r_out;
  std::size_t top_k = 10;
  retrieve_cmd->add_option("--features", r_features)->required();
  retrieve_cmd->add_option("--cloud", r_cloud, "PLY carrying region_id")->required();
  retrieve_cmd->add_option("--text", r_text);
  retrieve_cmd->add_option("--embedding", r_embedding);
  retrieve_cmd->add_option("--embedder", embedder_spec)->capture_default_str();
  retrieve_cmd->add_option("--top-k", top_k)->capture_default_str();
  retrieve_cmd->add_option("--out", r_out, "JSON output (default stdout)");

  auto* eval_cmd = app.add_subcommand("eval", "mIoU / mAcc against ground truth");
  std::string ev_gt, ev_pred, ev_map, ev_out;
  std::size_t num_classes = 0, group_size = 0;
  eval_cmd->add_option("--gt", ev_gt, "PLY with gt_label, or labels .feat [M, 1]")->required();
  eval_cmd->add_option("--pred", ev_pred, "Predicted labels .feat [M, 1]")->required();
  eval_cmd->add_option("--labelmap", ev_map, "Map prompt predictions to target classes");
  eval_cmd->add_option("--num-classes", num_classes, "Required without --labelmap");
  eval_cmd->add_option("--group-size", group_size, "Also report frequency-grouped mAcc");
  eval_cmd->add_option("--out", ev_out, "JSON output (default stdout)");

  auto* serve_cmd = app.add_subcommand("serve", "HTTP/JSON query service");
  std::vector<std::string> scene_specs;
  std::string host = "127.0.0.1";
  int port = 0;
  serve_cmd->add_option("--scene", scene_specs, "id=features.feat,cloud.ply (repeatable)")->required();
  serve_cmd->add_option("--embedder", embedder_spec)->capture_default_str();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port, "Port (default: $FIELDFUSE_PORT, else 8080)");

  auto* embed_cmd = app.add_subcommand("embed", "Inspect prompt embeddings");
  std::string table_path, em_out;
  std::vector<std::string> texts;
  embed_cmd->add_option("--table", table_path, "Embedding table JSON");
  embed_cmd->add_option("--embedder", embedder_spec)->capture_default_str();
  embed_cmd->add_option("--texts", texts)->required();
  embed_cmd->add_flag("--engineer-prompts", engineer);
  embed_cmd->add_option("--out", em_out, "Write an embedding table JSON (+ .feat) instead of printing");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (fuse_cmd->parsed()) {
      const fs::path manifest_path = scene_path;
      const auto manifest = io::load_manifest(manifest_path);
      const auto scene = load_scene(manifest, manifest_path.parent_path());
      OcclusionConfig occ{manifest.occlusion_sigma_ratio,
                          manifest.dataset_mode == DatasetMode::WithDepth && !no_occlusion};
      const auto fused = fuse(scene, occ, parse_pool(pool_name, seed));
      io::save_matrix(fuse_out, fused.features);
      io::save_matrix(counts_path_for(fuse_out, fuse_counts), column(fused.view_count));
      std::size_t seen = 0;
      for (auto c : fused.view_count) seen += c > 0;
      std::cerr << "fused " << fused.size() << " points (" << seen << " seen), C=" << fused.dim() << "\n";
    } else if (distill_cmd->parsed()) {
      const auto cloud = io::load_ply(d_cloud);
      const auto fused = load_fused(d_fused, d_counts);
      cfg.seed = seed;
      const auto result = train(cloud, fused, cfg);
      save_field(d_out, result.field);
      if (!d_trace.empty()) {
        std::ofstream trace(d_trace);
        if (!trace) throw Error(ErrorCode::IoError, "cannot write " + d_trace);
        trace.precision(17);
        for (double l : result.batch_loss) trace << l << "\n";
      }
      std::cerr << "trained " << result.field.total_cells() << " cells; final batch loss "
                << (result.batch_loss.empty() ? 0.0 : result.batch_loss.back()) << "\n";
    } else if (ensemble_cmd->parsed()) {
      const auto embedder = Embedder::parse(embedder_spec);
      const auto prompts = embedder.embed_labels(io::load_lines(labels_path), engineer);
      const auto cloud = io::load_ply(e_cloud);
      const auto result = ensemble(load_fused(e_fused, e_counts), load_field(e_field), cloud, prompts);
      io::save_matrix(e_out, result.features);
      if (!e_source.empty()) {
        std::vector<int> src;
        for (auto s : result.source) src.push_back(static_cast<int>(s));
        io::save_matrix(e_source, column(src));
      }
    } else if (segment_cmd->parsed()) {
      const auto embedder = Embedder::parse(embedder_spec);
      const auto prompts = embedder.embed_labels(io::load_lines(labels_path), engineer);
      const auto seg = segment(io::load_matrix(s_features), prompts);
      io::save_matrix(s_out, column(seg.labels));
      if (!s_conf.empty()) io::save_matrix(s_conf, column(seg.confidence));
    } else if (query_cmd->parsed()) {
      const auto embedder = Embedder::parse(embedder_spec);
      const auto features = io::load_matrix(q_features);
      io::save_matrix(q_out, column(heatmap(features, query_vector(embedder, q_text, q_embedding))));
    } else if (retrieve_cmd->parsed()) {
      const auto embedder = Embedder::parse(embedder_spec);
      const auto cloud = io::load_ply(r_cloud);
      if (!cloud.region_id) throw Error(ErrorCode::NoRegions, r_cloud + " has no region_id property");
      const auto hits =
          retrieve(io::load_matrix(r_features), *cloud.region_id, query_vector(embedder, r_text, r_embedding), top_k);
      json out = json::array();
      for (const auto& h : hits) out.push_back({{"region_id", h.region_id}, {"point_index", h.point_index}, {"score", h.score}});
      write_json(out, r_out);
    } else if (eval_cmd->parsed()) {
      std::vector<std::int32_t> gt;
      if (fs::path(ev_gt).extension() == ".ply") {
        const auto cloud = io::load_ply(ev_gt);
        if (!cloud.gt_label) throw Error(ErrorCode::InvalidArgument, ev_gt + " has no gt_label property");
        gt = *cloud.gt_label;
      } else {
        gt = labels_from(io::load_matrix(ev_gt), "ground truth");
      }
      auto pred = labels_from(io::load_matrix(ev_pred), "predictions");
      std::vector<std::string> class_names;
      if (!ev_map.empty()) {
        const auto map = load_label_map(ev_map);
        pred = remap(pred, map);
        class_names = map.target_classes();
        num_classes = class_names.size();
      }
      if (num_classes == 0) throw Error(ErrorCode::InvalidArgument, "--num-classes is required without --labelmap");
      const auto conf = confusion(gt, pred, num_classes);
      const auto metrics = miou_macc(conf);
      json out{{"miou", number_or_null(metrics.miou)}, {"macc", number_or_null(metrics.macc)}};
      json per_class = json::array();
      for (std::size_t c = 0; c < num_classes; ++c) {
        json entry{{"class", c}, {"iou", number_or_null(metrics.iou[c])}, {"acc", number_or_null(metrics.acc[c])}};
        if (!class_names.empty()) entry["name"] = class_names[c];
        per_class.push_back(entry);
      }
      out["per_class"] = per_class;
      if (group_size > 0) {
        std::vector<std::uint64_t> freq(num_classes, 0);
        for (std::size_t c = 0; c < num_classes; ++c)
          for (std::size_t j = 0; j < num_classes; ++j) freq[c] += conf(c, j);
        json groups = json::array();
        for (double g : grouped_macc(conf, freq, group_size)) groups.push_back(number_or_null(g));
        out["grouped_macc"] = groups;
      }
      write_json(out, ev_out);
    } else if (serve_cmd->parsed()) {
      if (port == 0) {
        const char* env = std::getenv("FIELDFUSE_PORT");
        port = env ? std::atoi(env) : 8080;
      }
      if (port <= 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range");
      const auto embedder = Embedder::parse(embedder_spec);
      std::vector<SceneIndex> scenes;
      for (const auto& spec : scene_specs) {
        const auto eq = spec.find('=');
        const auto comma = spec.find(',', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || comma == std::string::npos)
          throw Error(ErrorCode::InvalidArgument, "--scene must be id=features.feat,cloud.ply");
        scenes.push_back({spec.substr(0, eq), io::load_ply(spec.substr(comma + 1)),
                          io::load_matrix(spec.substr(eq + 1, comma - eq - 1)), embedder});
      }
      QueryService service(std::move(scenes));
      std::cerr << "serving " << service.scenes().size() << " scene(s) on " << host << ":" << port << "\n";
      service.listen(host, port);
    } else if (embed_cmd->parsed()) {
      const auto embedder = table_path.empty() ? Embedder::parse(embedder_spec) : Embedder::table(fs::path(table_path));
      const auto set = embedder.embed_labels(texts, engineer);
      if (!em_out.empty()) {
        io::save_prompt_table(em_out, set);
      } else {
        json out{{"embedder", embedder.describe()}, {"prompts", set.prompts}, {"embeddings", json::array()}};
        for (std::size_t n = 0; n < set.size(); ++n) {
          const auto row = set.embeddings.row(n);
          out["embeddings"].push_back(std::vector<float>(row.begin(), row.end()));
        }
        std::cout << out.dump(2) << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::IoError ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace fieldfuse::cli
