#include "coop/experiment.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include "coop/error.hpp"
#include "coop/rng.hpp"

namespace coop {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* const kCsvColumns[] = {
    "point",        "sigma_t",       "sigma_r",         "lag",         "n_agents",          "seed",
    "scene",        "scene_seed",    "status",          "eval_ticks",  "num_gt",            "num_pred",
    "ap50",         "ap70",          "recall50",        "stage1_bytes", "mask_bytes",       "stage2_bytes",
    "detection_bytes", "comm_bytes", "comm_mb_per_frame", "comm_mb_per_scene", "align_loss", "flops"};

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename Int>
std::string num_int(Int v) {
  return std::to_string(v);
}

// RFC 4180 quoting for free-text fields.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Stat stat_of(const std::vector<double>& values) {
  Stat s;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    s.mean += v;
    ++s.count;
  }
  if (s.count == 0) return {kNaN, kNaN, 0};
  s.mean /= s.count;
  double ss = 0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  s.std = s.count > 1 ? std::sqrt(ss / (s.count - 1)) : 0.0;
  return s;
}

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

json point_json(const SweepPoint& p) {
  return {{"index", p.index}, {"sigma_t", p.noise.sigma_t}, {"sigma_r", p.noise.sigma_r}, {"lag", p.lag},
          {"n_agents", p.n_agents}};
}

SceneRow error_row(const SweepPoint& point, std::uint64_t seed, int scene, std::uint64_t sseed, const std::string& what) {
  SceneRow row;
  row.point = point;
  row.seed = seed;
  row.scene = scene;
  row.scene_seed = sseed;
  row.status = "error: " + what;
  row.ap50 = row.ap70 = row.recall50 = row.align_loss = kNaN;
  row.num_gt = row.num_pred = kNaN;
  row.comm_mb_per_frame = row.comm_mb_per_scene = kNaN;
  return row;
}

// Runs fn(i) for i in [0, n) on `threads` workers. Results are written by
// index, so the outcome never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<SweepPoint> sweep_points(const RunConfig& cfg) {
  std::vector<int> agents = cfg.agents;
  if (agents.empty()) agents.push_back(cfg.scenario.n_agents);
  std::vector<SweepPoint> points;
  for (const auto& noise : cfg.noise)
    for (int lag : cfg.latency)
      for (int n : agents) points.push_back({int(points.size()), noise, lag, n});
  return points;
}

std::uint64_t scene_seed(std::uint64_t seed, int scene) { return derive_seed(seed, {tag(Stream::kScene), std::uint64_t(scene)}); }

SceneRow run_scene(const RunConfig& cfg, const Models& models, const Scenario& sc, const SweepPoint& point) {
  SceneRow row;
  row.point = point;
  row.scene_seed = sc.seed;
  double gt = 0, pred = 0, ap50 = 0, ap70 = 0, rec = 0, align = 0;
  int scored = 0, aligned = 0;
  const int first = cfg.scenario.ticks - cfg.scenario.eval_ticks;
  for (int t = first; t < cfg.scenario.ticks; ++t) {
    TickOptions opt;
    opt.tick = t;
    opt.n_agents = point.n_agents;
    opt.noise = point.noise;
    opt.lag = point.lag;
    const TickResult r = run_tick(sc, opt, cfg.pipeline, models);
    ++row.evaluated_ticks;
    gt += r.report.num_gt;
    pred += r.report.num_pred;
    if (!r.report.empty_ground_truth) {
      ap50 += r.report.ap50;
      ap70 += r.report.ap70;
      rec += r.report.recall50;
      ++scored;
    }
    if (r.align_loss) {
      align += *r.align_loss;
      ++aligned;
    }
    row.stage1_bytes += r.ledger.received_by(0, CommStage::kStage1);
    row.stage2_bytes += r.ledger.received_by(0, CommStage::kStage2);
    row.detection_bytes += r.ledger.received_by(0, CommStage::kDetections);
    for (const auto& [key, bytes] : r.ledger.entries())
      if (std::get<2>(key) == 0 && std::get<3>(key) == CommStage::kMask) row.mask_bytes += bytes;
    row.flops = std::max(row.flops, r.report.flops);
  }
  const double ticks = row.evaluated_ticks;
  row.num_gt = gt / ticks;
  row.num_pred = pred / ticks;
  row.ap50 = scored ? ap50 / scored : kNaN;
  row.ap70 = scored ? ap70 / scored : kNaN;
  row.recall50 = scored ? rec / scored : kNaN;
  row.align_loss = aligned ? align / aligned : kNaN;
  row.comm_bytes = row.stage1_bytes + row.stage2_bytes + row.detection_bytes;
  row.comm_mb_per_scene = double(row.comm_bytes) / 1e6;
  row.comm_mb_per_frame = row.comm_mb_per_scene / ticks;
  return row;
}

std::vector<PointSummary> summarize(const std::vector<SweepPoint>& points, const std::vector<SceneRow>& rows) {
  std::vector<PointSummary> out;
  for (const auto& p : points) {
    PointSummary s;
    s.point = p;
    std::vector<double> ap50, ap70, rec, comm, s2, mb, align;
    for (const auto& r : rows) {
      if (r.point.index != p.index) continue;
      ++s.scenes;
      if (!r.ok()) {
        if (s.status == "ok") s.status = r.status;
        continue;
      }
      ap50.push_back(r.ap50);
      ap70.push_back(r.ap70);
      rec.push_back(r.recall50);
      comm.push_back(double(r.comm_bytes));
      s2.push_back(double(r.stage2_bytes));
      mb.push_back(r.comm_mb_per_frame);
      align.push_back(r.align_loss);
    }
    if (s.status != "ok") {
      // A failure anywhere aborts the whole point.
      ap50.clear(), ap70.clear(), rec.clear(), comm.clear(), s2.clear(), mb.clear(), align.clear();
    }
    s.ap50 = stat_of(ap50);
    s.ap70 = stat_of(ap70);
    s.recall50 = stat_of(rec);
    s.comm_bytes = stat_of(comm);
    s.stage2_bytes = stat_of(s2);
    s.comm_mb_per_frame = stat_of(mb);
    s.align_loss = stat_of(align);
    out.push_back(s);
  }
  return out;
}

RunRecord run_experiment(const RunConfig& cfg, int threads) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = cfg;
  rec.config_hash = config_hash(cfg);
  const Models models = Models::build(cfg.pipeline);
  const auto points = sweep_points(cfg);
  const std::size_t n_seeds = cfg.seeds.size(), n_scenes = std::size_t(std::max(0, cfg.scenes_per_seed));

  // Worlds are shared by every sweep point.
  std::vector<std::unique_ptr<Scenario>> worlds(n_seeds * n_scenes);
  std::vector<std::string> world_errors(worlds.size());
  parallel_for(worlds.size(), threads, [&](std::size_t i) {
    const std::uint64_t s = scene_seed(cfg.seeds[i / n_scenes], int(i % n_scenes));
    try {
      worlds[i] = std::make_unique<Scenario>(generate_scenario(s, cfg.generated_agents(), cfg.scenario.n_objects,
                                                               cfg.scenario.ticks, cfg.scenario.area,
                                                               cfg.scenario.options));
    } catch (const std::exception& e) {
      world_errors[i] = e.what();
    }
  });

  rec.rows.resize(points.size() * worlds.size());
  parallel_for(rec.rows.size(), threads, [&](std::size_t i) {
    const SweepPoint& p = points[i / worlds.size()];
    const std::size_t w = i % worlds.size();
    const std::uint64_t seed = cfg.seeds[w / n_scenes];
    const int scene = int(w % n_scenes);
    const std::uint64_t sseed = scene_seed(seed, scene);
    if (!worlds[w]) {
      rec.rows[i] = error_row(p, seed, scene, sseed, world_errors[w]);
      return;
    }
    try {
      rec.rows[i] = run_scene(cfg, models, *worlds[w], p);
      rec.rows[i].seed = seed;
      rec.rows[i].scene = scene;
    } catch (const std::exception& e) {
      rec.rows[i] = error_row(p, seed, scene, sseed, e.what());
    }
  });
  rec.points = summarize(points, rec.rows);
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::string to_csv(const RunRecord& record) {
  std::ostringstream out;
  bool first = true;
  for (const char* c : kCsvColumns) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  out << "\n";
  for (const auto& r : record.rows) {
    out << r.point.index << ',' << num(r.point.noise.sigma_t) << ',' << num(r.point.noise.sigma_r) << ','
        << r.point.lag << ',' << r.point.n_agents << ',' << num_int(r.seed) << ',' << r.scene << ','
        << num_int(r.scene_seed) << ',' << csv_field(r.status) << ',' << r.evaluated_ticks << ',' << num(r.num_gt)
        << ',' << num(r.num_pred) << ',' << num(r.ap50) << ',' << num(r.ap70) << ',' << num(r.recall50) << ','
        << r.stage1_bytes << ',' << r.mask_bytes << ',' << r.stage2_bytes << ',' << r.detection_bytes << ','
        << r.comm_bytes << ',' << num(r.comm_mb_per_frame) << ',' << num(r.comm_mb_per_scene) << ','
        << num(r.align_loss) << ',' << r.flops << "\n";
  }
  return out.str();
}

json to_json(const RunRecord& record) {
  json points = json::array();
  for (const auto& s : record.points) {
    json p = point_json(s.point);
    p["status"] = s.status;
    p["scenes"] = s.scenes;
    p["ap50"] = stat_json(s.ap50);
    p["ap70"] = stat_json(s.ap70);
    p["recall50"] = stat_json(s.recall50);
    p["comm_bytes"] = stat_json(s.comm_bytes);
    p["stage2_bytes"] = stat_json(s.stage2_bytes);
    p["comm_mb_per_frame"] = stat_json(s.comm_mb_per_frame);
    p["align_loss"] = stat_json(s.align_loss);
    points.push_back(p);
  }
  json rows = json::array();
  for (const auto& r : record.rows) {
    rows.push_back({{"point", r.point.index},
                    {"seed", r.seed},
                    {"scene", r.scene},
                    {"scene_seed", r.scene_seed},
                    {"status", r.status},
                    {"eval_ticks", r.evaluated_ticks},
                    {"num_gt", r.num_gt},
                    {"num_pred", r.num_pred},
                    {"ap50", r.ap50},
                    {"ap70", r.ap70},
                    {"recall50", r.recall50},
                    {"stage1_bytes", r.stage1_bytes},
                    {"mask_bytes", r.mask_bytes},
                    {"stage2_bytes", r.stage2_bytes},
                    {"detection_bytes", r.detection_bytes},
                    {"comm_bytes", r.comm_bytes},
                    {"comm_mb_per_frame", r.comm_mb_per_frame},
                    {"comm_mb_per_scene", r.comm_mb_per_scene},
                    {"align_loss", r.align_loss},
                    {"flops", r.flops}});
  }
  return {{"config", to_json(record.config)},
          {"config_hash", record.config_hash},
          {"points", points},
          {"rows", rows}};
}

std::string format_json(const json& doc) { return doc.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<std::string> emit_results(const RunRecord& record, const std::string& dir, OutputFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  std::vector<std::string> written;
  const std::string base = (std::filesystem::path(dir) / record.config.name).string();
  if (format != OutputFormat::kJson) {
    write_text(base + ".csv", to_csv(record));
    written.push_back(base + ".csv");
  }
  if (format != OutputFormat::kCsv) {
    write_text(base + ".json", format_json(to_json(record)));
    written.push_back(base + ".json");
  }
  return written;
}

}  // namespace coop
