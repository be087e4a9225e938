// coopsim: command line front end for the cooperative perception simulator.
//
//   coopsim run <config.json> [--seed N] [--out-dir D] [--threads T] [--set key.path=value]...
//   coopsim sweep <table1|table3|scaling|ablation> [config.json] [...]
//   coopsim dump-trace <config.json> --out trace.jsonl [--grids DIR]
//   coopsim flops [config.json]
//   coopsim validate-config <config.json>
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coop/config.hpp"
#include "coop/error.hpp"
#include "coop/experiment.hpp"
#include "coop/grid_io.hpp"

using nlohmann::json;
using namespace coop;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> scenes;
  std::string out_dir;
  std::string name;
  std::string format = "both";
  int threads = 1;
  std::vector<std::string> sets;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Replace the seeds list with this single seed");
    cmd->add_option("--scenes", scenes, "Scenes per seed");
    cmd->add_option("--out-dir", out_dir, "Output directory");
    cmd->add_option("--name", name, "Output file stem");
    cmd->add_option("--format", format, "csv, json or both")->check(CLI::IsMember({"csv", "json", "both"}));
    cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--set", sets, "Override a config field, e.g. --set protocol.tau=0.1 (repeatable)");
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// key.path=value; the value is parsed as JSON and falls back to a plain string.
void apply_set(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: empty key in '" + path + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + path + "' does not name an object field");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig build_config(json doc, const Common& c) {
  for (const auto& s : c.sets) apply_set(doc, s);
  if (c.seed) doc["seeds"] = {*c.seed};
  if (c.scenes) doc["scenes_per_seed"] = *c.scenes;
  if (!c.out_dir.empty()) doc["output"]["dir"] = c.out_dir;
  if (!c.name.empty()) doc["output"]["name"] = c.name;
  return config_from_json(doc);
}

OutputFormat output_format(const std::string& s) {
  if (s == "csv") return OutputFormat::kCsv;
  if (s == "json") return OutputFormat::kJson;
  return OutputFormat::kBoth;
}

void print_summary(const RunRecord& rec) {
  std::cout << "config " << rec.config_hash << ", " << rec.rows.size() << " rows, " << rec.wall_clock_seconds
            << " s\n";
  for (const auto& p : rec.points) {
    std::cout << "  point " << p.point.index << " noise " << p.point.noise.sigma_t << "/" << p.point.noise.sigma_r
              << " lag " << p.point.lag << " agents " << p.point.n_agents << ": ";
    if (p.status != "ok") {
      std::cout << p.status << "\n";
      continue;
    }
    std::cout << "AP50 " << p.ap50.mean << " AP70 " << p.ap70.mean << " recall " << p.recall50.mean << " comm "
              << p.comm_mb_per_frame.mean << " MB/frame\n";
  }
}

int execute(const RunConfig& cfg, const Common& c) {
  const RunRecord rec = run_experiment(cfg, c.threads);
  print_summary(rec);
  for (const auto& path : emit_results(rec, cfg.out_dir, output_format(c.format))) std::cout << "wrote " << path << "\n";
  for (const auto& p : rec.points)
    if (p.status != "ok") return kExitRuntime;
  return 0;
}

// Preset sweeps, applied on top of the base document.
std::vector<std::pair<std::string, json>> preset(const std::string& name) {
  if (name == "table1")
    return {{"table1", {{"sweep", {{"noise", {{0.0, 0.0}, {0.2, 0.2}, {0.4, 0.4}, {0.6, 0.6}}}}}}}};
  if (name == "table3")
    return {{"table3",
             {{"scenario", {{"speed_min", 1.0}, {"speed_max", 2.0}, {"ticks", 5}, {"eval_ticks", 1}}},
              {"sweep", {{"latency", {0, 1, 2, 3, 4}}}}}}};
  if (name == "scaling") return {{"scaling", {{"sweep", {{"agents", {2, 3, 4, 5, 6, 7, 8}}}}}}};
  if (name == "ablation") {
    const json noise = {{"sweep", {{"noise", {{0.0, 0.0}, {0.6, 0.6}}}}}};
    auto variant = [&](json branches, json protocol = json::object()) {
      json v = noise;
      v["branches"] = std::move(branches);
      if (!protocol.empty()) v["protocol"] = std::move(protocol);
      return v;
    };
    return {
        {"ablation_single", variant({{"cit", false}, {"lc", false}, {"pac", false}, {"final_fusion", false}})},
        {"ablation_cit_lc", variant({{"cit", true}, {"lc", true}, {"pac", false}, {"final_fusion", false}})},
        {"ablation_pac", variant({{"cit", false}, {"lc", false}, {"pac", true}, {"final_fusion", false}})},
        {"ablation_full", variant({{"cit", true}, {"lc", true}, {"pac", true}, {"final_fusion", true}})},
        {"ablation_top2", variant({{"cit", true}}, {{"strategy", "topk"}, {"topk", 2}})},
        {"ablation_maxout", variant({{"cit", true}}, {{"strategy", "maxout"}})},
    };
  }
  throw ConfigError("unknown preset '" + name + "' (expected table1, table3, scaling or ablation)");
}

int cmd_sweep(const std::string& which, Common c) {
  const json base = c.config_path.empty() ? json::object() : read_json_file(c.config_path);
  int status = 0;
  const std::string name_override = c.name;
  for (auto& [name, patch] : preset(which)) {
    json doc = base;
    doc.merge_patch(patch);
    c.name = name_override.empty() ? name : name_override + "_" + name;
    std::cout << "== " << c.name << "\n";
    status = std::max(status, execute(build_config(doc, c), c));
  }
  return status;
}

int cmd_dump_trace(const Common& c, int tick, int scene, int point_index, const std::string& out,
                   const std::string& grids) {
  const RunConfig cfg = build_config(read_json_file(c.config_path), c);
  const auto points = sweep_points(cfg);
  if (points.empty()) throw ConfigError("the sweep is empty");
  if (point_index < 0 || point_index >= int(points.size()))
    throw ConfigError("--point must lie in [0, " + std::to_string(points.size() - 1) + "]");
  const SweepPoint& p = points[std::size_t(point_index)];
  const int t = tick < 0 ? cfg.scenario.ticks - 1 : tick;
  if (t < p.lag || t >= cfg.scenario.ticks) throw ConfigError("--tick must lie in [lag, ticks - 1]");

  const Scenario sc = generate_scenario(scene_seed(cfg.seeds.front(), scene), cfg.generated_agents(),
                                        cfg.scenario.n_objects, cfg.scenario.ticks, cfg.scenario.area,
                                        cfg.scenario.options);
  const Models models = Models::build(cfg.pipeline);
  TickOptions opt;
  opt.tick = t;
  opt.n_agents = p.n_agents;
  opt.noise = p.noise;
  opt.lag = p.lag;
  const TickResult r = run_tick(sc, opt, cfg.pipeline, models);

  std::string lines;
  for (const auto& rec : r.trace) lines += rec.dump() + "\n";
  write_text(out, lines);
  std::cout << "wrote " << r.trace.size() << " messages to " << out << "\n";

  if (!grids.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(grids, ec);
    if (ec) throw IoError("cannot create '" + grids + "': " + ec.message());
    auto save = [&](const std::string& stem, const Grid& g) {
      const std::string path = (std::filesystem::path(grids) / (stem + ".bevg")).string();
      save_grid(path, g);
      std::cout << "wrote " << path << "\n";
    };
    if (r.lc) {
      save(std::string("f_out"), r.lc->fused_feature);
      save(std::string("gate"), r.lc->gate);
    }
    if (r.teacher) save("teacher", *r.teacher);
    for (std::size_t i = 0; i < r.corrections.size(); ++i) {
      const int id = r.collaborators[i].agent_id;
      save("attention_" + std::to_string(id), r.corrections[i].attention);
      save("offsets_" + std::to_string(id), r.corrections[i].offsets);
    }
  }
  std::cout << "AP50 " << r.report.ap50 << " recall " << r.report.recall50 << " (" << r.report.num_gt
            << " objects)\n";
  return 0;
}

int cmd_flops(const Common& c, int max_agents) {
  const RunConfig cfg = build_config(c.config_path.empty() ? json::object() : read_json_file(c.config_path), c);
  const Models models = Models::build(cfg.pipeline);
  const FlopCount base = count_flops(cfg.pipeline, models, 2);
  std::cout << "agents,cit,lc,pac,total,ratio_vs_2\n";
  for (int n = 1; n <= max_agents; ++n) {
    const FlopCount f = count_flops(cfg.pipeline, models, n);
    std::cout << n << "," << f.cit << "," << f.lc << "," << f.pac << "," << f.total() << ","
              << double(f.total()) / double(base.total()) << "\n";
  }
  return 0;
}

int cmd_validate(const std::string& path) {
  const auto errors = validate_config(read_json_file(path));
  if (errors.empty()) {
    std::cout << path << ": ok\n";
    return 0;
  }
  std::cerr << path << ": " << errors.size() << " problem(s)\n";
  for (const auto& e : errors) std::cerr << "  " << e << "\n";
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative BEV perception simulator"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "Run the sweep described by a config file");
  run->add_option("config", run_opts.config_path, "Config file")->required();
  run_opts.add_to(run);

  Common sweep_opts;
  std::string which;
  auto* sweep = app.add_subcommand("sweep", "Run a preset experiment grid");
  sweep->add_option("preset", which, "table1, table3, scaling or ablation")->required();
  sweep->add_option("config", sweep_opts.config_path, "Base config file");
  sweep_opts.add_to(sweep);

  Common trace_opts;
  int tick = -1, scene = 0, point = 0;
  std::string trace_out = "trace.jsonl", grids;
  auto* trace = app.add_subcommand("dump-trace", "Dump the messages of one tick as JSON lines");
  trace->add_option("config", trace_opts.config_path, "Config file")->required();
  trace->add_option("--tick", tick, "Tick to run (default: last)");
  trace->add_option("--scene", scene, "Scene index under the first seed");
  trace->add_option("--point", point, "Sweep point index");
  trace->add_option("--out", trace_out, "JSON lines output");
  trace->add_option("--grids", grids, "Directory for BEVG grid dumps");
  trace_opts.add_to(trace);

  Common flops_opts;
  int max_agents = 8;
  auto* flops = app.add_subcommand("flops", "Print the analytic fusion-core MAC count per agent count");
  flops->add_option("config", flops_opts.config_path, "Config file");
  flops->add_option("--max-agents", max_agents, "Largest agent count")->check(CLI::PositiveNumber);
  flops_opts.add_to(flops);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate-config", "Check a config file");
  validate->add_option("config", validate_path, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return execute(build_config(read_json_file(run_opts.config_path), run_opts), run_opts);
    if (*sweep) return cmd_sweep(which, sweep_opts);
    if (*trace) return cmd_dump_trace(trace_opts, tick, scene, point, trace_out, grids);
    if (*flops) return cmd_flops(flops_opts, max_agents);
    if (*validate) return cmd_validate(validate_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
