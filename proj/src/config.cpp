#include "coop/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "coop/error.hpp"

namespace coop {

using nlohmann::json;

namespace {

std::string head_mode_name(HeadMode m) { return m == HeadMode::kOracle ? "oracle" : "network"; }

// Walks one JSON object, reading known keys into fields and recording every
// problem instead of stopping at the first.
class Walker {
 public:
  Walker(const json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (obj_ && !obj_->is_object()) {
      fail("expected an object");
      obj_ = nullptr;
    }
  }

  Walker child(const char* key) {
    seen_.insert(key);
    return Walker(find(key), where(key), errors_);
  }

  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (v->is_number_integer() && v->get<long long>() >= INT32_MIN && v->get<long long>() <= INT32_MAX)
        out = v->get<int>();
      else
        fail(key, "expected an integer");
    }
  }
  void get(const char* key, Index& out) {
    int v = int(out);
    get(key, v);
    out = v;
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0))
        out = v->get<std::uint64_t>();
      else
        fail(key, "expected a non-negative integer");
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (v->is_number())
        out = v->get<double>();
      else
        fail(key, "expected a number");
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (v->is_boolean())
        out = v->get<bool>();
      else
        fail(key, "expected true or false");
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (v->is_string())
        out = v->get<std::string>();
      else
        fail(key, "expected a string");
    }
  }
  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse&& parse) {
    std::string s;
    const std::size_t before = errors_.size();
    get(key, s);
    if (s.empty() || errors_.size() != before) return;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }
  template <typename T>
  void get_list(const char* key, std::vector<T>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) {
        fail(key, "expected an array");
        return;
      }
      std::vector<T> items;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!(e.is_number_unsigned() || (e.is_number_integer() && e.get<long long>() >= 0))) {
            fail(key, "entry " + std::to_string(i) + " is not a non-negative integer");
            return;
          }
        } else {
          if (!e.is_number_integer()) {
            fail(key, "entry " + std::to_string(i) + " is not an integer");
            return;
          }
        }
        items.push_back(e.get<T>());
      }
      out = std::move(items);
    }
  }
  void get_noise(const char* key, std::vector<NoiseSpec>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) {
        fail(key, "expected an array of [sigma_t, sigma_r] pairs");
        return;
      }
      std::vector<NoiseSpec> items;
      for (const auto& e : *v) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
          fail(key, "expected an array of [sigma_t, sigma_r] pairs");
          return;
        }
        items.push_back({e[0].get<double>(), e[1].get<double>()});
      }
      out = std::move(items);
    }
  }

  void check(bool ok, const char* key, const std::string& msg) {
    if (!ok) fail(key, msg);
  }

  /// Reports keys that were never read.
  void finish() {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it)
      if (!seen_.count(it.key())) errors_.push_back(where(it.key()) + ": unknown key");
  }

 private:
  const json* find(const std::string& key) const {
    if (!obj_) return nullptr;
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }
  const json* take(const char* key) {
    seen_.insert(key);
    return find(key);
  }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void fail(const std::string& msg) { errors_.push_back((path_.empty() ? std::string("<root>") : path_) + ": " + msg); }
  void fail(const char* key, const std::string& msg) { errors_.push_back(where(key) + ": " + msg); }

  const json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

RunConfig parse(const json& doc, std::vector<std::string>& errors) {
  RunConfig cfg;
  Walker root(&doc, "", errors);
  if (!doc.is_object()) return cfg;

  {
    Walker s = root.child("scenario");
    ScenarioParams& p = cfg.scenario;
    ScenarioOptions& o = p.options;
    s.get("n_agents", p.n_agents);
    s.get("n_objects", p.n_objects);
    s.get("ticks", p.ticks);
    s.get("area", p.area);
    s.get("eval_ticks", p.eval_ticks);
    s.get("agent_radius", o.agent_radius);
    s.get("min_agent_separation", o.min_agent_separation);
    s.get("object_clearance", o.object_clearance);
    s.get("width_min", o.width_min);
    s.get("width_max", o.width_max);
    s.get("length_min", o.length_min);
    s.get("length_max", o.length_max);
    s.get("speed_min", o.speed_min);
    s.get("speed_max", o.speed_max);
    s.get("sensing_range", o.sensing_range);
    s.get("comm_range", o.comm_range);
    s.get("max_rounds", o.max_rounds);
    s.check(p.n_agents >= 1, "n_agents", "must be >= 1");
    s.check(p.n_objects >= 0, "n_objects", "must be >= 0");
    s.check(p.ticks >= 1, "ticks", "must be >= 1");
    s.check(p.area > 0.0, "area", "must be positive");
    s.check(p.eval_ticks >= 1 && p.eval_ticks <= p.ticks, "eval_ticks", "must lie in [1, ticks]");
    s.check(o.width_min > 0.0 && o.width_min <= o.width_max, "width_min", "need 0 < width_min <= width_max");
    s.check(o.length_min > 0.0 && o.length_min <= o.length_max, "length_min", "need 0 < length_min <= length_max");
    s.check(o.speed_min >= 0.0 && o.speed_min <= o.speed_max, "speed_min", "need 0 <= speed_min <= speed_max");
    s.check(o.sensing_range > 0.0, "sensing_range", "must be positive");
    s.check(o.comm_range > 0.0, "comm_range", "must be positive");
    s.check(o.min_agent_separation >= 0.0, "min_agent_separation", "must be >= 0");
    s.check(o.max_rounds >= 1, "max_rounds", "must be >= 1");
    s.finish();
  }
  PipelineConfig& pc = cfg.pipeline;
  {
    Walker g = root.child("grid");
    g.get("channels", pc.shape.channels);
    g.get("height", pc.shape.height);
    g.get("width", pc.shape.width);
    g.get("cell_size", pc.shape.cell_size);
    g.check(pc.shape.channels >= 3, "channels", "must be >= 3");
    g.check(pc.shape.height >= 1 && pc.shape.width >= 1, "height", "height and width must be >= 1");
    g.check(pc.shape.cell_size > 0.0, "cell_size", "must be positive");
    g.finish();
  }
  {
    Walker m = root.child("modes");
    auto head = [](const std::string& s) {
      if (s == "oracle") return HeadMode::kOracle;
      if (s == "network") return HeadMode::kNetwork;
      throw InvalidInput("unknown head mode '" + s + "' (expected oracle or network)");
    };
    m.get_enum("frontend", pc.frontend_mode, head);
    m.get_enum("feature_head", pc.lc_mode, head);
    m.get_enum("pac", pc.pac_mode, pac_mode_from_string);
    m.get_enum("attention", pc.attention, attention_mode_from_string);
    m.finish();
  }
  {
    Walker b = root.child("branches");
    b.get("cit", pc.cit);
    b.get("lc", pc.lc);
    b.get("align", pc.align);
    b.get("pac", pc.pac);
    b.get("final_fusion", pc.final_fusion);
    b.finish();
  }
  {
    Walker p = root.child("protocol");
    p.get_enum("strategy", pc.strategy, strategy_from_string);
    p.get("topk", pc.topk);
    p.get("tau", pc.tau);
    p.check(pc.topk >= 1, "topk", "must be >= 1");
    p.check(std::isfinite(pc.tau), "tau", "must be finite");
    p.finish();
  }
  {
    Walker d = root.child("detection");
    d.get("eps", pc.eps);
    d.get("score_threshold", pc.score_threshold);
    d.get("nms_threshold", pc.nms_threshold);
    d.check(pc.eps > 0.0 && pc.eps < 0.5, "eps", "must lie in (0, 0.5)");
    d.check(pc.score_threshold > 0.0 && pc.score_threshold < 1.0, "score_threshold", "must lie in (0, 1)");
    d.check(pc.nms_threshold > 0.0 && pc.nms_threshold < 1.0, "nms_threshold", "must lie in (0, 1)");
    d.finish();
  }
  {
    Walker l = root.child("lc");
    l.get("pool", pc.lc_config.pool);
    l.get("state_dim", pc.lc_config.state_dim);
    l.get("mlp_expansion", pc.lc_config.mlp_expansion);
    l.get("zero_bias", pc.lc_config.zero_bias);
    l.check(pc.lc_config.pool >= 1 && pc.shape.height % pc.lc_config.pool == 0 &&
                pc.shape.width % pc.lc_config.pool == 0,
            "pool", "must be >= 1 and divide the grid height and width");
    l.check(pc.lc_config.state_dim >= 1, "state_dim", "must be >= 1");
    l.check(pc.lc_config.mlp_expansion >= 1, "mlp_expansion", "must be >= 1");
    l.finish();
  }
  {
    Walker p = root.child("pac");
    PacConfig& c = pc.pac_config;
    p.get("pe_dims", c.pe_dims);
    p.get("attn_hidden", c.attn_hidden);
    p.get("offset_width", c.offset_width);
    p.get("select_threshold", c.select_threshold);
    p.get("cosine_gain", c.cosine_gain);
    p.check(c.pe_dims > 0 && c.pe_dims % 2 == 0, "pe_dims", "must be a positive even number");
    p.check(c.attn_hidden >= 1, "attn_hidden", "must be >= 1");
    p.check(c.offset_width >= 1, "offset_width", "must be >= 1");
    p.check(c.select_threshold > 0.0 && c.select_threshold < 1.0, "select_threshold", "must lie in (0, 1)");
    p.finish();
  }
  root.get("weight_seed", pc.weight_seed);
  {
    Walker s = root.child("sweep");
    s.get_noise("noise", cfg.noise);
    s.get_list("latency", cfg.latency);
    s.get_list("agents", cfg.agents);
    for (const auto& n : cfg.noise)
      s.check(n.sigma_t >= 0.0 && n.sigma_r >= 0.0, "noise", "standard deviations must be >= 0");
    for (int lag : cfg.latency)
      s.check(lag >= 0 && lag <= cfg.scenario.ticks - cfg.scenario.eval_ticks, "latency",
              "every lag must lie in [0, ticks - eval_ticks]");
    for (int a : cfg.agents) s.check(a >= 1, "agents", "every agent count must be >= 1");
    s.finish();
  }
  root.get_list("seeds", cfg.seeds);
  root.get("scenes_per_seed", cfg.scenes_per_seed);
  root.check(cfg.scenes_per_seed >= 0, "scenes_per_seed", "must be >= 0");
  {
    Walker o = root.child("output");
    o.get("dir", cfg.out_dir);
    o.get("name", cfg.name);
    o.check(!cfg.name.empty(), "name", "must not be empty");
    o.finish();
  }
  root.finish();
  return cfg;
}

}  // namespace

int RunConfig::generated_agents() const {
  int n = scenario.n_agents;
  for (int a : agents) n = std::max(n, a);
  return n;
}

json to_json(const RunConfig& cfg) {
  const ScenarioParams& p = cfg.scenario;
  const ScenarioOptions& o = p.options;
  const PipelineConfig& pc = cfg.pipeline;
  json noise = json::array();
  for (const auto& n : cfg.noise) noise.push_back({n.sigma_t, n.sigma_r});
  return json{
      {"scenario",
       {{"n_agents", p.n_agents},
        {"n_objects", p.n_objects},
        {"ticks", p.ticks},
        {"area", p.area},
        {"eval_ticks", p.eval_ticks},
        {"agent_radius", o.agent_radius},
        {"min_agent_separation", o.min_agent_separation},
        {"object_clearance", o.object_clearance},
        {"width_min", o.width_min},
        {"width_max", o.width_max},
        {"length_min", o.length_min},
        {"length_max", o.length_max},
        {"speed_min", o.speed_min},
        {"speed_max", o.speed_max},
        {"sensing_range", o.sensing_range},
        {"comm_range", o.comm_range},
        {"max_rounds", o.max_rounds}}},
      {"grid",
       {{"channels", pc.shape.channels},
        {"height", pc.shape.height},
        {"width", pc.shape.width},
        {"cell_size", pc.shape.cell_size}}},
      {"modes",
       {{"frontend", head_mode_name(pc.frontend_mode)},
        {"feature_head", head_mode_name(pc.lc_mode)},
        {"pac", to_string(pc.pac_mode)},
        {"attention", to_string(pc.attention)}}},
      {"branches",
       {{"cit", pc.cit}, {"lc", pc.lc}, {"align", pc.align}, {"pac", pc.pac}, {"final_fusion", pc.final_fusion}}},
      {"protocol", {{"strategy", to_string(pc.strategy)}, {"topk", pc.topk}, {"tau", pc.tau}}},
      {"detection",
       {{"eps", pc.eps}, {"score_threshold", pc.score_threshold}, {"nms_threshold", pc.nms_threshold}}},
      {"lc",
       {{"pool", pc.lc_config.pool},
        {"state_dim", pc.lc_config.state_dim},
        {"mlp_expansion", pc.lc_config.mlp_expansion},
        {"zero_bias", pc.lc_config.zero_bias}}},
      {"pac",
       {{"pe_dims", pc.pac_config.pe_dims},
        {"attn_hidden", pc.pac_config.attn_hidden},
        {"offset_width", pc.pac_config.offset_width},
        {"select_threshold", pc.pac_config.select_threshold},
        {"cosine_gain", pc.pac_config.cosine_gain}}},
      {"weight_seed", pc.weight_seed},
      {"sweep", {{"noise", noise}, {"latency", cfg.latency}, {"agents", cfg.agents}}},
      {"seeds", cfg.seeds},
      {"scenes_per_seed", cfg.scenes_per_seed},
      {"output", {{"dir", cfg.out_dir}, {"name", cfg.name}}},
  };
}

std::vector<std::string> validate_config(const json& doc) {
  std::vector<std::string> errors;
  parse(doc, errors);
  return errors;
}

RunConfig config_from_json(const json& doc) {
  std::vector<std::string> errors;
  RunConfig cfg = parse(doc, errors);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

}  // namespace coop
