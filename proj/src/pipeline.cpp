#include "coop/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "coop/error.hpp"
#include "coop/rng.hpp"

namespace coop {

namespace {

// Poses travel as f32 on the wire; both ends work from the rounded values.
Pose2 wire_pose(const Pose2& p) { return Pose2(float(p.x), float(p.y), float(p.yaw)); }

Grid all_ones(const GridShape& shape) { return Grid::Constant(1, shape.height, shape.width, 1.0f, shape.cell_size); }

DetMaps restrict_to(const DetMaps& maps, const Grid& mask, float background_logit) {
  DetMaps out = maps;
  for (Index i = 0; i < mask.cells(); ++i) {
    if (mask.data()(0, i) != 0.0f) continue;
    out.cls.data()(0, i) = background_logit;
    out.reg.column(i).setZero();
  }
  return out;
}

void record(TickResult& r, int tick, int sender, int receiver, CommStage stage, std::size_t bytes,
            const std::vector<std::uint32_t>& cells = {}) {
  r.ledger.record(tick, sender, receiver, stage, bytes);
  r.trace.push_back(trace_record(tick, sender, receiver, stage, bytes, cells));
}

std::vector<std::uint32_t> support_cells(const Grid& mask) {
  std::vector<std::uint32_t> cells;
  for (Index i = 0; i < mask.cells(); ++i)
    if (mask.data()(0, i) != 0.0f) cells.push_back(std::uint32_t(i));
  return cells;
}

}  // namespace

Models Models::build(const PipelineConfig& cfg) {
  Models m;
  m.frontend = FrontendWeights::seeded(cfg.shape, cfg.weight_seed);
  m.lc = LcWeights::seeded(cfg.shape.channels, cfg.weight_seed, cfg.lc_config);
  PacConfig pc = cfg.pac_config;
  pc.attention = cfg.attention;
  pc.identity_correct = cfg.pac_mode == PacMode::kOracle;
  m.pac = PacWeights::seeded(cfg.weight_seed, pc);
  const bool oracle = cfg.lc_mode == HeadMode::kOracle && cfg.pac_mode == PacMode::kOracle;
  m.recalib = oracle ? RecalibWeights::none() : RecalibWeights::seeded(cfg.weight_seed);
  return m;
}

FlopCount count_flops(const PipelineConfig& cfg, int n_agents) { return count_flops(cfg, Models::build(cfg), n_agents); }

FlopCount count_flops(const PipelineConfig& cfg, const Models& m, int n_agents) {
  if (n_agents < 1) throw InvalidInput("count_flops: n_agents must be >= 1");
  const long long cells = cfg.shape.cells();
  const long long collabs = n_agents - 1;
  FlopCount f;
  // Demand once; per collaborator a bilinear warp of the confidence map,
  // the relevance product and one comparison.
  if (collabs > 0) f.cit = (1 + collabs * (4 + 2 + 1)) * cells;
  if (cfg.lc) f.lc = m.lc.macs(cfg.shape.height, cfg.shape.width) + m.frontend.det_head.macs_per_cell() * cells;
  if (cfg.pac && collabs > 0) f.pac = (m.pac.ego_macs_per_cell() + collabs * m.pac.pair_macs_per_cell()) * cells;
  return f;
}

std::vector<OrientedBox> ground_truth_boxes(const Scenario& scenario, int ego_id, int tick, const GridShape& shape) {
  const Pose2 to_ego = scenario.agent(ego_id).trajectory.at(std::size_t(tick)).inverse();
  const double hx = 0.5 * double(shape.width) * shape.cell_size, hy = 0.5 * double(shape.height) * shape.cell_size;
  std::vector<OrientedBox> gt;
  for (const auto& o : scenario.objects_at(tick)) {
    const Pose2 rel = to_ego * o.center;
    if (std::abs(rel.x) > hx || std::abs(rel.y) > hy) continue;
    OrientedBox b;
    b.cx = rel.x;
    b.cy = rel.y;
    b.w = o.width;
    b.l = o.length;
    b.yaw = rel.yaw;
    b.score = 1.0;
    gt.push_back(b);
  }
  return gt;
}

Pose2 declared_pose(const Scenario& scenario, int agent_id, int tick, const NoiseSpec& noise, int ego_id) {
  const Pose2& truth = scenario.agent(agent_id).trajectory.at(std::size_t(tick));
  if (agent_id == ego_id) return truth;
  Rng rng = make_rng(scenario.seed, {tag(Stream::kPoseNoise), std::uint64_t(agent_id), std::uint64_t(tick)});
  return perturb_pose(truth, noise, rng);
}

TickResult run_tick(const Scenario& sc, const TickOptions& opt, const PipelineConfig& cfg, const Models& models) {
  const GridShape& shape = cfg.shape;
  const FrontendConfig fc{shape, cfg.frontend_mode, cfg.eps};
  const float background = logit(float(cfg.eps));
  const int ego_id = opt.ego_id, tick = opt.tick;
  const std::size_t n_agents =
      opt.n_agents < 0 ? sc.agents.size() : std::min(sc.agents.size(), std::size_t(opt.n_agents));

  TickResult r;
  const Observation ego_obs = snapshot(sc, ego_id, tick, 0);
  r.ego = run_frontend(ego_obs, ego_obs.pose, fc, models.frontend);
  const Pose2 ego_wire = wire_pose(r.ego.true_pose);

  // Local perception and stage 1.
  std::vector<Grid> warped_conf;
  for (std::size_t a = 0; a < n_agents; ++a) {
    const int id = sc.agents[a].id;
    if (id == ego_id) continue;
    const Pose2& now = sc.agent(id).trajectory.at(std::size_t(tick));
    if ((now.translation() - r.ego.true_pose.translation()).norm() > sc.comm_range) continue;
    const Observation obs = snapshot(sc, id, tick, opt.lag);
    const AgentLocal local = run_frontend(obs, declared_pose(sc, id, obs.tick, opt.noise, ego_id), fc, models.frontend);

    record(r, tick, ego_id, id, CommStage::kStage1, stage1_bytes(shape.height, shape.width));
    const auto bytes = encode_stage1({id, local.confidence_logits, local.declared_pose, tick});
    record(r, tick, id, ego_id, CommStage::kStage1, bytes.size());
    const Stage1Msg msg = decode_stage1(bytes, shape);

    r.relative_declared.push_back(relative_pose(ego_wire, msg.declared_pose));
    r.relative_true.push_back(relative_pose(r.ego.true_pose, local.true_pose));
    warped_conf.push_back(warp_logits(msg.confidence_logits, r.relative_declared.back(), cfg.eps));
    r.collaborators.push_back(local);
  }
  const std::size_t n = r.collaborators.size();

  // Receiver-side relevance.
  const Grid demand = compute_demand(r.ego.confidence_logits);
  std::vector<RelevanceMap> relevances;
  std::vector<Grid> s_maps;
  for (std::size_t j = 0; j < n; ++j) {
    relevances.emplace_back(r.collaborators[j].agent_id, relevance(demand, warped_conf[j]));
    s_maps.push_back(sigmoid(warped_conf[j]));
  }
  const Grid s_i = sigmoid(r.ego.confidence_logits);
  const Index C = shape.channels;

  if (cfg.lc) {
    r.f_coll = shape.zeros(C);
    r.s_coll = shape.zeros(1);
    std::vector<Grid> dense;  // collaborator features warped to the ego frame by the sender
    for (std::size_t j = 0; j < n; ++j) dense.push_back(warp_grid(r.collaborators[j].feature, r.relative_declared[j]));
    std::vector<Grid> weights;
    for (const auto& rel : relevances) weights.push_back(rel.second);

    if (n > 0) {
      const bool dense_request = !cfg.cit || cfg.strategy == Strategy::kMaxOut;
      if (dense_request) {
        for (std::size_t j = 0; j < n; ++j) r.masks.push_back({r.collaborators[j].agent_id, all_ones(shape)});
      } else if (cfg.strategy == Strategy::kTop1) {
        r.masks = winner_take_all(relevances, cfg.tau);
      } else {
        r.masks = winner_take_all_topk(relevances, cfg.topk, cfg.tau);
      }

      std::vector<Stage2Msg> received;
      std::vector<Grid> received_dense;
      for (std::size_t j = 0; j < n; ++j) {
        const int id = r.collaborators[j].agent_id;
        const RequestMask& mask = r.masks[j];
        if (!dense_request) {
          const auto mb = encode_mask(mask, tick);
          record(r, tick, ego_id, id, CommStage::kMask, mb.size(), support_cells(mask.mask));
          const RequestMask decoded = decode_mask(mb, shape);
          if (decoded.support() == 0) continue;
        }
        const Stage2Msg out = extract_sparse(dense[j], mask, id, tick);
        const auto bytes = encode_stage2(out);
        record(r, tick, id, ego_id, CommStage::kStage2, bytes.size(), out.cells);
        received.push_back(decode_stage2(bytes, C));
        received_dense.push_back(reconstruct(received.back(), shape, C));
      }

      if (cfg.cit && cfg.strategy == Strategy::kMaxOut) {
        r.f_coll = maxout_fuse(received_dense);
        r.s_coll = maxout_fuse(s_maps);
      } else if (cfg.cit && cfg.strategy == Strategy::kTop1) {
        r.f_coll = assemble_collab(received, r.masks, shape, C);
        for (std::size_t j = 0; j < n; ++j)
          r.s_coll.data() += broadcast_multiply(s_maps[j], r.masks[j].mask).data();
      } else {
        std::vector<Grid> supports;
        for (const auto& m : r.masks) supports.push_back(m.mask);
        r.f_coll = assemble_collab_weighted(received, r.masks, relevances, shape, C);
        r.s_coll = blend(s_maps, weights, supports);
      }
    }

    r.lc = lc_forward(r.f_coll, r.s_coll, r.ego.feature, s_i, models.lc, models.frontend.det_head);
    if (cfg.align) {
      r.teacher = teacher_forward(dense, s_maps, weights, r.ego.feature, s_i, models.lc);
      r.align_loss = align_loss(r.lc->fused_feature, *r.teacher);
    }

    if (cfg.lc_mode == HeadMode::kNetwork) {
      r.lc_maps = r.lc->detmaps;
    } else {
      // Oracle stand-in for the feature-branch head: the ego's maps merged
      // with each collaborator's maps over the cells it was asked for.
      std::vector<DetMaps> routed{r.ego.detmaps};
      for (std::size_t j = 0; j < n; ++j) {
        const DetMaps w = warp_detmaps(r.collaborators[j].detmaps, r.relative_declared[j], cfg.eps);
        routed.push_back(restrict_to(w, r.masks[j].mask, background));
      }
      r.lc_maps = max_merge(routed);
    }
  } else {
    r.lc_maps = r.ego.detmaps;
  }

  if (cfg.pac && n > 0) {
    std::vector<DetMaps> corrected;
    for (std::size_t j = 0; j < n; ++j) {
      const AgentLocal& c = r.collaborators[j];
      const Stage2Msg msg = extract_detections(c.detmaps.stacked(), background, c.agent_id, tick);
      const auto bytes = encode_detections(msg);
      record(r, tick, c.agent_id, ego_id, CommStage::kDetections, bytes.size(), msg.cells);
      const DetMaps maps = DetMaps::unstack(restore_detections(decode_detections(bytes), shape, background));
      const DetMaps warped = warp_detmaps(maps, r.relative_declared[j], cfg.eps);
      const Pose2 error = r.relative_declared[j] * r.relative_true[j].inverse();
      r.corrections.push_back(pac_correct(r.ego.detmaps, warped, models.pac, cfg.pac_mode, error, cfg.eps));
      corrected.push_back(r.corrections.back().corrected);
    }
    r.pac_maps = max_merge(corrected);
  }

  DetMaps lc_final = r.lc_maps;
  std::optional<DetMaps> pac_final = r.pac_maps;
  if (r.pac_maps && cfg.final_fusion) std::tie(lc_final, *pac_final) = recalibrate(r.lc_maps, *r.pac_maps, models.recalib, cfg.eps);

  std::vector<OrientedBox> pool =
      decode_boxes(lc_final, cfg.score_threshold, cfg.lc ? BoxSource::kFeatureBranch : BoxSource::kEgo);
  if (pac_final) {
    const auto extra = decode_boxes(*pac_final, cfg.score_threshold, BoxSource::kObjectBranch);
    pool.insert(pool.end(), extra.begin(), extra.end());
  }
  r.detections = nms(std::move(pool), cfg.nms_threshold);
  r.ground_truth = ground_truth_boxes(sc, ego_id, tick, shape);
  r.report = evaluate(r.detections, r.ground_truth);
  r.report.comm_bytes = r.ledger.received_by(ego_id, CommStage::kStage1) + r.ledger.received_by(ego_id, CommStage::kStage2) +
                        r.ledger.received_by(ego_id, CommStage::kDetections);
  r.report.stage2_bytes = r.ledger.received_by(ego_id, CommStage::kStage2);
  r.report.flops = count_flops(cfg, models, int(n) + 1).total();
  return r;
}

}  // namespace coop
