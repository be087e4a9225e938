#include "coop/citproto.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>

#include "coop/error.hpp"
#include "coop/gridmath.hpp"

namespace coop {

namespace {

constexpr std::uint8_t kKindStage1 = 1;
constexpr std::uint8_t kKindMask = 2;
constexpr std::uint8_t kKindStage2 = 3;
constexpr std::uint8_t kKindDetections = 4;

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { for (int i = 0; i < 2; ++i) buf_.push_back(std::uint8_t(v >> (8 * i))); }
  void u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i))); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { need(1); return b_[pos_++]; }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_ + std::size_t(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw InvalidInput("truncated message");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void check_header(Reader& r, std::uint8_t kind) {
  const auto k = r.u8();
  const auto v = r.u8();
  if (k != kind) throw InvalidInput("unexpected message kind " + std::to_string(k));
  if (v != kWireVersion) throw InvalidInput("unsupported wire version " + std::to_string(v));
}

void check_relevances(std::span<const RelevanceMap> relevances) {
  if (relevances.empty()) throw InvalidInput("winner_take_all: no relevance maps");
  for (const auto& [id, g] : relevances) {
    if (g.channels() != 1) throw InvalidInput("winner_take_all: relevance maps must have one channel");
    require_same_shape(g, relevances.front().second, "winner_take_all");
  }
}

bool is_binary(const Grid& m) {
  return (m.data().array() == 0.0f || m.data().array() == 1.0f).all();
}

const RequestMask* find_mask(std::span<const RequestMask> masks, int id) {
  for (const auto& m : masks)
    if (m.target_id == id) return &m;
  return nullptr;
}

void check_matches_mask(const Stage2Msg& msg, std::span<const RequestMask> masks) {
  if (masks.empty()) return;
  const RequestMask* m = find_mask(masks, msg.sender_id);
  if (!m) throw ProtocolViolation("stage-2 message from agent " + std::to_string(msg.sender_id) + " without a request");
  if (static_cast<Index>(msg.cells.size()) != m->support())
    throw ProtocolViolation("stage-2 entries from agent " + std::to_string(msg.sender_id) + " differ from its request mask");
  for (auto c : msg.cells)
    if (m->mask.data()(0, c) != 1.0f)
      throw ProtocolViolation("stage-2 entries from agent " + std::to_string(msg.sender_id) + " differ from its request mask");
}

}  // namespace

std::string to_string(CommStage s) {
  switch (s) {
    case CommStage::kStage1: return "stage1";
    case CommStage::kMask: return "mask";
    case CommStage::kStage2: return "stage2";
    case CommStage::kDetections: return "detections";
  }
  return "stage1";
}

Index RequestMask::support() const { return static_cast<Index>((mask.data().array() != 0.0f).count()); }

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kTop1: return "top1";
    case Strategy::kTopK: return "topk";
    case Strategy::kMaxOut: return "maxout";
  }
  return "top1";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "top1") return Strategy::kTop1;
  if (s == "topk") return Strategy::kTopK;
  if (s == "maxout") return Strategy::kMaxOut;
  throw InvalidInput("unknown strategy '" + s + "' (expected top1, topk or maxout)");
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_stage1(const Stage1Msg& msg) {
  const Grid& g = msg.confidence_logits;
  Writer w(stage1_bytes(g.height(), g.width()));
  w.u8(kKindStage1);
  w.u8(kWireVersion);
  w.u16(std::uint16_t(msg.sender_id));
  w.f32(float(msg.declared_pose.x));
  w.f32(float(msg.declared_pose.y));
  w.f32(float(msg.declared_pose.yaw));
  for (Index i = 0; i < g.cells(); ++i) w.f32(g.data()(0, i));
  return std::move(w.bytes());
}

Stage1Msg decode_stage1(std::span<const std::uint8_t> bytes, const GridShape& shape) {
  if (bytes.size() != stage1_bytes(shape.height, shape.width)) throw InvalidInput("stage-1 message has wrong length");
  Reader r(bytes);
  check_header(r, kKindStage1);
  Stage1Msg msg;
  msg.sender_id = r.u16();
  const double x = r.f32(), y = r.f32(), yaw = r.f32();
  msg.declared_pose = Pose2(x, y, yaw);
  msg.confidence_logits = shape.zeros(1);
  for (Index i = 0; i < shape.cells(); ++i) msg.confidence_logits.data()(0, i) = r.f32();
  return msg;
}

std::vector<std::uint8_t> encode_mask(const RequestMask& mask, int tick) {
  const Grid& g = mask.mask;
  if (!is_binary(g)) throw InvalidInput("encode_mask: mask is not binary");
  Writer w(mask_bytes(g.height(), g.width()));
  w.u8(kKindMask);
  w.u8(kWireVersion);
  w.u16(std::uint16_t(mask.target_id));
  w.u32(std::uint32_t(tick));
  const Index n = g.cells();
  for (Index base = 0; base < n; base += 8) {
    std::uint8_t byte = 0;
    for (Index b = 0; b < 8 && base + b < n; ++b)
      if (g.data()(0, base + b) != 0.0f) byte |= std::uint8_t(1u << b);
    w.u8(byte);
  }
  return std::move(w.bytes());
}

RequestMask decode_mask(std::span<const std::uint8_t> bytes, const GridShape& shape) {
  if (bytes.size() != mask_bytes(shape.height, shape.width)) throw InvalidInput("mask message has wrong length");
  Reader r(bytes);
  check_header(r, kKindMask);
  RequestMask m;
  m.target_id = r.u16();
  (void)r.u32();
  m.mask = shape.zeros(1);
  const Index n = shape.cells();
  for (Index base = 0; base < n; base += 8) {
    const std::uint8_t byte = r.u8();
    for (Index b = 0; b < 8 && base + b < n; ++b)
      if (byte & (1u << b)) m.mask.data()(0, base + b) = 1.0f;
  }
  return m;
}

namespace {

std::vector<std::uint8_t> encode_sparse(const Stage2Msg& msg, std::uint8_t kind) {
  const Index C = msg.values.rows();
  if (msg.values.cols() != msg.entries()) throw InvalidInput("sparse message: values and cells disagree");
  Writer w(stage2_bytes(msg.entries(), C));
  w.u8(kind);
  w.u8(kWireVersion);
  w.u16(std::uint16_t(msg.sender_id));
  w.u32(std::uint32_t(msg.tick));
  for (Index k = 0; k < msg.entries(); ++k) {
    w.u32(msg.cells[std::size_t(k)]);
    for (Index c = 0; c < C; ++c) w.f32(msg.values(c, k));
  }
  return std::move(w.bytes());
}

Stage2Msg decode_sparse(std::span<const std::uint8_t> bytes, Index channels, std::uint8_t kind) {
  const std::size_t entry = 4 + 4 * std::size_t(channels);
  if (bytes.size() < 8 || (bytes.size() - 8) % entry != 0) throw InvalidInput("sparse message has wrong length");
  Reader r(bytes);
  check_header(r, kind);
  Stage2Msg msg;
  msg.sender_id = r.u16();
  msg.tick = int(r.u32());
  const Index n = Index((bytes.size() - 8) / entry);
  msg.values.resize(channels, n);
  for (Index k = 0; k < n; ++k) {
    msg.cells.push_back(r.u32());
    for (Index c = 0; c < channels; ++c) msg.values(c, k) = r.f32();
  }
  return msg;
}

}  // namespace

std::vector<std::uint8_t> encode_stage2(const Stage2Msg& msg) { return encode_sparse(msg, kKindStage2); }

Stage2Msg decode_stage2(std::span<const std::uint8_t> bytes, Index channels) {
  return decode_sparse(bytes, channels, kKindStage2);
}

std::vector<std::uint8_t> encode_detections(const Stage2Msg& msg) {
  if (msg.values.rows() != 7 && msg.entries() > 0) throw InvalidInput("detection message must carry 7 channels");
  return encode_sparse(msg, kKindDetections);
}

Stage2Msg decode_detections(std::span<const std::uint8_t> bytes) { return decode_sparse(bytes, 7, kKindDetections); }

// ---------------------------------------------------------------------------

void CommLedger::record(int tick, int sender, int receiver, CommStage stage, std::size_t bytes) {
  entries_[{tick, sender, receiver, stage}] += bytes;
}

std::size_t CommLedger::total() const {
  std::size_t t = 0;
  for (const auto& [k, v] : entries_) t += v;
  return t;
}

std::size_t CommLedger::total(CommStage stage) const {
  std::size_t t = 0;
  for (const auto& [k, v] : entries_)
    if (std::get<3>(k) == stage) t += v;
  return t;
}

std::size_t CommLedger::received_by(int receiver, CommStage stage) const {
  std::size_t t = 0;
  for (const auto& [k, v] : entries_)
    if (std::get<2>(k) == receiver && std::get<3>(k) == stage) t += v;
  return t;
}

std::size_t CommLedger::tick_total(int tick) const {
  std::size_t t = 0;
  for (const auto& [k, v] : entries_)
    if (std::get<0>(k) == tick) t += v;
  return t;
}

void CommLedger::merge(const CommLedger& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] += v;
}

// ---------------------------------------------------------------------------

Grid compute_demand(const Grid& ego_conf_logits) {
  if (ego_conf_logits.channels() != 1) throw InvalidInput("compute_demand: expected a 1-channel map");
  Grid d = ego_conf_logits;
  d.data() = ego_conf_logits.data().unaryExpr([](float v) { return 1.0f - sigmoid(v); });
  return d;
}

Grid relevance(const Grid& demand, const Grid& collab_conf_logits) {
  require_same_shape(demand, collab_conf_logits, "relevance");
  if (demand.channels() != 1) throw InvalidInput("relevance: expected 1-channel maps");
  Grid s = demand;
  s.data() = demand.data().array() * collab_conf_logits.data().unaryExpr([](float v) { return sigmoid(v); }).array();
  return s;
}

std::vector<RequestMask> winner_take_all(std::span<const RelevanceMap> relevances, double tau) {
  return winner_take_all_topk(relevances, 1, tau);
}

std::vector<RequestMask> winner_take_all_topk(std::span<const RelevanceMap> relevances, int k, double tau) {
  if (k < 1) throw InvalidInput("winner_take_all_topk: k must be >= 1");
  check_relevances(relevances);
  const std::size_t n = relevances.size();
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), 0);
  std::stable_sort(by_id.begin(), by_id.end(),
                   [&](std::size_t a, std::size_t b) { return relevances[a].first < relevances[b].first; });

  std::vector<RequestMask> masks(n);
  for (std::size_t j = 0; j < n; ++j) {
    masks[j].target_id = relevances[j].first;
    masks[j].mask = relevances[j].second.zeros_like(1);
  }
  const Index cells = relevances.front().second.cells();
  std::vector<std::size_t> order(n);
  for (Index cell = 0; cell < cells; ++cell) {
    if (k == 1) {
      std::size_t best = n;
      float best_v = 0.0f;
      for (std::size_t j : by_id) {
        const float v = relevances[j].second.data()(0, cell);
        if (best == n || v > best_v) {
          best = j;
          best_v = v;
        }
      }
      if (double(best_v) > tau) masks[best].mask.data()(0, cell) = 1.0f;
      continue;
    }
    order = by_id;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return relevances[a].second.data()(0, cell) > relevances[b].second.data()(0, cell);
    });
    for (std::size_t r = 0; r < order.size() && r < std::size_t(k); ++r) {
      const std::size_t j = order[r];
      if (double(relevances[j].second.data()(0, cell)) > tau) masks[j].mask.data()(0, cell) = 1.0f;
    }
  }
  return masks;
}

Stage2Msg extract_sparse(const Grid& feature, const RequestMask& mask, int sender_id, int tick) {
  require_same_plane(feature, mask.mask, "extract_sparse");
  if (mask.mask.channels() != 1) throw InvalidInput("extract_sparse: mask must have one channel");
  if (!is_binary(mask.mask)) throw InvalidInput("extract_sparse: mask is not binary");
  Stage2Msg msg;
  msg.sender_id = sender_id;
  msg.tick = tick;
  for (Index cell = 0; cell < feature.cells(); ++cell)
    if (mask.mask.data()(0, cell) == 1.0f) msg.cells.push_back(std::uint32_t(cell));
  msg.values.resize(feature.channels(), msg.entries());
  for (Index k = 0; k < msg.entries(); ++k) msg.values.col(k) = feature.column(msg.cells[std::size_t(k)]);
  return msg;
}

Grid reconstruct(const Stage2Msg& msg, const GridShape& shape, Index channels) {
  if (msg.values.rows() != channels && msg.entries() > 0) throw InvalidInput("reconstruct: channel count mismatch");
  Grid g = shape.zeros(channels);
  std::uint32_t prev = 0;
  for (Index k = 0; k < msg.entries(); ++k) {
    const std::uint32_t cell = msg.cells[std::size_t(k)];
    if (Index(cell) >= shape.cells()) throw InvalidInput("reconstruct: cell index out of range");
    if (k > 0 && cell <= prev) throw InvalidInput("reconstruct: cell indices must be strictly increasing");
    prev = cell;
    g.column(cell) = msg.values.col(k);
  }
  return g;
}

Grid assemble_collab(std::span<const Stage2Msg> messages, std::span<const RequestMask> masks, const GridShape& shape,
                     Index channels) {
  Grid f = shape.zeros(channels);
  std::vector<int> owner(std::size_t(shape.cells()), -1);
  for (const auto& msg : messages) {
    check_matches_mask(msg, masks);
    for (auto cell : msg.cells) {
      if (Index(cell) >= shape.cells()) throw InvalidInput("assemble_collab: cell index out of range");
      int& o = owner[cell];
      if (o != -1) {
        throw ProtocolViolation("overlapping stage-2 supports at cell " + std::to_string(cell) + " (agents " +
                                std::to_string(o) + " and " + std::to_string(msg.sender_id) + ")");
      }
      o = msg.sender_id;
    }
    f.data() += reconstruct(msg, shape, channels).data();
  }
  return f;
}

Grid blend(std::span<const Grid> grids, std::span<const Grid> weights, std::span<const Grid> supports) {
  if (grids.empty()) throw InvalidInput("blend: no grids");
  if (weights.size() != grids.size() || supports.size() != grids.size())
    throw InvalidInput("blend: grids, weights and supports must align");
  for (std::size_t j = 0; j < grids.size(); ++j) {
    require_same_shape(grids[j], grids.front(), "blend");
    require_same_plane(grids[j], weights[j], "blend");
    require_same_plane(grids[j], supports[j], "blend");
  }
  Grid out = grids.front().zeros_like();
  const Index C = out.channels();
  for (Index cell = 0; cell < out.cells(); ++cell) {
    int count = 0;
    std::size_t only = 0;
    float wsum = 0.0f;
    for (std::size_t j = 0; j < grids.size(); ++j) {
      if (supports[j].data()(0, cell) == 0.0f) continue;
      ++count;
      only = j;
      wsum += weights[j].data()(0, cell);
    }
    if (count == 0) continue;
    auto col = out.column(cell);
    if (count == 1) {
      col = grids[only].column(cell);
      continue;
    }
    for (std::size_t j = 0; j < grids.size(); ++j) {
      if (supports[j].data()(0, cell) == 0.0f) continue;
      const float wj = wsum > 0.0f ? weights[j].data()(0, cell) / wsum : 1.0f / float(count);
      col += wj * grids[j].column(cell);
    }
  }
  (void)C;
  return out;
}

Grid assemble_collab_weighted(std::span<const Stage2Msg> messages, std::span<const RequestMask> masks,
                              std::span<const RelevanceMap> relevances, const GridShape& shape, Index channels) {
  if (messages.empty()) return shape.zeros(channels);
  std::vector<Grid> grids, weights, supports;
  for (const auto& msg : messages) {
    check_matches_mask(msg, masks);
    grids.push_back(reconstruct(msg, shape, channels));
    const RelevanceMap* rel = nullptr;
    for (const auto& r : relevances)
      if (r.first == msg.sender_id) rel = &r;
    if (!rel) throw InvalidInput("assemble_collab_weighted: no relevance map for agent " + std::to_string(msg.sender_id));
    weights.push_back(rel->second);
    Grid support = shape.zeros(1);
    for (auto cell : msg.cells) support.data()(0, cell) = 1.0f;
    supports.push_back(std::move(support));
  }
  return blend(grids, weights, supports);
}

Stage2Msg extract_detections(const Grid& stacked_maps, float background_logit, int sender_id, int tick) {
  Stage2Msg msg;
  msg.sender_id = sender_id;
  msg.tick = tick;
  for (Index cell = 0; cell < stacked_maps.cells(); ++cell) {
    const auto col = stacked_maps.column(cell);
    if (col(0) == background_logit && (col.tail(col.size() - 1).array() == 0.0f).all()) continue;
    msg.cells.push_back(std::uint32_t(cell));
  }
  msg.values.resize(stacked_maps.channels(), msg.entries());
  for (Index k = 0; k < msg.entries(); ++k) msg.values.col(k) = stacked_maps.column(msg.cells[std::size_t(k)]);
  return msg;
}

Grid restore_detections(const Stage2Msg& msg, const GridShape& shape, float background_logit) {
  const Index C = msg.entries() > 0 ? msg.values.rows() : 7;
  Grid g = reconstruct(msg, shape, C);
  for (Index cell = 0; cell < g.cells(); ++cell)
    if (!std::binary_search(msg.cells.begin(), msg.cells.end(), std::uint32_t(cell))) g.data()(0, cell) = background_logit;
  return g;
}

Grid maxout_fuse(std::span<const Grid> features) {
  if (features.empty()) throw InvalidInput("maxout_fuse: no features");
  Grid out = features.front();
  for (std::size_t j = 1; j < features.size(); ++j) {
    require_same_shape(out, features[j], "maxout_fuse");
    out.data() = out.data().cwiseMax(features[j].data());
  }
  return out;
}

nlohmann::json trace_record(int tick, int sender, int receiver, CommStage stage, std::size_t bytes,
                            const std::vector<std::uint32_t>& cells) {
  nlohmann::json j;
  j["tick"] = tick;
  j["stage"] = to_string(stage);
  j["sender"] = sender;
  j["receiver"] = receiver;
  j["bytes"] = bytes;
  if (stage != CommStage::kStage1) j["cells"] = cells;
  return j;
}

}  // namespace coop
