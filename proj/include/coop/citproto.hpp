#pragma once

// Receiver-centric two-stage transmission: confidence exchange, demand and
// relevance at the ego, per-cell competition for request masks, sparse
// feature transfer, and byte-exact accounting of everything on the wire.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "coop/grid.hpp"
#include "coop/pose2.hpp"

namespace coop {

struct Stage1Msg {
  int sender_id = 0;
  Grid confidence_logits;  // 1×H×W
  Pose2 declared_pose;
  int tick = 0;
};

struct RequestMask {
  int target_id = 0;
  Grid mask;  // 1×H×W, values in {0, 1}

  Index support() const;
};

/// Sparse feature columns at the requested cells. values.col(k) holds the
/// C scalars of cell cells[k]; cells are strictly increasing.
struct Stage2Msg {
  int sender_id = 0;
  int tick = 0;
  std::vector<std::uint32_t> cells;
  Eigen::MatrixXf values;  // C × entries

  Index entries() const { return static_cast<Index>(cells.size()); }
};

enum class Strategy { kTop1, kTopK, kMaxOut };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Wire encoding, format version 1. All integers and floats little-endian.
//
//   stage-1   u8 kind=1 | u8 version | u16 sender | f32 x | f32 y | f32 yaw | f32 logits[H·W]
//   mask      u8 kind=2 | u8 version | u16 target | u32 tick | bit-packed mask, LSB first
//   stage-2   u8 kind=3 | u8 version | u16 sender | u32 tick | { u32 cell | f32 values[C] }*
//   dets      u8 kind=4 | same layout as stage-2 with C = 7 (cls, reg) per non-background cell
//
// Stage-1 carries no tick: rounds are barrier-synchronised per tick.

inline constexpr std::uint8_t kWireVersion = 1;

constexpr std::size_t stage1_bytes(Index height, Index width) { return std::size_t(height * width) * 4 + 16; }
constexpr std::size_t mask_bytes(Index height, Index width) { return (std::size_t(height * width) + 7) / 8 + 8; }
constexpr std::size_t stage2_bytes(Index entries, Index channels) {
  return std::size_t(entries) * (4 + 4 * std::size_t(channels)) + 8;
}

std::vector<std::uint8_t> encode_stage1(const Stage1Msg& msg);
Stage1Msg decode_stage1(std::span<const std::uint8_t> bytes, const GridShape& shape);
std::vector<std::uint8_t> encode_mask(const RequestMask& mask, int tick);
RequestMask decode_mask(std::span<const std::uint8_t> bytes, const GridShape& shape);
std::vector<std::uint8_t> encode_stage2(const Stage2Msg& msg);
Stage2Msg decode_stage2(std::span<const std::uint8_t> bytes, Index channels);
std::vector<std::uint8_t> encode_detections(const Stage2Msg& msg);
Stage2Msg decode_detections(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Accounting

enum class CommStage { kStage1 = 1, kMask = 2, kStage2 = 3, kDetections = 4 };

std::string to_string(CommStage s);

/// Per-link, per-stage byte counts. Entries are keyed (tick, sender,
/// receiver, stage) so iteration order is deterministic.
class CommLedger {
 public:
  using Key = std::tuple<int, int, int, CommStage>;

  void record(int tick, int sender, int receiver, CommStage stage, std::size_t bytes);

  std::size_t total() const;
  std::size_t total(CommStage stage) const;
  std::size_t received_by(int receiver, CommStage stage) const;
  std::size_t tick_total(int tick) const;
  const std::map<Key, std::size_t>& entries() const { return entries_; }

  void merge(const CommLedger& other);

 private:
  std::map<Key, std::size_t> entries_;
};

// ---------------------------------------------------------------------------
// Receiver-side computation

/// D = 1 - σ(logits).
Grid compute_demand(const Grid& ego_conf_logits);

/// S = D ⊙ σ(collab logits). Collaborator logits must already be in the ego frame.
Grid relevance(const Grid& demand, const Grid& collab_conf_logits);

using RelevanceMap = std::pair<int, Grid>;  // (collaborator id, relevance)

/// Each cell goes to the collaborator with the highest relevance if that
/// relevance exceeds tau; ties go to the lowest id. Masks are returned in
/// input order and are pairwise disjoint.
std::vector<RequestMask> winner_take_all(std::span<const RelevanceMap> relevances, double tau);

/// Each cell goes to the (up to) k highest-relevance collaborators above tau.
std::vector<RequestMask> winner_take_all_topk(std::span<const RelevanceMap> relevances, int k, double tau);

Stage2Msg extract_sparse(const Grid& feature, const RequestMask& mask, int sender_id, int tick);

/// Scatters a stage-2 message back into a dense grid (zero elsewhere).
Grid reconstruct(const Stage2Msg& msg, const GridShape& shape, Index channels);

/// Top-1 assembly: F_coll = Σ_j scatter(M_j). Throws ProtocolViolation when
/// supports overlap or a message does not match its request mask.
Grid assemble_collab(std::span<const Stage2Msg> messages, std::span<const RequestMask> masks,
                     const GridShape& shape, Index channels);

/// Per-cell blend of several grids: over the contributors whose support bit is
/// set, the weight-normalised average (a lone contributor is copied; all-zero
/// weights fall back to the plain mean). Cells without contributors are zero.
Grid blend(std::span<const Grid> grids, std::span<const Grid> weights, std::span<const Grid> supports);

/// Top-k assembly: relevance-weighted blend of the scattered messages.
Grid assemble_collab_weighted(std::span<const Stage2Msg> messages, std::span<const RequestMask> masks,
                              std::span<const RelevanceMap> relevances, const GridShape& shape, Index channels);

/// Detection maps as sparse columns of (cls, reg) at every cell that differs
/// from the background value; restore_detections inverts it exactly.
Stage2Msg extract_detections(const Grid& stacked_maps, float background_logit, int sender_id, int tick);
Grid restore_detections(const Stage2Msg& msg, const GridShape& shape, float background_logit);

/// Element-wise maximum across dense features.
Grid maxout_fuse(std::span<const Grid> features);

/// One JSON-lines record describing a message, for protocol traces.
nlohmann::json trace_record(int tick, int sender, int receiver, CommStage stage, std::size_t bytes,
                            const std::vector<std::uint32_t>& cells);

}  // namespace coop
