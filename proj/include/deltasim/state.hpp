#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "deltasim/trace.hpp"
#include "deltasim/types.hpp"

namespace deltasim {

enum class TensorEvent : std::uint8_t {
  Produce,
  Use,
  EvictStart,
  OffloadStart,
  OffloadDone,
  ReloadStart,
  ReloadDone,
  RecomputeDone,
  FreeAfterOffload,
  FreeDead,
};

const char* to_string(TensorEvent e);

// Runtime state of one produced tensor. Location invariant: a live record
// is exactly one of on_gpu / evicted / swapout at every event boundary;
// `dead` records have left the schedule and hold no GPU bytes.
struct TensorRecord {
  NodeId node_id = 0;
  Bytes bytes = 0;
  MicroDur own_cost = 0;

  bool on_gpu = false;
  bool evicted = false;
  bool swapout = false;
  bool uncomputable = false;
  bool evict_pinned = false;
  bool offload_pinned = false;
  bool in_use = false;
  bool copy_in_flight = false;
  bool cpu_copy_valid = false;
  bool produced_backward = false;
  bool dead = false;
  bool died_swapout = false;  // was swapout when reclaimed

  MicroTime last_access = 0;

  bool location_invariant_holds() const;
};

// Staleness s(t): time resident without access, clamped to >= 1 so the
// reciprocal heuristics stay defined.
MicroDur staleness(const TensorRecord& r, MicroTime now);

// Applies one lifecycle event, enforcing legality. Throws IllegalTransition
// on any sequence the engine must never produce.
TensorRecord transition(const TensorRecord& r, TensorEvent ev, MicroTime now);

// All produced tensors plus the running sum of GPU-resident bytes.
class ResidentSet {
 public:
  TensorRecord& produce(const OpNode& node, MicroTime now, Phase phase);
  TensorRecord& apply(NodeId id, TensorEvent ev, MicroTime now);

  bool contains(NodeId id) const;
  const TensorRecord& at(NodeId id) const;
  TensorRecord& at(NodeId id);

  Bytes resident_bytes() const { return resident_bytes_; }
  Bytes recount_resident_bytes() const;
  void check_resident_bytes() const;  // throws InternalError on drift

  // Iteration is in ascending node id order (std::map), which all victim
  // scans rely on for deterministic tie-breaks.
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }
  std::size_t size() const { return records_.size(); }

 private:
  std::map<NodeId, TensorRecord> records_;
  Bytes resident_bytes_ = 0;
  std::uint64_t transitions_ = 0;
};

}  // namespace deltasim
