#pragma once

#include <optional>

#include "deltasim/state.hpp"
#include "deltasim/trace.hpp"
#include "deltasim/types.hpp"

namespace deltasim {

enum class Heuristic : std::uint8_t { Base, Lru, Greedy };
enum class ReleaseAction : std::uint8_t { Evict, Offload };
enum class SwapCostMode : std::uint8_t { OneWay, RoundTrip };

const char* to_string(Heuristic h);
const char* to_string(ReleaseAction a);

struct CostModel {
  Frac64 bandwidth_bytes_per_us{64000, 1};  // PCIe 4.0, 64e9 bytes/s
  Frac64 effective_fraction{7, 20};         // 35% of nominal bandwidth
  SwapCostMode swap_cost_mode = SwapCostMode::OneWay;

  // b * effective_fraction as an exact fraction (numerator, denominator).
  U128 eff_num() const;
  U128 eff_den() const;
};

// Decision score F = c_r / c_s as an exact fraction; absent when a pin
// forced the action.
struct DecisionScore {
  U128 num = 0;
  U128 den = 1;

  bool leq_one() const { return num <= den; }
};

struct Decision {
  ReleaseAction action;
  std::optional<DecisionScore> score;
};

// Filtering heuristics: Base 1/(m*s), Lru 1/s, Greedy 1/m.
HeuristicScore score(Heuristic h, const TensorRecord& r, MicroTime now);

// One-way transfer time ceil(m / (b * effective_fraction)) in us. RoundTrip
// mode doubles it; the engine always uses the one-way time for durations.
MicroDur swap_cost(const TensorRecord& r, const CostModel& cm);
MicroDur swap_cost_bytes(Bytes m, const CostModel& cm);

// own_cost(id) plus own costs of the evicted computable ancestor closure.
// Ancestors that are on_gpu or swapout are treated as available.
MicroDur recompute_cost(NodeId id, const ResidentSet& set, const Trace& trace);

// A tensor the Filter may hand to the Director.
bool releasable(const TensorRecord& r);

// Algorithm: scan resident releasable tensors for the minimum heuristic
// score; ties go to the lowest node id. `extra_filter` lets the engine
// restrict candidates for recompute-only / offload-only modes.
std::optional<NodeId> select_victim(const ResidentSet& set, Heuristic h,
                                    MicroTime now);
std::optional<NodeId> select_victim(const ResidentSet& set, Heuristic h,
                                    MicroTime now,
                                    bool (*extra_filter)(const TensorRecord&));

// Director: pin overrides first, otherwise F = c_r/c_s with F <= 1 => Evict.
Decision decide(NodeId id, const ResidentSet& set, const Trace& trace,
                const CostModel& cm, MicroTime now);

}  // namespace deltasim
