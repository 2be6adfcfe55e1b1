#include "deltasim/policy.hpp"

#include <limits>
#include <set>
#include <vector>

namespace deltasim {

const char* to_string(Heuristic h) {
  switch (h) {
    case Heuristic::Base: return "base";
    case Heuristic::Lru: return "lru";
    case Heuristic::Greedy: return "greedy";
  }
  return "?";
}

const char* to_string(ReleaseAction a) {
  switch (a) {
    case ReleaseAction::Evict: return "Evict";
    case ReleaseAction::Offload: return "Offload";
  }
  return "?";
}

U128 CostModel::eff_num() const {
  return static_cast<U128>(bandwidth_bytes_per_us.num) *
         effective_fraction.num;
}

U128 CostModel::eff_den() const {
  return static_cast<U128>(bandwidth_bytes_per_us.den) *
         effective_fraction.den;
}

HeuristicScore score(Heuristic h, const TensorRecord& r, MicroTime now) {
  if (!r.on_gpu) {
    throw StateError("score: node " + std::to_string(r.node_id) +
                     " is not resident");
  }
  U128 m = r.bytes;
  U128 s = staleness(r, now);
  switch (h) {
    case Heuristic::Base: return {m * s};
    case Heuristic::Lru: return {s};
    case Heuristic::Greedy: return {m};
  }
  return {1};
}

namespace {

U128 ceil_div(U128 a, U128 b) { return (a + b - 1) / b; }

}  // namespace

// One-way transfer time in us, independent of the decision-cost mode.
MicroDur transfer_time_us(Bytes m, const CostModel& cm) {
  U128 us = ceil_div(static_cast<U128>(m) * cm.eff_den(), cm.eff_num());
  if (us > std::numeric_limits<MicroDur>::max()) {
    throw ArgumentError("swap cost overflows 64-bit microseconds");
  }
  return static_cast<MicroDur>(us);
}

MicroDur swap_cost_bytes(Bytes m, const CostModel& cm) {
  MicroDur one_way = transfer_time_us(m, cm);
  return cm.swap_cost_mode == SwapCostMode::RoundTrip ? 2 * one_way : one_way;
}

MicroDur swap_cost(const TensorRecord& r, const CostModel& cm) {
  return swap_cost_bytes(r.bytes, cm);
}

MicroDur recompute_cost(NodeId id, const ResidentSet& set,
                        const Trace& trace) {
  const OpNode* target = trace.find(id);
  if (target == nullptr) {
    throw StateError("recompute_cost: node " + std::to_string(id) +
                     " not in trace");
  }
  if (target->uncomputable) {
    throw StateError("recompute_cost: node " + std::to_string(id) +
                     " is uncomputable");
  }

  MicroDur total = target->compute_cost_us;
  std::set<NodeId> visited;  // evicted/dead ancestors already counted
  std::vector<NodeId> stack(target->parents.begin(), target->parents.end());
  while (!stack.empty()) {
    NodeId p = stack.back();
    stack.pop_back();
    if (visited.contains(p)) continue;
    const TensorRecord& r = set.at(p);
    if (r.on_gpu || r.swapout) continue;  // available or restorable alone
    const OpNode* node = trace.find(p);
    if (node->uncomputable) {
      if (r.cpu_copy_valid) continue;  // dead but reloadable
      throw UnrecoverableError("recompute closure of node " +
                               std::to_string(id) +
                               " reaches lost uncomputable node " +
                               std::to_string(p));
    }
    visited.insert(p);
    total += node->compute_cost_us;
    stack.insert(stack.end(), node->parents.begin(), node->parents.end());
  }
  return total;
}

bool releasable(const TensorRecord& r) {
  return r.on_gpu && !r.in_use && !r.copy_in_flight && !r.dead &&
         !r.produced_backward && !(r.evict_pinned && r.offload_pinned);
}

std::optional<NodeId> select_victim(const ResidentSet& set, Heuristic h,
                                    MicroTime now) {
  return select_victim(set, h, now, nullptr);
}

std::optional<NodeId> select_victim(const ResidentSet& set, Heuristic h,
                                    MicroTime now,
                                    bool (*extra_filter)(const TensorRecord&)) {
  std::optional<NodeId> best;
  HeuristicScore best_score;
  for (const auto& [id, r] : set) {
    if (!releasable(r)) continue;
    if (extra_filter != nullptr && !extra_filter(r)) continue;
    HeuristicScore s = score(h, r, now);
    if (!best || s < best_score) {  // strict: ties keep the lowest id
      best = id;
      best_score = s;
    }
  }
  return best;
}

Decision decide(NodeId id, const ResidentSet& set, const Trace& trace,
                const CostModel& cm, MicroTime now) {
  (void)now;  // staleness cancels out of F = h_r / h_o
  const TensorRecord& r = set.at(id);
  if (!releasable(r)) {
    throw StateError("decide: node " + std::to_string(id) +
                     " is not releasable");
  }
  if (r.evict_pinned) return {ReleaseAction::Offload, std::nullopt};
  if (r.offload_pinned) return {ReleaseAction::Evict, std::nullopt};

  // F = h_r/h_o = c_r / c_s with c_s = m / b_eff, compared exactly.
  U128 c_r = recompute_cost(id, set, trace);
  DecisionScore f;
  f.num = c_r * cm.eff_num();
  f.den = static_cast<U128>(r.bytes) * cm.eff_den();
  if (cm.swap_cost_mode == SwapCostMode::RoundTrip) f.den *= 2;
  ReleaseAction action =
      f.leq_one() ? ReleaseAction::Evict : ReleaseAction::Offload;
  return {action, f};
}

}  // namespace deltasim
