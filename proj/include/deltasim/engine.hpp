#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "deltasim/device.hpp"
#include "deltasim/policy.hpp"
#include "deltasim/state.hpp"
#include "deltasim/trace.hpp"
#include "deltasim/types.hpp"

namespace deltasim {

enum class PolicyMode : std::uint8_t {
  Delta,
  RecomputeOnly,
  OffloadOnly,
  Baseline,
};
enum class PrefetchGuard : std::uint8_t { And, PaperOr };

const char* to_string(PolicyMode m);

struct EngineConfig {
  Bytes budget = 0;
  Heuristic heuristic = Heuristic::Base;
  PolicyMode policy_mode = PolicyMode::Delta;
  CostModel cost_model;
  Frac64 watermark_fraction{3, 4};
  std::uint64_t prefetch_limit = 2;  // max reloads per burst
  bool prefetch_enabled = true;
  bool overlap_enabled = true;  // copies on the copy stream vs inline
  PrefetchGuard prefetch_guard = PrefetchGuard::And;

  // Test hook: when set, release_one consumes these (victim, action) pairs
  // in order instead of consulting the policy.
  std::vector<std::pair<NodeId, ReleaseAction>> scripted_decisions;

  Bytes watermark_bytes() const;
};

enum class EventKind : std::uint8_t {
  Compute,
  Offload,
  Reload,
  Recompute,
  Stall,
  Evict,
  Use,   // zero-duration access marker for schedule Use events
  Free,  // zero-duration dead-tensor reclamation
};

const char* to_string(EventKind k);

struct TimelineEvent {
  MicroTime ts = 0;
  StreamKind stream = StreamKind::Compute;
  EventKind kind = EventKind::Compute;
  NodeId node = 0;
  MicroDur duration = 0;
  Bytes bytes = 0;
  Phase phase = Phase::Forward;
  bool prefetch = false;       // Reload issued by the prefetcher
  std::uint32_t burst = 0;     // prefetch burst index (prefetch only)
};

struct Timeline {
  std::vector<TimelineEvent> events;
};

struct OffloadQueue {
  std::deque<NodeId> fifo;

  void push(NodeId id) { fifo.push_back(id); }
  void remove(NodeId id);
  bool empty() const { return fifo.empty(); }
  NodeId front() const { return fifo.front(); }
  void pop() { fifo.pop_front(); }
};

struct InfeasibleInfo {
  NodeId node = 0;
  Bytes deficit = 0;
};

struct ActionCounts {
  std::uint64_t evict = 0;
  std::uint64_t offload = 0;
  std::uint64_t reload = 0;
  std::uint64_t recompute = 0;
  std::uint64_t prefetch_reload = 0;
  std::uint64_t recompute_of_swapout = 0;
};

struct RunResult {
  Timeline timeline;
  ResidentSet final_set;
  std::optional<InfeasibleInfo> infeasible;

  Bytes peak_bytes = 0;
  MicroTime wall_time_us = 0;
  MicroDur total_stall_us = 0;
  MicroDur copy_busy_us = 0;   // total copy work, wherever it ran
  MicroDur copy_stall_us = 0;  // compute time lost to copies
  ActionCounts counts;
  // Release decisions in the order they were taken; feed back through
  // EngineConfig::scripted_decisions to replay them under other settings.
  std::vector<std::pair<NodeId, ReleaseAction>> decisions;

  bool completed() const { return !infeasible.has_value(); }
};

RunResult run_iteration(const Trace& trace, const EngineConfig& cfg);

struct ComparisonCell {
  Bytes budget = 0;
  PolicyMode policy = PolicyMode::Delta;
  Heuristic heuristic = Heuristic::Base;
  RunResult result;
};

struct ComparisonReport {
  std::string trace_name;
  RunResult baseline;  // unconstrained baseline for the same trace
  std::vector<ComparisonCell> cells;  // ordered by (budget, policy, heuristic)
};

ComparisonReport run_comparison(const Trace& trace,
                                const std::vector<Bytes>& budgets,
                                const std::vector<PolicyMode>& policies,
                                const std::vector<Heuristic>& heuristics,
                                const EngineConfig& base_cfg);

// Baseline-policy run with a budget large enough to always complete.
RunResult run_unconstrained_baseline(const Trace& trace,
                                     const EngineConfig& base_cfg);

}  // namespace deltasim
