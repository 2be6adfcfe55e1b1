#pragma once

#include <string>
#include <vector>

#include "deltasim/engine.hpp"
#include "deltasim/trace.hpp"
#include "deltasim/types.hpp"

namespace deltasim::oracle {

enum class ViolationCode {
  BudgetExceeded,
  UseWhileAbsent,
  BackwardRelease,
  PrefetchOverflow,
  NonmonotoneClock,
};

const char* to_string(ViolationCode c);

struct Violation {
  ViolationCode code;
  MicroTime ts = 0;
  NodeId node = 0;
  std::string detail;
};

// Re-simulates residency and memory from the event log with bookkeeping
// that shares nothing with the engine. Empty result certifies the run.
std::vector<Violation> replay_check(const Timeline& timeline,
                                    const Trace& trace,
                                    const EngineConfig& cfg);

// Exhaustive minimum peak residency over release/restore schedules that
// honor access safety and forward-only releases. Restoration of a released
// tensor may recompute (needs the ancestor closure) or reload; allowing
// reload for computable tensors keeps this a true lower bound for engine
// runs that reload offloaded computable tensors.
Bytes brute_force_min_peak(const Trace& trace, std::size_t max_nodes = 12);

}  // namespace deltasim::oracle
