#include "deltasim/oracle.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

namespace deltasim::oracle {

const char* to_string(ViolationCode c) {
  switch (c) {
    case ViolationCode::BudgetExceeded: return "BudgetExceeded";
    case ViolationCode::UseWhileAbsent: return "UseWhileAbsent";
    case ViolationCode::BackwardRelease: return "BackwardRelease";
    case ViolationCode::PrefetchOverflow: return "PrefetchOverflow";
    case ViolationCode::NonmonotoneClock: return "NonmonotoneClock";
  }
  return "?";
}

namespace {

// Independent per-node bookkeeping. An offload keeps the data readable
// until its copy lands (`pending_removal`), matching release-at-completion.
struct NodeBook {
  bool produced = false;
  bool resident = false;
  bool host_copy = false;
  MicroTime host_ready = 0;
  MicroTime ready = 0;  // data readable from here on
  std::optional<MicroTime> pending_removal;

  void settle(MicroTime now) {
    if (pending_removal && *pending_removal <= now) {
      resident = false;
      pending_removal.reset();
    }
  }

  bool readable(MicroTime at) const {
    if (!resident || ready > at) return false;
    if (pending_removal && at >= *pending_removal) return false;
    return true;
  }
};

}  // namespace

std::vector<Violation> replay_check(const Timeline& timeline,
                                    const Trace& trace,
                                    const EngineConfig& cfg) {
  std::vector<Violation> out;
  auto flag = [&](ViolationCode code, MicroTime ts, NodeId node,
                  std::string detail) {
    out.push_back({code, ts, node, std::move(detail)});
  };

  std::unordered_map<NodeId, const OpNode*> defs;
  for (const OpNode& n : trace.nodes) defs[n.id] = &n;

  struct Delta {
    MicroTime ts;
    std::int64_t bytes;
  };
  std::vector<Delta> deltas;

  std::unordered_map<NodeId, NodeBook> book;
  MicroTime stream_work_head[2] = {0, 0};
  MicroTime stream_last_ts[2] = {0, 0};
  bool seen_backward = false;
  std::map<std::uint32_t, std::uint64_t> burst_counts;

  for (std::size_t seq = 0; seq < timeline.events.size(); ++seq) {
    const TimelineEvent& e = timeline.events[seq];
    MicroTime end_ts = e.ts + e.duration;
    int tid = e.stream == StreamKind::Compute ? 0 : 1;

    if (e.ts < stream_last_ts[tid]) {
      flag(ViolationCode::NonmonotoneClock, e.ts, e.node,
           std::string(to_string(e.kind)) +
               " starts before an earlier event on the same stream");
    }
    stream_last_ts[tid] = e.ts;
    if (e.duration > 0) {
      if (e.ts < stream_work_head[tid]) {
        flag(ViolationCode::NonmonotoneClock, e.ts, e.node,
             std::string(to_string(e.kind)) +
                 " overlaps prior work on its stream");
      }
      if (end_ts > stream_work_head[tid]) stream_work_head[tid] = end_ts;
    }

    if (e.phase == Phase::Backward) seen_backward = true;

    if (e.kind == EventKind::Stall) continue;

    auto dit = defs.find(e.node);
    if (dit == defs.end()) {
      flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
           "event references a node that is not in the trace");
      continue;
    }
    const OpNode& def = *dit->second;
    NodeBook& nb = book[e.node];
    nb.settle(e.ts);

    auto check_parents_readable = [&]() {
      for (NodeId p : def.parents) {
        NodeBook& pb = book[p];
        pb.settle(e.ts);
        if (!pb.readable(e.ts)) {
          flag(ViolationCode::UseWhileAbsent, e.ts, p,
               "parent read by node " + std::to_string(e.node) +
                   " while absent");
        }
      }
    };

    switch (e.kind) {
      case EventKind::Compute:
      case EventKind::Recompute: {
        if (nb.resident) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               std::string(to_string(e.kind)) +
                   " of a node that is already resident");
        }
        if (e.kind == EventKind::Recompute && !nb.produced) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Recompute without a prior production and release");
        }
        check_parents_readable();
        nb.produced = true;
        nb.resident = true;
        nb.ready = end_ts;
        if (e.kind == EventKind::Recompute) nb.host_copy = false;
        deltas.push_back({e.ts, static_cast<std::int64_t>(e.bytes)});
        break;
      }
      case EventKind::Reload: {
        if (nb.resident) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Reload of a resident node");
        }
        if (!nb.host_copy || nb.host_ready > e.ts) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Reload without a completed offload");
        }
        nb.produced = true;
        nb.resident = true;
        nb.ready = end_ts;
        // the host copy persists after a reload
        deltas.push_back({e.ts, static_cast<std::int64_t>(e.bytes)});
        if (e.prefetch) burst_counts[e.burst] += 1;
        break;
      }
      case EventKind::Evict: {
        if (e.phase == Phase::Backward) {
          flag(ViolationCode::BackwardRelease, e.ts, e.node,
               "Evict in the backward phase");
        }
        if (!nb.readable(e.ts)) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Evict of an absent node");
        } else if (nb.pending_removal) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Evict during an in-flight offload");
        }
        if (def.uncomputable) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Evict of an uncomputable node");
        }
        nb.resident = false;
        nb.host_copy = false;  // eviction keeps no copy anywhere
        deltas.push_back({e.ts, -static_cast<std::int64_t>(e.bytes)});
        break;
      }
      case EventKind::Offload: {
        if (e.phase == Phase::Backward) {
          flag(ViolationCode::BackwardRelease, e.ts, e.node,
               "Offload in the backward phase");
        }
        if (!nb.readable(e.ts)) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Offload of an absent node");
        } else if (nb.pending_removal) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Offload of a node already being offloaded");
        }
        nb.pending_removal = end_ts;
        nb.host_copy = true;
        nb.host_ready = end_ts;
        deltas.push_back({end_ts, -static_cast<std::int64_t>(e.bytes)});
        break;
      }
      case EventKind::Free: {
        if (!nb.readable(e.ts)) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Free of an absent node");
        } else if (nb.pending_removal) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Free during an in-flight offload");
        }
        nb.resident = false;
        deltas.push_back({e.ts, -static_cast<std::int64_t>(e.bytes)});
        break;
      }
      case EventKind::Use: {
        if (!nb.readable(e.ts)) {
          flag(ViolationCode::UseWhileAbsent, e.ts, e.node,
               "Use of an absent node");
        }
        break;
      }
      case EventKind::Stall:
        break;
    }
  }

  // Schedule correlation: Compute events mirror Produce order, Use markers
  // mirror Use order; a truncated run yields a proper prefix.
  {
    std::vector<NodeId> schedule_produces;
    std::vector<NodeId> schedule_uses;
    for (const AccessEvent& ev : trace.schedule) {
      (ev.kind == AccessKind::Produce ? schedule_produces : schedule_uses)
          .push_back(ev.node);
    }
    std::vector<NodeId> log_produces;
    std::vector<NodeId> log_uses;
    for (const TimelineEvent& e : timeline.events) {
      if (e.kind == EventKind::Compute) log_produces.push_back(e.node);
      if (e.kind == EventKind::Use) log_uses.push_back(e.node);
    }
    auto is_prefix = [](const std::vector<NodeId>& log,
                        const std::vector<NodeId>& sched) {
      return log.size() <= sched.size() &&
             std::equal(log.begin(), log.end(), sched.begin());
    };
    if (!is_prefix(log_produces, schedule_produces)) {
      flag(ViolationCode::UseWhileAbsent, 0, 0,
           "Compute events do not follow the schedule's Produce order");
    }
    if (!is_prefix(log_uses, schedule_uses)) {
      flag(ViolationCode::UseWhileAbsent, 0, 0,
           "Use markers do not follow the schedule's Use order");
    }
  }

  // Budget: at equal timestamps frees land before allocations, matching
  // completion draining ahead of allocation.
  std::stable_sort(deltas.begin(), deltas.end(),
                   [](const Delta& a, const Delta& b) {
                     if (a.ts != b.ts) return a.ts < b.ts;
                     return a.bytes < b.bytes;
                   });
  std::int64_t used = 0;
  for (const Delta& d : deltas) {
    used += d.bytes;
    if (used < 0) {
      flag(ViolationCode::BudgetExceeded, d.ts, 0,
           "more bytes freed than allocated");
      used = 0;
    } else if (static_cast<Bytes>(used) > cfg.budget) {
      flag(ViolationCode::BudgetExceeded, d.ts, 0,
           "usage " + std::to_string(used) + " exceeds budget " +
               std::to_string(cfg.budget));
    }
  }

  if (cfg.prefetch_guard == PrefetchGuard::And) {
    for (const auto& [burst, count] : burst_counts) {
      if (count > cfg.prefetch_limit) {
        flag(ViolationCode::PrefetchOverflow, 0, 0,
             "burst " + std::to_string(burst) + " issued " +
                 std::to_string(count) + " reloads with limit " +
                 std::to_string(cfg.prefetch_limit));
      }
    }
  }

  // Phase order is driven by the compute stream; copy-stream work submitted
  // late in forward may legitimately start after backward began.
  if (seen_backward) {
    bool backward_started = false;
    for (const TimelineEvent& e : timeline.events) {
      if (e.stream != StreamKind::Compute) continue;
      if (e.phase == Phase::Backward) {
        backward_started = true;
      } else if (backward_started) {
        flag(ViolationCode::NonmonotoneClock, e.ts, e.node,
             "forward-phase compute-stream event after the backward phase "
             "began");
        break;
      }
    }
  }

  return out;
}

namespace {

struct SearchContext {
  const Trace* trace = nullptr;
  std::size_t n = 0;
  std::vector<Bytes> bytes;
  std::vector<std::uint32_t> parent_mask;
  std::vector<bool> unreleasable;  // both pins set
  std::vector<std::uint32_t> alive_after;  // nodes alive after event k
  std::unordered_map<NodeId, std::size_t> index;
  std::vector<Bytes> memo;
  std::vector<bool> memo_set;

  Bytes mask_bytes(std::uint32_t mask) const {
    Bytes sum = 0;
    while (mask != 0) {
      unsigned bit = static_cast<unsigned>(__builtin_ctz(mask));
      sum += bytes[bit];
      mask &= mask - 1;
    }
    return sum;
  }
};

// Minimum achievable peak from event k given the resident set. Forward
// events may first release any releasable subset; restoration materializes
// exactly the absent required tensors (reload needs nothing; a recompute
// plan would materialize a superset, never lowering the peak).
Bytes search(SearchContext& ctx, std::size_t k, std::uint32_t resident) {
  const auto& schedule = ctx.trace->schedule;
  if (k == schedule.size()) return 0;
  std::size_t memo_key = k * (std::size_t{1} << ctx.n) + resident;
  if (ctx.memo_set[memo_key]) return ctx.memo[memo_key];

  const AccessEvent& ev = schedule[k];
  std::size_t xi = ctx.index.at(ev.node);
  std::uint32_t xbit = std::uint32_t{1} << xi;

  auto settle = [&](std::uint32_t kept) -> Bytes {
    std::uint32_t required =
        ev.kind == AccessKind::Produce ? ctx.parent_mask[xi] : xbit;
    std::uint32_t working = kept | required;
    Bytes peak = ctx.mask_bytes(working);
    std::uint32_t after = working;
    if (ev.kind == AccessKind::Produce) {
      peak += ctx.bytes[xi];
      after |= xbit;
    }
    after &= ctx.alive_after[k];
    Bytes tail = search(ctx, k + 1, after);
    return peak > tail ? peak : tail;
  };

  Bytes best = settle(resident);
  if (ev.phase == Phase::Forward) {
    std::uint32_t releasable = resident;
    for (std::size_t i = 0; i < ctx.n; ++i) {
      if (ctx.unreleasable[i]) releasable &= ~(std::uint32_t{1} << i);
    }
    std::uint32_t kept_base = resident & ~releasable;
    for (std::uint32_t sub = (releasable - 1) & releasable;;
         sub = (sub - 1) & releasable) {
      if (releasable == 0) break;
      std::uint32_t kept = kept_base | sub;  // sub = kept part
      Bytes v = settle(kept);
      if (v < best) best = v;
      if (sub == 0) break;
    }
  }

  ctx.memo[memo_key] = best;
  ctx.memo_set[memo_key] = true;
  return best;
}

}  // namespace

Bytes brute_force_min_peak(const Trace& trace, std::size_t max_nodes) {
  if (max_nodes > 20) max_nodes = 20;
  if (trace.nodes.size() > max_nodes) {
    throw TooLarge("brute_force_min_peak: " +
                   std::to_string(trace.nodes.size()) +
                   " nodes exceeds the cap of " + std::to_string(max_nodes));
  }
  if (!trace_is_valid(trace)) {
    throw ValidationErrorEx("brute_force_min_peak: trace fails validation");
  }

  SearchContext ctx;
  ctx.trace = &trace;
  ctx.n = trace.nodes.size();
  for (std::size_t i = 0; i < ctx.n; ++i) ctx.index[trace.nodes[i].id] = i;
  ctx.bytes.resize(ctx.n);
  ctx.parent_mask.assign(ctx.n, 0);
  ctx.unreleasable.resize(ctx.n);
  for (std::size_t i = 0; i < ctx.n; ++i) {
    const OpNode& node = trace.nodes[i];
    ctx.bytes[i] = node.output_bytes;
    ctx.unreleasable[i] = node.evict_pinned && node.offload_pinned;
    for (NodeId p : node.parents) {
      ctx.parent_mask[i] |= std::uint32_t{1} << ctx.index.at(p);
    }
  }

  // Tensors leave at their own last access. Anything needed again restores
  // by reload in this model, so freeing this early is always legal, and the
  // engine only ever holds tensors at least this long.
  std::vector<std::ptrdiff_t> last(ctx.n, -1);
  auto touch = [&](NodeId id, std::ptrdiff_t k) {
    std::size_t i = ctx.index.at(id);
    if (k > last[i]) last[i] = k;
  };
  for (std::size_t k = 0; k < trace.schedule.size(); ++k) {
    const AccessEvent& ev = trace.schedule[k];
    touch(ev.node, static_cast<std::ptrdiff_t>(k));
    if (ev.kind == AccessKind::Produce) {
      for (NodeId p : trace.nodes[ctx.index.at(ev.node)].parents) {
        touch(p, static_cast<std::ptrdiff_t>(k));
      }
    }
  }
  ctx.alive_after.assign(trace.schedule.size(), 0);
  for (std::size_t k = 0; k < trace.schedule.size(); ++k) {
    std::uint32_t mask = 0;
    for (std::size_t i = 0; i < ctx.n; ++i) {
      if (last[i] > static_cast<std::ptrdiff_t>(k)) {
        mask |= std::uint32_t{1} << i;
      }
    }
    ctx.alive_after[k] = mask;
  }

  std::size_t states = trace.schedule.size() * (std::size_t{1} << ctx.n);
  ctx.memo.assign(states, 0);
  ctx.memo_set.assign(states, false);
  return search(ctx, 0, 0);
}

}  // namespace deltasim::oracle
