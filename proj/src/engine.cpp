#include "deltasim/engine.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <queue>
#include <unordered_map>

namespace deltasim {

const char* to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::Delta: return "delta";
    case PolicyMode::RecomputeOnly: return "recompute-only";
    case PolicyMode::OffloadOnly: return "offload-only";
    case PolicyMode::Baseline: return "baseline";
  }
  return "?";
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Compute: return "Compute";
    case EventKind::Offload: return "Offload";
    case EventKind::Reload: return "Reload";
    case EventKind::Recompute: return "Recompute";
    case EventKind::Stall: return "Stall";
    case EventKind::Evict: return "Evict";
    case EventKind::Use: return "Use";
    case EventKind::Free: return "Free";
  }
  return "?";
}

Bytes EngineConfig::watermark_bytes() const {
  return static_cast<Bytes>(static_cast<U128>(budget) *
                            watermark_fraction.num / watermark_fraction.den);
}

void OffloadQueue::remove(NodeId id) {
  fifo.erase(std::remove(fifo.begin(), fifo.end(), id), fifo.end());
}

// Declared in policy.cpp; one-way transfer time regardless of cost mode.
MicroDur transfer_time_us(Bytes m, const CostModel& cm);

namespace {

struct InfeasibleEx {
  InfeasibleInfo info;
};

struct Completion {
  MicroTime ts;
  std::uint64_t seq;
  enum Kind : std::uint8_t { OffloadLand, ReloadLand } kind;
  NodeId node;
  Bytes bytes;
};

struct CompletionLater {
  bool operator()(const Completion& a, const Completion& b) const {
    return a.ts != b.ts ? a.ts > b.ts : a.seq > b.seq;
  }
};

bool eligible_recompute_only(const TensorRecord& r) {
  return !r.evict_pinned && !r.uncomputable;
}

bool eligible_offload_only(const TensorRecord& r) { return !r.offload_pinned; }

class Engine {
 public:
  Engine(const Trace& trace, const EngineConfig& cfg)
      : trace_(trace),
        cfg_(cfg),
        pool_(cfg.budget),
        compute_(StreamKind::Compute),
        copy_(StreamKind::Copy) {
    index_trace();
  }

  RunResult run() {
    try {
      for (std::size_t k = 0; k < trace_.schedule.size(); ++k) {
        const AccessEvent& ev = trace_.schedule[k];
        if (phase_ == Phase::Forward && ev.phase == Phase::Backward) {
          phase_ = Phase::Backward;
          prefetch_burst();
        }
        std::size_t compute_events_before = compute_.log().size();
        if (ev.kind == AccessKind::Produce) {
          do_produce(ev.node, k);
        } else {
          do_use(ev.node, k);
        }
        sweep_dead(k);
        if (phase_ == Phase::Backward &&
            compute_.log().size() > compute_events_before) {
          prefetch_burst();
        }
      }
    } catch (const InfeasibleEx& e) {
      infeasible_ = e.info;
    }
    drain(std::numeric_limits<MicroTime>::max());

    RunResult out;
    out.timeline = std::move(timeline_);
    out.final_set = std::move(set_);
    out.infeasible = infeasible_;
    out.peak_bytes = pool_.high_watermark();
    out.wall_time_us = std::max(compute_.busy_until(), copy_.busy_until());
    out.total_stall_us = total_stall_;
    out.copy_busy_us = copy_busy_;
    out.copy_stall_us = copy_stall_;
    out.counts = counts_;
    out.decisions = std::move(decision_log_);
    return out;
  }

 private:
  // ---- trace preprocessing -------------------------------------------

  void index_trace() {
    for (std::size_t i = 0; i < trace_.nodes.size(); ++i) {
      index_[trace_.nodes[i].id] = i;
    }
    std::size_t n = trace_.nodes.size();
    last_access_.assign(n, -1);
    auto touch = [&](NodeId id, std::ptrdiff_t k) {
      std::size_t i = index_.at(id);
      if (k > last_access_[i]) last_access_[i] = k;
    };
    for (std::size_t k = 0; k < trace_.schedule.size(); ++k) {
      const AccessEvent& ev = trace_.schedule[k];
      touch(ev.node, static_cast<std::ptrdiff_t>(k));
      if (ev.kind == AccessKind::Produce) {
        for (NodeId p : trace_.nodes[index_.at(ev.node)].parents) {
          touch(p, static_cast<std::ptrdiff_t>(k));
        }
      }
    }
    // An uncomputable tensor freed without a host copy would be lost to any
    // later recompute closure of a descendant, so it may only be reclaimed
    // at its own last access if a copy exists; otherwise it waits until
    // every descendant access has passed.
    extended_last_ = last_access_;
    for (std::size_t i = n; i-- > 0;) {
      for (NodeId p : trace_.nodes[i].parents) {
        std::size_t pi = index_.at(p);
        if (extended_last_[i] > extended_last_[pi]) {
          extended_last_[pi] = extended_last_[i];
        }
      }
    }
    reclaim_at_ = last_access_;
    death_list_.assign(trace_.schedule.size(), {});
    for (std::size_t i = 0; i < n; ++i) {
      if (last_access_[i] >= 0) {
        death_list_[static_cast<std::size_t>(last_access_[i])].push_back(
            trace_.nodes[i].id);
      }
      if (trace_.nodes[i].uncomputable &&
          extended_last_[i] > last_access_[i]) {
        death_list_[static_cast<std::size_t>(extended_last_[i])].push_back(
            trace_.nodes[i].id);
      }
    }
    pin_count_.assign(n, 0);
    dead_pending_.assign(n, false);
  }

  const OpNode& node_of(NodeId id) const {
    return trace_.nodes[index_.at(id)];
  }

  // ---- pinning --------------------------------------------------------

  void pin(NodeId id, std::vector<NodeId>& held) {
    std::size_t i = index_.at(id);
    if (pin_count_[i]++ == 0) set_.at(id).in_use = true;
    held.push_back(id);
  }

  void unpin_all(std::vector<NodeId>& held) {
    for (NodeId id : held) {
      std::size_t i = index_.at(id);
      if (--pin_count_[i] == 0) set_.at(id).in_use = false;
    }
    held.clear();
  }

  // ---- time and completions -------------------------------------------

  void log(EventKind kind, MicroTime ts, MicroDur dur, NodeId node,
           Bytes bytes, StreamKind stream, bool prefetch = false,
           std::uint32_t burst = 0) {
    timeline_.events.push_back(
        {ts, stream, kind, node, dur, bytes, phase_, prefetch, burst});
  }

  void drain(MicroTime up_to) {
    while (!pending_.empty() && pending_.top().ts <= up_to) {
      Completion c = pending_.top();
      pending_.pop();
      std::size_t i = index_.at(c.node);
      if (c.kind == Completion::OffloadLand) {
        set_.apply(c.node, TensorEvent::OffloadDone, c.ts);
        set_.apply(c.node, TensorEvent::FreeAfterOffload, c.ts);
        pool_.free(c.bytes);
        inflight_release_bytes_ -= c.bytes;
        inflight_done_.erase(c.node);
        if (dead_pending_[i]) {
          dead_pending_[i] = false;
          set_.apply(c.node, TensorEvent::FreeDead, c.ts);
        } else {
          queue_.push(c.node);
        }
      } else {
        set_.apply(c.node, TensorEvent::ReloadDone, c.ts);
        inflight_done_.erase(c.node);
        if (dead_pending_[i]) {
          dead_pending_[i] = false;
          pool_.free(c.bytes);
          set_.apply(c.node, TensorEvent::FreeDead, c.ts);
          log(EventKind::Free, c.ts, 0, c.node, c.bytes, StreamKind::Compute);
        } else {
          restored_.push_back(c.node);
        }
      }
    }
  }

  // Advances the clock to t, charging the wait to `cause`.
  void stall_until(MicroTime t, NodeId cause) {
    MicroTime before = clock_.now();
    MicroDur stall = clock_.wait_for(t);
    if (stall > 0) {
      log(EventKind::Stall, before, stall, cause, 0, StreamKind::Compute);
      total_stall_ += stall;
      copy_stall_ += stall;
    }
    drain(clock_.now());
  }

  // ---- release machinery ----------------------------------------------

  bool releases_allowed() const {
    return phase_ == Phase::Forward &&
           cfg_.policy_mode != PolicyMode::Baseline;
  }

  Bytes committed_used() const {
    return pool_.used() - inflight_release_bytes_;
  }

  bool release_one() {
    MicroTime now = clock_.now();
    NodeId victim;
    ReleaseAction action;
    if (scripted_pos_ < cfg_.scripted_decisions.size()) {
      std::tie(victim, action) = cfg_.scripted_decisions[scripted_pos_++];
      if (!set_.contains(victim) || !releasable(set_.at(victim))) {
        throw InternalError("scripted decision targets unreleasable node " +
                            std::to_string(victim));
      }
    } else {
      std::optional<NodeId> picked;
      switch (cfg_.policy_mode) {
        case PolicyMode::Delta:
          picked = select_victim(set_, cfg_.heuristic, now);
          break;
        case PolicyMode::RecomputeOnly:
          picked = select_victim(set_, cfg_.heuristic, now,
                                 eligible_recompute_only);
          break;
        case PolicyMode::OffloadOnly:
          picked =
              select_victim(set_, cfg_.heuristic, now, eligible_offload_only);
          break;
        case PolicyMode::Baseline:
          return false;
      }
      if (!picked) return false;
      victim = *picked;
      switch (cfg_.policy_mode) {
        case PolicyMode::Delta:
          action = decide(victim, set_, trace_, cfg_.cost_model, now).action;
          break;
        case PolicyMode::RecomputeOnly:
          action = ReleaseAction::Evict;
          break;
        default:
          action = ReleaseAction::Offload;
          break;
      }
    }
    decision_log_.emplace_back(victim, action);

    const TensorRecord& r = set_.at(victim);
    Bytes bytes = r.bytes;
    if (action == ReleaseAction::Evict) {
      set_.apply(victim, TensorEvent::EvictStart, now);
      pool_.free(bytes);
      counts_.evict += 1;
      log(EventKind::Evict, now, 0, victim, bytes, StreamKind::Compute);
      return true;
    }

    MicroDur dur = transfer_time_us(bytes, cfg_.cost_model);
    set_.apply(victim, TensorEvent::OffloadStart, now);
    counts_.offload += 1;
    copy_busy_ += dur;
    if (cfg_.overlap_enabled) {
      auto [start, end] = copy_.submit(now, dur, "Offload", victim);
      log(EventKind::Offload, start, dur, victim, bytes, StreamKind::Copy);
      pending_.push({end, seq_++, Completion::OffloadLand, victim, bytes});
      inflight_done_[victim] = end;
      inflight_release_bytes_ += bytes;
    } else {
      auto [start, end] = compute_.submit(now, dur, "Offload", victim);
      log(EventKind::Offload, start, dur, victim, bytes, StreamKind::Compute);
      clock_.advance_to(end);
      copy_stall_ += dur;
      set_.apply(victim, TensorEvent::OffloadDone, end);
      set_.apply(victim, TensorEvent::FreeAfterOffload, end);
      pool_.free(bytes);
      queue_.push(victim);
    }
    return true;
  }

  void watermark_release_loop() {
    Bytes mark = cfg_.watermark_bytes();
    while (committed_used() > mark) {
      if (!release_one()) break;
    }
  }

  // Makes n bytes available, releasing victims (forward) and waiting for
  // in-flight copies as needed. Throws InfeasibleEx when stuck.
  void alloc_bytes(Bytes n, NodeId for_node) {
    drain(clock_.now());
    while (pool_.available() < n) {
      bool commitments_cover = pool_.budget() - committed_used() >= n;
      if (!commitments_cover && releases_allowed() && release_one()) {
        continue;
      }
      if (!pending_.empty()) {
        Completion next = pending_.top();
        stall_until(next.ts, next.node);
        continue;
      }
      throw InfeasibleEx{{for_node, n - pool_.available()}};
    }
    if (std::holds_alternative<Insufficient>(pool_.try_alloc(n))) {
      throw InternalError("allocation failed after space was ensured");
    }
    if (releases_allowed()) watermark_release_loop();
  }

  // ---- residency ------------------------------------------------------

  // Access: a scheduled access; a computable swapped-out tensor is
  // recomputed in preference to reloading. ClosureDep: an ancestor needed
  // inside a restoration closure; its host copy is used directly, matching
  // the director's costing of swapout ancestors as freely available.
  enum class Restore : std::uint8_t { Access, ClosureDep };

  void ensure_resident(NodeId id, Restore mode = Restore::Access) {
    drain(clock_.now());
    TensorRecord& r = set_.at(id);
    if (r.on_gpu && r.copy_in_flight) {
      // Accessed while its offload is in flight: the tensor is committed to
      // leave, so wait for the copy to land and restore it like any other
      // swapped-out tensor.
      stall_until(inflight_done_.at(id), id);
    }
    if (set_.at(id).on_gpu) return;
    if (set_.at(id).swapout && set_.at(id).copy_in_flight) {
      stall_until(inflight_done_.at(id), id);  // join the in-flight reload
      return;
    }
    bool host_restorable =
        set_.at(id).swapout || (set_.at(id).dead && set_.at(id).cpu_copy_valid);
    if (host_restorable &&
        (set_.at(id).uncomputable || mode == Restore::ClosureDep)) {
      demand_reload(id);
      return;
    }
    rebuild(id);
  }

  void demand_reload(NodeId id) {
    Bytes bytes = set_.at(id).bytes;
    alloc_bytes(bytes, id);
    MicroDur dur = transfer_time_us(bytes, cfg_.cost_model);
    MicroTime now = clock_.now();
    set_.apply(id, TensorEvent::ReloadStart, now);
    queue_.remove(id);
    counts_.reload += 1;
    copy_busy_ += dur;
    if (cfg_.overlap_enabled) {
      auto [start, end] = copy_.submit(now, dur, "Reload", id);
      log(EventKind::Reload, start, dur, id, bytes, StreamKind::Copy);
      pending_.push({end, seq_++, Completion::ReloadLand, id, bytes});
      inflight_done_[id] = end;
      stall_until(end, id);
    } else {
      auto [start, end] = compute_.submit(now, dur, "Reload", id);
      log(EventKind::Reload, start, dur, id, bytes, StreamKind::Compute);
      clock_.advance_to(end);
      copy_stall_ += dur;
      set_.apply(id, TensorEvent::ReloadDone, end);
      restored_.push_back(id);
    }
  }

  // Restores an evicted / swapped-out-computable / dead-computable tensor
  // by re-running its operator; recurses through absent ancestors.
  void rebuild(NodeId id) {
    const OpNode& node = node_of(id);
    if (node.uncomputable) {
      const TensorRecord& r = set_.at(id);
      if (r.cpu_copy_valid) {
        demand_reload(id);
        return;
      }
      throw UnrecoverableError("node " + std::to_string(id) +
                               " is uncomputable and has no host copy");
    }
    std::vector<NodeId> held;
    for (NodeId p : node.parents) {
      ensure_resident(p, Restore::ClosureDep);
      pin(p, held);
    }
    bool was_swapout = set_.at(id).swapout;
    if (was_swapout) queue_.remove(id);
    alloc_bytes(node.output_bytes, id);
    MicroTime now = clock_.now();
    auto [start, end] =
        compute_.submit(now, node.compute_cost_us, "Recompute", id);
    clock_.advance_to(end);
    log(EventKind::Recompute, start, node.compute_cost_us, id,
        node.output_bytes, StreamKind::Compute);
    for (NodeId p : node.parents) set_.apply(p, TensorEvent::Use, end);
    set_.apply(id, TensorEvent::RecomputeDone, end);
    counts_.recompute += 1;
    if (was_swapout) counts_.recompute_of_swapout += 1;
    restored_.push_back(id);
    unpin_all(held);
  }

  // ---- schedule processing --------------------------------------------

  void do_produce(NodeId id, std::size_t k) {
    (void)k;
    const OpNode& node = node_of(id);
    std::vector<NodeId> held;
    for (NodeId p : node.parents) {
      ensure_resident(p);
      pin(p, held);
    }
    alloc_bytes(node.output_bytes, id);
    set_.produce(node, clock_.now(), phase_);
    pin(id, held);
    if (releases_allowed()) watermark_release_loop();
    MicroTime now = clock_.now();
    auto [start, end] =
        compute_.submit(now, node.compute_cost_us, "Compute", id);
    clock_.advance_to(end);
    log(EventKind::Compute, start, node.compute_cost_us, id,
        node.output_bytes, StreamKind::Compute);
    for (NodeId p : node.parents) set_.apply(p, TensorEvent::Use, end);
    set_.apply(id, TensorEvent::Use, end);
    unpin_all(held);
  }

  void do_use(NodeId id, std::size_t k) {
    (void)k;
    ensure_resident(id);
    MicroTime now = clock_.now();
    TensorRecord& r = set_.apply(id, TensorEvent::Use, now);
    log(EventKind::Use, now, 0, id, r.bytes, StreamKind::Compute);
  }

  // ---- reclamation ----------------------------------------------------

  void reclaim(NodeId id, std::size_t k) {
    if (!set_.contains(id)) return;
    TensorRecord& r = set_.at(id);
    if (r.dead) return;
    std::size_t i = index_.at(id);
    assert(pin_count_[i] == 0);
    // Must stay restorable: no host copy and a descendant may still trigger
    // a recompute closure that reloads it.
    if (trace_.nodes[i].uncomputable && !r.cpu_copy_valid &&
        extended_last_[i] > static_cast<std::ptrdiff_t>(k)) {
      return;
    }
    if (r.copy_in_flight) {
      dead_pending_[i] = true;
      return;
    }
    MicroTime now = clock_.now();
    if (r.on_gpu) {
      Bytes bytes = r.bytes;
      pool_.free(bytes);
      set_.apply(id, TensorEvent::FreeDead, now);
      log(EventKind::Free, now, 0, id, bytes, StreamKind::Compute);
    } else {
      if (r.swapout) queue_.remove(id);
      set_.apply(id, TensorEvent::FreeDead, now);
    }
  }

  void sweep_dead(std::size_t k) {
    for (NodeId id : death_list_[k]) reclaim(id, k);
    for (NodeId id : restored_) {
      std::size_t i = index_.at(id);
      if (reclaim_at_[i] >= 0 &&
          static_cast<std::size_t>(reclaim_at_[i]) <= k) {
        reclaim(id, k);
      }
    }
    restored_.clear();
  }

  // ---- prefetcher -----------------------------------------------------

  void prefetch_burst() {
    if (!cfg_.prefetch_enabled) return;
    drain(clock_.now());
    std::uint64_t count = 0;
    bool opened = false;
    while (!queue_.empty()) {
      NodeId head = queue_.front();
      Bytes bytes = set_.at(head).bytes;
      // "Memory is enough" means staying under the release watermark, the
      // same threshold the main loop uses for memory pressure. Backward
      // cannot release, so reloading past it would eat the headroom that
      // later restorations need.
      bool fits = pool_.used() + bytes <= cfg_.watermark_bytes();
      // Guard "memory is enough or reload_count < n": the And reading stops
      // at either bound; PaperOr keeps going on memory alone (the count arm
      // cannot make progress once the head no longer fits).
      if (cfg_.prefetch_guard == PrefetchGuard::And) {
        if (!fits || count >= cfg_.prefetch_limit) break;
      } else {
        if (!fits) break;
      }
      if (!opened) {
        opened = true;
        burst_ += 1;
      }
      if (std::holds_alternative<Insufficient>(pool_.try_alloc(bytes))) {
        throw InternalError("prefetch allocation failed after fit check");
      }
      MicroDur dur = transfer_time_us(bytes, cfg_.cost_model);
      MicroTime now = clock_.now();
      set_.apply(head, TensorEvent::ReloadStart, now);
      queue_.pop();
      counts_.reload += 1;
      counts_.prefetch_reload += 1;
      copy_busy_ += dur;
      if (cfg_.overlap_enabled) {
        auto [start, end] = copy_.submit(now, dur, "PrefetchReload", head);
        log(EventKind::Reload, start, dur, head, bytes, StreamKind::Copy,
            true, burst_);
        pending_.push({end, seq_++, Completion::ReloadLand, head, bytes});
        inflight_done_[head] = end;
      } else {
        auto [start, end] = compute_.submit(now, dur, "PrefetchReload", head);
        log(EventKind::Reload, start, dur, head, bytes, StreamKind::Compute,
            true, burst_);
        clock_.advance_to(end);
        copy_stall_ += dur;
        set_.apply(head, TensorEvent::ReloadDone, end);
        restored_.push_back(head);
      }
      count += 1;
    }
  }

  // ---- members --------------------------------------------------------

  const Trace& trace_;
  const EngineConfig& cfg_;

  std::unordered_map<NodeId, std::size_t> index_;
  std::vector<std::ptrdiff_t> last_access_;
  std::vector<std::ptrdiff_t> extended_last_;
  std::vector<std::ptrdiff_t> reclaim_at_;
  std::vector<std::vector<NodeId>> death_list_;

  Clock clock_;
  MemoryPool pool_;
  Stream compute_;
  Stream copy_;
  ResidentSet set_;
  OffloadQueue queue_;
  Timeline timeline_;
  std::priority_queue<Completion, std::vector<Completion>, CompletionLater>
      pending_;
  std::unordered_map<NodeId, MicroTime> inflight_done_;
  std::vector<std::uint32_t> pin_count_;
  std::vector<bool> dead_pending_;
  std::vector<NodeId> restored_;
  std::vector<std::pair<NodeId, ReleaseAction>> decision_log_;

  Phase phase_ = Phase::Forward;
  Bytes inflight_release_bytes_ = 0;
  std::uint64_t seq_ = 0;
  std::uint32_t burst_ = 0;
  std::size_t scripted_pos_ = 0;
  std::optional<InfeasibleInfo> infeasible_;
  ActionCounts counts_;
  MicroDur total_stall_ = 0;
  MicroDur copy_busy_ = 0;
  MicroDur copy_stall_ = 0;
};

}  // namespace

RunResult run_iteration(const Trace& trace, const EngineConfig& cfg) {
  if (!trace_is_valid(trace)) {
    throw ValidationErrorEx("run_iteration: trace fails validation");
  }
  Engine engine(trace, cfg);
  return engine.run();
}

RunResult run_unconstrained_baseline(const Trace& trace,
                                     const EngineConfig& base_cfg) {
  Bytes total = 0;
  for (const OpNode& n : trace.nodes) total += n.output_bytes;
  EngineConfig cfg = base_cfg;
  cfg.policy_mode = PolicyMode::Baseline;
  cfg.budget = total == 0 ? 1 : total;
  cfg.scripted_decisions.clear();
  return run_iteration(trace, cfg);
}

ComparisonReport run_comparison(const Trace& trace,
                                const std::vector<Bytes>& budgets,
                                const std::vector<PolicyMode>& policies,
                                const std::vector<Heuristic>& heuristics,
                                const EngineConfig& base_cfg) {
  ComparisonReport rep;
  rep.trace_name = trace.name;
  rep.baseline = run_unconstrained_baseline(trace, base_cfg);
  for (Bytes budget : budgets) {
    for (PolicyMode policy : policies) {
      for (Heuristic heuristic : heuristics) {
        EngineConfig cfg = base_cfg;
        cfg.budget = budget;
        cfg.policy_mode = policy;
        cfg.heuristic = heuristic;
        ComparisonCell cell;
        cell.budget = budget;
        cell.policy = policy;
        cell.heuristic = heuristic;
        cell.result = run_iteration(trace, cfg);
        rep.cells.push_back(std::move(cell));
      }
    }
  }
  return rep;
}

}  // namespace deltasim
