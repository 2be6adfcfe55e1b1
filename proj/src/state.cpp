#include "deltasim/state.hpp"

#include <sstream>

namespace deltasim {

const char* to_string(TensorEvent e) {
  switch (e) {
    case TensorEvent::Produce: return "Produce";
    case TensorEvent::Use: return "Use";
    case TensorEvent::EvictStart: return "EvictStart";
    case TensorEvent::OffloadStart: return "OffloadStart";
    case TensorEvent::OffloadDone: return "OffloadDone";
    case TensorEvent::ReloadStart: return "ReloadStart";
    case TensorEvent::ReloadDone: return "ReloadDone";
    case TensorEvent::RecomputeDone: return "RecomputeDone";
    case TensorEvent::FreeAfterOffload: return "FreeAfterOffload";
    case TensorEvent::FreeDead: return "FreeDead";
  }
  return "?";
}

bool TensorRecord::location_invariant_holds() const {
  if (dead) return !on_gpu && !in_use && !copy_in_flight;
  int locations = (on_gpu ? 1 : 0) + (evicted ? 1 : 0) + (swapout ? 1 : 0);
  if (locations != 1) return false;
  if (on_gpu && evicted) return false;
  if (swapout && (on_gpu || !cpu_copy_valid)) return false;
  if (evicted && cpu_copy_valid) return false;
  if (uncomputable && evicted) return false;
  if (in_use && !on_gpu) return false;
  return true;
}

MicroDur staleness(const TensorRecord& r, MicroTime now) {
  if (!r.on_gpu) {
    throw StateError("staleness: node " + std::to_string(r.node_id) +
                     " is not resident");
  }
  if (now <= r.last_access) return 1;
  return now - r.last_access;
}

namespace {

[[noreturn]] void illegal(const TensorRecord& r, TensorEvent ev) {
  std::ostringstream os;
  os << "illegal transition " << to_string(ev) << " on node " << r.node_id
     << " [on_gpu=" << r.on_gpu << " evicted=" << r.evicted
     << " swapout=" << r.swapout << " uncomputable=" << r.uncomputable
     << " in_use=" << r.in_use << " copy_in_flight=" << r.copy_in_flight
     << " cpu_copy_valid=" << r.cpu_copy_valid << " dead=" << r.dead << "]";
  throw IllegalTransition(os.str());
}

}  // namespace

TensorRecord transition(const TensorRecord& r, TensorEvent ev, MicroTime now) {
  TensorRecord next = r;
  switch (ev) {
    case TensorEvent::Produce:
      // Initial materialization only; restoration goes through
      // RecomputeDone / ReloadDone.
      if (r.on_gpu || r.evicted || r.swapout || r.dead) illegal(r, ev);
      next.on_gpu = true;
      next.last_access = now;
      break;
    case TensorEvent::Use:
      if (!r.on_gpu || r.dead) illegal(r, ev);
      next.last_access = now;
      break;
    case TensorEvent::EvictStart:
      if (!r.on_gpu || r.evict_pinned || r.in_use || r.uncomputable ||
          r.copy_in_flight || r.dead) {
        illegal(r, ev);
      }
      next.on_gpu = false;
      next.evicted = true;
      next.cpu_copy_valid = false;
      break;
    case TensorEvent::OffloadStart:
      if (!r.on_gpu || r.offload_pinned || r.in_use || r.copy_in_flight ||
          r.dead) {
        illegal(r, ev);
      }
      next.copy_in_flight = true;
      break;
    case TensorEvent::OffloadDone:
      if (!r.on_gpu || !r.copy_in_flight) illegal(r, ev);
      next.copy_in_flight = false;
      next.cpu_copy_valid = true;
      break;
    case TensorEvent::FreeAfterOffload:
      if (!r.on_gpu || !r.cpu_copy_valid || r.copy_in_flight || r.in_use) {
        illegal(r, ev);
      }
      next.on_gpu = false;
      next.swapout = true;
      break;
    case TensorEvent::ReloadStart:
      // Also revives a dead tensor whose host copy survived.
      if (!(r.swapout || r.dead) || !r.cpu_copy_valid || r.copy_in_flight) {
        illegal(r, ev);
      }
      next.copy_in_flight = true;
      break;
    case TensorEvent::ReloadDone:
      if (!(r.swapout || r.dead) || !r.copy_in_flight) illegal(r, ev);
      next.on_gpu = true;
      next.swapout = false;
      next.copy_in_flight = false;
      // The host copy persists: an offloaded tensor stays reloadable for
      // the rest of the iteration unless eviction discards it.
      next.dead = false;
      next.last_access = now;
      break;
    case TensorEvent::RecomputeDone:
      if (r.on_gpu || r.in_use || r.copy_in_flight || r.uncomputable) {
        illegal(r, ev);
      }
      if (!r.evicted && !r.swapout && !r.dead) illegal(r, ev);
      next.on_gpu = true;
      next.evicted = false;
      next.swapout = false;
      next.cpu_copy_valid = false;  // swapout source drops its host copy
      next.dead = false;
      next.last_access = now;
      break;
    case TensorEvent::FreeDead:
      if (r.in_use || r.copy_in_flight || r.dead) illegal(r, ev);
      next.on_gpu = false;
      next.evicted = false;
      next.swapout = false;
      next.dead = true;
      next.died_swapout = r.swapout;
      // Host copies persist through death: host memory is untracked and a
      // late recompute closure may still reload an uncomputable ancestor.
      break;
  }
  return next;
}

TensorRecord& ResidentSet::produce(const OpNode& node, MicroTime now,
                                   Phase phase) {
  auto [it, inserted] = records_.try_emplace(node.id);
  if (!inserted) {
    throw IllegalTransition("node " + std::to_string(node.id) +
                            " produced twice");
  }
  TensorRecord& r = it->second;
  r.node_id = node.id;
  r.bytes = node.output_bytes;
  r.own_cost = node.compute_cost_us;
  r.uncomputable = node.uncomputable;
  r.evict_pinned = node.evict_pinned;
  r.offload_pinned = node.offload_pinned;
  r.produced_backward = phase == Phase::Backward;
  r = transition(r, TensorEvent::Produce, now);
  resident_bytes_ += r.bytes;
  return r;
}

TensorRecord& ResidentSet::apply(NodeId id, TensorEvent ev, MicroTime now) {
  auto it = records_.find(id);
  if (it == records_.end()) {
    throw IllegalTransition("node " + std::to_string(id) +
                            " has no record for event " +
                            std::string(to_string(ev)));
  }
  TensorRecord& r = it->second;
  bool was_resident = r.on_gpu;
  r = transition(r, ev, now);
  if (was_resident && !r.on_gpu) {
    resident_bytes_ -= r.bytes;
  } else if (!was_resident && r.on_gpu) {
    resident_bytes_ += r.bytes;
  }
#ifndef NDEBUG
  if (++transitions_ % 1000 == 0) check_resident_bytes();
#endif
  return r;
}

bool ResidentSet::contains(NodeId id) const { return records_.contains(id); }

const TensorRecord& ResidentSet::at(NodeId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) {
    throw StateError("node " + std::to_string(id) + " was never produced");
  }
  return it->second;
}

TensorRecord& ResidentSet::at(NodeId id) {
  auto it = records_.find(id);
  if (it == records_.end()) {
    throw StateError("node " + std::to_string(id) + " was never produced");
  }
  return it->second;
}

Bytes ResidentSet::recount_resident_bytes() const {
  Bytes sum = 0;
  for (const auto& [id, r] : records_) {
    if (r.on_gpu) sum += r.bytes;
  }
  return sum;
}

void ResidentSet::check_resident_bytes() const {
  Bytes recount = recount_resident_bytes();
  if (recount != resident_bytes_) {
    throw InternalError("resident_bytes drift: cached " +
                        std::to_string(resident_bytes_) + " vs recount " +
                        std::to_string(recount));
  }
}

}  // namespace deltasim
