#include "deltasim/trace.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace deltasim {

using ordered_json = nlohmann::ordered_json;

std::string u128_to_string(U128 v) {
  if (v == 0) return "0";
  std::string out;
  while (v > 0) {
    out.push_back(static_cast<char>('0' + static_cast<unsigned>(v % 10)));
    v /= 10;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::optional<std::size_t> Trace::index_of(NodeId id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  return std::nullopt;
}

const OpNode* Trace::find(NodeId id) const {
  auto idx = index_of(id);
  return idx ? &nodes[*idx] : nullptr;
}

const char* to_string(TraceViolationCode c) {
  switch (c) {
    case TraceViolationCode::DuplicateNodeId: return "DuplicateNodeId";
    case TraceViolationCode::CycleOrForwardRef: return "CycleOrForwardRef";
    case TraceViolationCode::UncomputableHasParents:
      return "UncomputableHasParents";
    case TraceViolationCode::UncomputableNotEvictPinned:
      return "UncomputableNotEvictPinned";
    case TraceViolationCode::BothPinned: return "BothPinned";
    case TraceViolationCode::DanglingNodeRef: return "DanglingNodeRef";
    case TraceViolationCode::UseBeforeProduce: return "UseBeforeProduce";
    case TraceViolationCode::DuplicateProduce: return "DuplicateProduce";
    case TraceViolationCode::ParentNotProduced: return "ParentNotProduced";
    case TraceViolationCode::ForwardAfterBackward:
      return "ForwardAfterBackward";
    case TraceViolationCode::ZeroOutputBytes: return "ZeroOutputBytes";
  }
  return "?";
}

std::vector<TraceViolation> validate_trace(const Trace& t) {
  std::vector<TraceViolation> out;
  auto node_error = [&](TraceViolationCode code, NodeId id, std::string msg) {
    out.push_back({code, Severity::Error, id, std::nullopt, std::move(msg)});
  };
  auto event_error = [&](TraceViolationCode code, std::size_t idx,
                         std::string msg) {
    out.push_back({code, Severity::Error, std::nullopt, idx, std::move(msg)});
  };

  std::unordered_set<NodeId> declared;
  for (const OpNode& n : t.nodes) {
    if (!declared.insert(n.id).second) {
      node_error(TraceViolationCode::DuplicateNodeId, n.id,
                 "node " + std::to_string(n.id) + " declared more than once");
      continue;
    }
    for (NodeId p : n.parents) {
      if (p == n.id || !declared.contains(p)) {
        node_error(TraceViolationCode::CycleOrForwardRef, n.id,
                   "node " + std::to_string(n.id) + " parent " +
                       std::to_string(p) +
                       " is not a previously declared node");
      }
    }
    if (n.uncomputable && !n.parents.empty()) {
      node_error(TraceViolationCode::UncomputableHasParents, n.id,
                 "uncomputable node " + std::to_string(n.id) +
                     " has parents");
    }
    if (n.uncomputable && !n.evict_pinned) {
      node_error(TraceViolationCode::UncomputableNotEvictPinned, n.id,
                 "uncomputable node " + std::to_string(n.id) +
                     " must be evict_pinned");
    }
    if (n.evict_pinned && n.offload_pinned) {
      out.push_back({TraceViolationCode::BothPinned, Severity::Warning, n.id,
                     std::nullopt,
                     "node " + std::to_string(n.id) +
                         " is both evict_pinned and offload_pinned; it can "
                         "never be released"});
    }
    if (n.output_bytes == 0) {
      node_error(TraceViolationCode::ZeroOutputBytes, n.id,
                 "node " + std::to_string(n.id) + " has zero output_bytes");
    }
  }

  std::unordered_set<NodeId> produced;
  bool seen_backward = false;
  for (std::size_t i = 0; i < t.schedule.size(); ++i) {
    const AccessEvent& ev = t.schedule[i];
    if (!declared.contains(ev.node)) {
      event_error(TraceViolationCode::DanglingNodeRef, i,
                  "event " + std::to_string(i) +
                      " references undeclared node " +
                      std::to_string(ev.node));
      continue;
    }
    if (ev.phase == Phase::Backward) {
      seen_backward = true;
    } else if (seen_backward) {
      event_error(TraceViolationCode::ForwardAfterBackward, i,
                  "event " + std::to_string(i) +
                      " is Forward but follows a Backward event");
    }
    if (ev.kind == AccessKind::Produce) {
      if (!produced.insert(ev.node).second) {
        event_error(TraceViolationCode::DuplicateProduce, i,
                    "event " + std::to_string(i) + " produces node " +
                        std::to_string(ev.node) + " a second time");
      }
      const OpNode* n = t.find(ev.node);
      for (NodeId p : n->parents) {
        if (!produced.contains(p)) {
          event_error(TraceViolationCode::ParentNotProduced, i,
                      "event " + std::to_string(i) + " produces node " +
                          std::to_string(ev.node) + " before its parent " +
                          std::to_string(p));
        }
      }
    } else {
      if (!produced.contains(ev.node)) {
        event_error(TraceViolationCode::UseBeforeProduce, i,
                    "event " + std::to_string(i) + " uses node " +
                        std::to_string(ev.node) + " before it is produced");
      }
    }
  }
  return out;
}

bool trace_is_valid(const Trace& t) {
  for (const TraceViolation& v : validate_trace(t)) {
    if (v.severity == Severity::Error) return false;
  }
  return true;
}

namespace {

void reject_unknown_keys(const ordered_json& obj,
                         std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw SchemaError(where + ": unknown field '" + it.key() + "'");
    }
  }
}

const ordered_json& require(const ordered_json& obj, const char* key,
                            const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw SchemaError(where + ": missing field '" + key + "'");
  }
  return *it;
}

std::uint64_t as_u64(const ordered_json& j, const char* key,
                     const std::string& where) {
  if (!j.is_number_unsigned()) {
    throw SchemaError(where + ": field '" + key +
                      "' must be an unsigned integer");
  }
  return j.get<std::uint64_t>();
}

bool as_bool(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.is_boolean()) {
    throw SchemaError(where + ": field '" + key + "' must be a boolean");
  }
  return j.get<bool>();
}

std::string as_str(const ordered_json& j, const char* key,
                   const std::string& where) {
  if (!j.is_string()) {
    throw SchemaError(where + ": field '" + key + "' must be a string");
  }
  return j.get<std::string>();
}

}  // namespace

Trace parse_trace(const std::string& text) {
  ordered_json root = ordered_json::parse(text, nullptr, false);
  if (root.is_discarded()) throw SchemaError("document is not well-formed JSON");
  if (!root.is_object()) throw SchemaError("top level must be an object");
  reject_unknown_keys(root, {"name", "nodes", "schedule"}, "top level");

  Trace t;
  t.name = as_str(require(root, "name", "top level"), "name", "top level");

  const ordered_json& nodes = require(root, "nodes", "top level");
  if (!nodes.is_array()) throw SchemaError("'nodes' must be an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    const ordered_json& jn = nodes[i];
    if (!jn.is_object()) throw SchemaError(where + ": must be an object");
    reject_unknown_keys(jn,
                        {"id", "name", "compute_cost_us", "output_bytes",
                         "parents", "uncomputable", "evict_pinned",
                         "offload_pinned"},
                        where);
    OpNode n;
    n.id = as_u64(require(jn, "id", where), "id", where);
    n.name = as_str(require(jn, "name", where), "name", where);
    n.compute_cost_us =
        as_u64(require(jn, "compute_cost_us", where), "compute_cost_us", where);
    n.output_bytes =
        as_u64(require(jn, "output_bytes", where), "output_bytes", where);
    const ordered_json& parents = require(jn, "parents", where);
    if (!parents.is_array()) {
      throw SchemaError(where + ": field 'parents' must be an array");
    }
    for (const ordered_json& p : parents) {
      n.parents.push_back(as_u64(p, "parents", where));
    }
    n.uncomputable =
        as_bool(require(jn, "uncomputable", where), "uncomputable", where);
    n.evict_pinned =
        as_bool(require(jn, "evict_pinned", where), "evict_pinned", where);
    n.offload_pinned =
        as_bool(require(jn, "offload_pinned", where), "offload_pinned", where);
    t.nodes.push_back(std::move(n));
  }

  const ordered_json& schedule = require(root, "schedule", "top level");
  if (!schedule.is_array()) throw SchemaError("'schedule' must be an array");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const std::string where = "schedule[" + std::to_string(i) + "]";
    const ordered_json& je = schedule[i];
    if (!je.is_object()) throw SchemaError(where + ": must be an object");
    reject_unknown_keys(je, {"node", "phase", "kind"}, where);
    AccessEvent ev;
    ev.node = as_u64(require(je, "node", where), "node", where);
    std::string phase = as_str(require(je, "phase", where), "phase", where);
    if (phase == "F") {
      ev.phase = Phase::Forward;
    } else if (phase == "B") {
      ev.phase = Phase::Backward;
    } else {
      throw SchemaError(where + ": field 'phase' must be \"F\" or \"B\"");
    }
    std::string kind = as_str(require(je, "kind", where), "kind", where);
    if (kind == "P") {
      ev.kind = AccessKind::Produce;
    } else if (kind == "U") {
      ev.kind = AccessKind::Use;
    } else {
      throw SchemaError(where + ": field 'kind' must be \"P\" or \"U\"");
    }
    t.schedule.push_back(ev);
  }

  for (const TraceViolation& v : validate_trace(t)) {
    if (v.severity == Severity::Error) throw ValidationErrorEx(v.message);
  }
  return t;
}

std::string serialize_trace(const Trace& t) {
  ordered_json root;
  root["name"] = t.name;
  ordered_json nodes = ordered_json::array();
  for (const OpNode& n : t.nodes) {
    ordered_json jn;
    jn["id"] = n.id;
    jn["name"] = n.name;
    jn["compute_cost_us"] = n.compute_cost_us;
    jn["output_bytes"] = n.output_bytes;
    jn["parents"] = n.parents;
    jn["uncomputable"] = n.uncomputable;
    jn["evict_pinned"] = n.evict_pinned;
    jn["offload_pinned"] = n.offload_pinned;
    nodes.push_back(std::move(jn));
  }
  root["nodes"] = std::move(nodes);
  ordered_json schedule = ordered_json::array();
  for (const AccessEvent& ev : t.schedule) {
    ordered_json je;
    je["node"] = ev.node;
    je["phase"] = ev.phase == Phase::Forward ? "F" : "B";
    je["kind"] = ev.kind == AccessKind::Produce ? "P" : "U";
    schedule.push_back(std::move(je));
  }
  root["schedule"] = std::move(schedule);
  return root.dump();
}

namespace {

// Deterministic +-10% jitter; seed 0 disables it. Uses the raw engine
// output (not a distribution) so jittered traces are identical across
// standard library implementations.
class Jitter {
 public:
  explicit Jitter(std::uint64_t seed) : enabled_(seed != 0), rng_(seed) {}

  std::uint64_t apply(std::uint64_t v) {
    if (!enabled_ || v == 0) return v;
    std::uint64_t pct = 90 + rng_() % 21;
    std::uint64_t scaled = v * pct / 100;
    return scaled == 0 ? 1 : scaled;
  }

 private:
  bool enabled_;
  std::mt19937_64 rng_;
};

}  // namespace

Trace gen_linear_chain(std::size_t n, Bytes bytes_per, MicroDur cost_per,
                       std::uint64_t seed) {
  if (n == 0) throw ArgumentError("gen_linear_chain: n must be >= 1");
  Jitter jitter(seed);
  Trace t;
  t.name = "linear" + std::to_string(n);
  for (std::size_t i = 0; i < n; ++i) {
    OpNode node;
    node.id = i;
    node.name = i == 0 ? "Input" : "LinearForward" + std::to_string(i);
    node.compute_cost_us = jitter.apply(cost_per);
    node.output_bytes = jitter.apply(bytes_per);
    if (i == 0) {
      node.uncomputable = true;
      node.evict_pinned = true;
    } else {
      node.parents.push_back(i - 1);
    }
    t.nodes.push_back(std::move(node));
  }
  for (std::size_t i = 0; i < n; ++i) {
    t.schedule.push_back({i, Phase::Forward, AccessKind::Produce});
  }
  // Gradient of layer i reads its stashed output and its input.
  for (std::size_t i = n; i-- > 0;) {
    t.schedule.push_back({i, Phase::Backward, AccessKind::Use});
    if (i >= 1) {
      t.schedule.push_back({i - 1, Phase::Backward, AccessKind::Use});
    }
  }
  return t;
}

Trace gen_resnet_like(std::size_t blocks, Bytes branch_bytes,
                      std::uint64_t seed) {
  if (blocks == 0) throw ArgumentError("gen_resnet_like: blocks must be >= 1");
  Jitter jitter(seed);
  Trace t;
  t.name = "resnet" + std::to_string(blocks);

  NodeId next = 0;
  auto add_node = [&](std::string name, MicroDur cost, Bytes bytes,
                      std::vector<NodeId> parents, bool uncomputable) {
    OpNode node;
    node.id = next++;
    node.name = std::move(name);
    node.compute_cost_us = jitter.apply(cost);
    node.output_bytes = jitter.apply(bytes);
    node.parents = std::move(parents);
    node.uncomputable = uncomputable;
    node.evict_pinned = uncomputable;
    t.nodes.push_back(std::move(node));
    return t.nodes.back().id;
  };

  // Conv outputs are the big, recompute-expensive tensors; the director
  // sends them to the host while BN/ReLU outputs are cheap to rebuild.
  // Add outputs are small, so the filter never picks them and they anchor
  // recompute closures at block boundaries.
  Bytes small = branch_bytes / 4 == 0 ? 1 : branch_bytes / 4;
  NodeId cur = add_node("Input", 0, small, {}, true);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::string suffix = "_" + std::to_string(b);
    NodeId conv = add_node("ConvForward" + suffix, 200, 2 * branch_bytes,
                           {cur}, false);
    NodeId bn = add_node("BNForward" + suffix, 5, branch_bytes, {conv}, false);
    NodeId relu =
        add_node("ReLUForward" + suffix, 3, branch_bytes, {bn}, false);
    NodeId add =
        add_node("AddForward" + suffix, 4, small, {cur, relu}, false);
    cur = add;
  }

  for (const OpNode& n : t.nodes) {
    t.schedule.push_back({n.id, Phase::Forward, AccessKind::Produce});
  }
  for (std::size_t i = t.nodes.size(); i-- > 0;) {
    t.schedule.push_back({t.nodes[i].id, Phase::Backward, AccessKind::Use});
  }
  return t;
}

Trace gen_transformer_like(std::size_t layers, Bytes hidden_bytes,
                           std::uint64_t seed) {
  if (layers == 0) {
    throw ArgumentError("gen_transformer_like: layers must be >= 1");
  }
  Jitter jitter(seed);
  Trace t;
  t.name = "transformer" + std::to_string(layers);

  NodeId next = 0;
  auto add_node = [&](std::string name, MicroDur cost, Bytes bytes,
                      std::vector<NodeId> parents, bool uncomputable) {
    OpNode node;
    node.id = next++;
    node.name = std::move(name);
    node.compute_cost_us = jitter.apply(cost);
    node.output_bytes = jitter.apply(bytes);
    node.parents = std::move(parents);
    node.uncomputable = uncomputable;
    node.evict_pinned = uncomputable;
    t.nodes.push_back(std::move(node));
    return t.nodes.back().id;
  };

  NodeId cur = add_node("Embedding", 0, hidden_bytes, {}, true);
  for (std::size_t l = 0; l < layers; ++l) {
    std::string suffix = "_" + std::to_string(l);
    NodeId ln1 = add_node("LayerNorm1" + suffix, 4, hidden_bytes, {cur}, false);
    NodeId qkv =
        add_node("QKVProj" + suffix, 120, 3 * hidden_bytes, {ln1}, false);
    NodeId attn = add_node("Attention" + suffix, 180, hidden_bytes, {qkv},
                           false);
    NodeId proj =
        add_node("OutProj" + suffix, 60, hidden_bytes, {attn}, false);
    NodeId add1 =
        add_node("AddResid1" + suffix, 4, hidden_bytes, {cur, proj}, false);
    NodeId ln2 =
        add_node("LayerNorm2" + suffix, 4, hidden_bytes, {add1}, false);
    NodeId mlp1 =
        add_node("MlpUp" + suffix, 150, 4 * hidden_bytes, {ln2}, false);
    NodeId mlp2 = add_node("MlpDown" + suffix, 150, hidden_bytes, {mlp1},
                           false);
    NodeId add2 =
        add_node("AddResid2" + suffix, 4, hidden_bytes, {add1, mlp2}, false);
    cur = add2;
  }

  for (const OpNode& n : t.nodes) {
    t.schedule.push_back({n.id, Phase::Forward, AccessKind::Produce});
  }
  for (std::size_t i = t.nodes.size(); i-- > 0;) {
    t.schedule.push_back({t.nodes[i].id, Phase::Backward, AccessKind::Use});
  }
  return t;
}

}  // namespace deltasim
