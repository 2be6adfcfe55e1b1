#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deltasim/types.hpp"

namespace deltasim {

enum class Phase : std::uint8_t { Forward, Backward };
enum class AccessKind : std::uint8_t { Produce, Use };

struct OpNode {
  NodeId id = 0;
  std::string name;
  MicroDur compute_cost_us = 0;
  Bytes output_bytes = 0;
  std::vector<NodeId> parents;
  bool uncomputable = false;
  bool evict_pinned = false;
  bool offload_pinned = false;
};

struct AccessEvent {
  NodeId node = 0;
  Phase phase = Phase::Forward;
  AccessKind kind = AccessKind::Produce;

  bool operator==(const AccessEvent&) const = default;
};

struct Trace {
  std::string name;
  std::vector<OpNode> nodes;
  std::vector<AccessEvent> schedule;

  // Position of a node id in `nodes`, or nullopt for undeclared ids.
  std::optional<std::size_t> index_of(NodeId id) const;
  const OpNode* find(NodeId id) const;
};

enum class TraceViolationCode {
  DuplicateNodeId,
  CycleOrForwardRef,
  UncomputableHasParents,
  UncomputableNotEvictPinned,
  BothPinned,  // warning: node can never be a release candidate
  DanglingNodeRef,
  UseBeforeProduce,
  DuplicateProduce,
  ParentNotProduced,
  ForwardAfterBackward,
  ZeroOutputBytes,
};

enum class Severity { Error, Warning };

struct TraceViolation {
  TraceViolationCode code;
  Severity severity = Severity::Error;
  // Exactly one of these identifies the location.
  std::optional<NodeId> node;
  std::optional<std::size_t> event_index;
  std::string message;
};

const char* to_string(TraceViolationCode c);

std::vector<TraceViolation> validate_trace(const Trace& t);

// True when validate_trace reports no Error-severity violations.
bool trace_is_valid(const Trace& t);

// Strict parser for the canonical schema; throws SchemaError on shape/type
// problems and ValidationErrorEx when the decoded trace fails validation.
Trace parse_trace(const std::string& text);

// Canonical form: fixed key order, compact (no whitespace variance).
std::string serialize_trace(const Trace& t);

// n sequential layers; node 0 is the uncomputable input. Backward touches
// each layer's output and its input: U(i), U(i-1) for i = n-1..1, then U(0).
// seed != 0 jitters bytes/costs by up to +-10%, deterministically.
Trace gen_linear_chain(std::size_t n, Bytes bytes_per, MicroDur cost_per,
                       std::uint64_t seed);

// Residual blocks: block input feeds a conv/bn/relu chain and a skip edge
// into an add node, so block inputs stay live across the whole block.
Trace gen_resnet_like(std::size_t blocks, Bytes branch_bytes,
                      std::uint64_t seed);

// Attention-style blocks (qkv / attn / proj / mlp with two residual adds).
Trace gen_transformer_like(std::size_t layers, Bytes hidden_bytes,
                           std::uint64_t seed);

}  // namespace deltasim
