#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "deltasim/trace.hpp"
#include "deltasim/types.hpp"

namespace testutil {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string data_path(const std::string& name) {
  return std::string(DELTASIM_DATA_DIR) + "/" + name;
}

inline std::string golden_path(const std::string& name) {
  return std::string(DELTASIM_GOLDEN_DIR) + "/" + name;
}

inline deltasim::OpNode make_node(deltasim::NodeId id, deltasim::Bytes bytes,
                                  deltasim::MicroDur cost,
                                  std::vector<deltasim::NodeId> parents = {},
                                  bool uncomputable = false) {
  deltasim::OpNode n;
  n.id = id;
  n.name = "n" + std::to_string(id);
  n.compute_cost_us = cost;
  n.output_bytes = bytes;
  n.parents = std::move(parents);
  n.uncomputable = uncomputable;
  n.evict_pinned = uncomputable;
  return n;
}

// Random DAG with a standard forward-produce / reverse-backward-use
// schedule. Node 0 is an uncomputable input.
inline deltasim::Trace fuzz_trace(std::mt19937_64& rng, std::size_t max_nodes,
                                  deltasim::Bytes max_bytes = 1000,
                                  deltasim::MicroDur max_cost = 50) {
  using namespace deltasim;
  std::uniform_int_distribution<std::size_t> n_nodes(2, max_nodes);
  std::size_t n = n_nodes(rng);
  Trace t;
  t.name = "fuzz";
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<Bytes> bytes_dist(1, max_bytes);
    std::uniform_int_distribution<MicroDur> cost_dist(1, max_cost);
    OpNode node = make_node(i, bytes_dist(rng), cost_dist(rng), {}, i == 0);
    if (i > 0) {
      std::uniform_int_distribution<std::size_t> n_parents(
          1, i < 3 ? i : std::size_t{3});
      std::size_t k = n_parents(rng);
      std::uniform_int_distribution<NodeId> pick(0, i - 1);
      for (std::size_t j = 0; j < k; ++j) {
        NodeId p = pick(rng);
        bool dup = false;
        for (NodeId q : node.parents) dup |= q == p;
        if (!dup) node.parents.push_back(p);
      }
    }
    t.nodes.push_back(std::move(node));
  }
  for (std::size_t i = 0; i < n; ++i) {
    t.schedule.push_back({i, Phase::Forward, AccessKind::Produce});
  }
  for (std::size_t i = n; i-- > 0;) {
    t.schedule.push_back({i, Phase::Backward, AccessKind::Use});
  }
  return t;
}

}  // namespace testutil
