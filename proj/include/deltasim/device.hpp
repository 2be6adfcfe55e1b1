#pragma once

#include <string>
#include <variant>
#include <vector>

#include "deltasim/types.hpp"

namespace deltasim {

struct Allocated {};
struct Insufficient {
  Bytes deficit = 0;
};
using AllocResult = std::variant<Allocated, Insufficient>;

class MemoryPool {
 public:
  explicit MemoryPool(Bytes budget) : budget_(budget) {}

  AllocResult try_alloc(Bytes n);
  void free(Bytes n);

  Bytes budget() const { return budget_; }
  Bytes used() const { return used_; }
  Bytes available() const { return budget_ - used_; }
  Bytes high_watermark() const { return high_watermark_; }

 private:
  Bytes budget_;
  Bytes used_ = 0;
  Bytes high_watermark_ = 0;
};

enum class StreamKind : std::uint8_t { Compute, Copy };

struct StreamInterval {
  MicroTime start;
  MicroTime end;
  std::string label;
  NodeId node;
};

// A serial timeline: submitted work starts at max(now, busy_until).
class Stream {
 public:
  explicit Stream(StreamKind kind) : kind_(kind) {}

  std::pair<MicroTime, MicroTime> submit(MicroTime now, MicroDur duration,
                                         std::string label, NodeId node);

  StreamKind kind() const { return kind_; }
  MicroTime busy_until() const { return busy_until_; }
  MicroDur busy_total() const { return busy_total_; }
  const std::vector<StreamInterval>& log() const { return log_; }

 private:
  StreamKind kind_;
  MicroTime busy_until_ = 0;
  MicroDur busy_total_ = 0;
  std::vector<StreamInterval> log_;
};

class Clock {
 public:
  MicroTime now() const { return now_; }

  // Advances to t if t is in the future; returns the stall amount.
  MicroDur wait_for(MicroTime t);
  void advance_to(MicroTime t);  // same, discarding the stall

 private:
  MicroTime now_ = 0;
};

}  // namespace deltasim
