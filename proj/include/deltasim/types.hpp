#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace deltasim {

using NodeId = std::uint64_t;
using Bytes = std::uint64_t;
using MicroTime = std::uint64_t;  // absolute simulated time, microseconds
using MicroDur = std::uint64_t;   // duration, microseconds
using U128 = unsigned __int128;

// Exact positive fraction with 64-bit parts. Products of two Frac64
// components fit in U128; callers must not chain multiplications past that.
struct Frac64 {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  constexpr bool operator==(const Frac64&) const = default;
};

// Heuristic scores are all reciprocals (1/(m*s), 1/s, 1/m), so the score
// is stored as the denominator `inv` and compared in reverse. Exact, no
// overflow for inv up to 2^128.
struct HeuristicScore {
  U128 inv = 1;  // score value = 1 / inv

  bool operator==(const HeuristicScore& o) const { return inv == o.inv; }
  bool operator<(const HeuristicScore& o) const { return inv > o.inv; }
  bool operator<=(const HeuristicScore& o) const { return inv >= o.inv; }
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationErrorEx : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IllegalTransition : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnrecoverableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MismatchedTrace : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string u128_to_string(U128 v);

}  // namespace deltasim
