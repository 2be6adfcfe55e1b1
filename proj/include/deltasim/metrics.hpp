#pragma once

#include <iosfwd>
#include <string>

#include "deltasim/engine.hpp"
#include "deltasim/types.hpp"

namespace deltasim {

struct Report {
  Bytes peak_bytes = 0;
  Bytes baseline_peak_bytes = 0;
  double saving_fraction = 0.0;  // 1 - peak/baseline_peak
  MicroTime wall_time_us = 0;
  MicroTime baseline_wall_time_us = 0;
  double overhead_fraction = 0.0;  // wall/baseline_wall - 1
  std::uint64_t evict_count = 0;
  std::uint64_t offload_count = 0;
  std::uint64_t reload_count = 0;  // includes prefetch reloads
  std::uint64_t recompute_count = 0;
  std::uint64_t prefetch_reload_count = 0;
  MicroDur total_stall_us = 0;
  double overlap_ratio = 1.0;
  bool infeasible = false;
};

// Aggregates a run against its baseline; both must come from the same trace.
Report summarize(const Timeline& timeline, const Timeline& baseline);
Report summarize(const RunResult& run, const RunResult& baseline);

enum class ReportFormat : std::uint8_t { Json, Csv };

std::string report_to_json(const Report& r);
std::string report_to_csv(const Report& r);  // header + one row
Report report_from_json(const std::string& text);
std::size_t write_report(const Report& r, ReportFormat format,
                         const std::string& path);

// Chrome Trace Event Format: ph "X" events, tid 0 = compute stream,
// tid 1 = copy stream, sorted by ts then tid.
std::string timeline_to_chrome_trace(const Timeline& t);
Timeline timeline_from_chrome_trace(const std::string& text);
std::size_t write_chrome_trace(const Timeline& t, const std::string& path);

std::string comparison_to_csv(const ComparisonReport& rep);
std::string comparison_to_json(const ComparisonReport& rep);

}  // namespace deltasim
