#include "deltasim/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace deltasim {

using ordered_json = nlohmann::ordered_json;

namespace {

struct TimelineStats {
  Bytes peak = 0;
  MicroTime wall = 0;
  MicroDur total_stall = 0;
  MicroDur copy_busy = 0;
  MicroDur copy_stall = 0;
  ActionCounts counts;
  std::set<NodeId> produced;
};

TimelineStats scan(const Timeline& t) {
  TimelineStats st;
  struct Delta {
    MicroTime ts;
    std::int64_t bytes;
  };
  std::vector<Delta> deltas;
  for (const TimelineEvent& e : t.events) {
    MicroTime end = e.ts + e.duration;
    if (end > st.wall) st.wall = end;
    switch (e.kind) {
      case EventKind::Compute:
        st.produced.insert(e.node);
        deltas.push_back({e.ts, static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Recompute:
        st.counts.recompute += 1;
        deltas.push_back({e.ts, static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Reload:
        st.counts.reload += 1;
        if (e.prefetch) st.counts.prefetch_reload += 1;
        st.copy_busy += e.duration;
        if (e.stream == StreamKind::Compute) st.copy_stall += e.duration;
        deltas.push_back({e.ts, static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Offload:
        st.counts.offload += 1;
        st.copy_busy += e.duration;
        if (e.stream == StreamKind::Compute) st.copy_stall += e.duration;
        deltas.push_back({end, -static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Evict:
        st.counts.evict += 1;
        deltas.push_back({e.ts, -static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Free:
        deltas.push_back({e.ts, -static_cast<std::int64_t>(e.bytes)});
        break;
      case EventKind::Stall:
        st.total_stall += e.duration;
        st.copy_stall += e.duration;
        break;
      case EventKind::Use:
        break;
    }
  }
  std::stable_sort(deltas.begin(), deltas.end(),
                   [](const Delta& a, const Delta& b) {
                     if (a.ts != b.ts) return a.ts < b.ts;
                     return a.bytes < b.bytes;
                   });
  std::int64_t used = 0;
  for (const Delta& d : deltas) {
    used += d.bytes;
    if (used > 0 && static_cast<Bytes>(used) > st.peak) {
      st.peak = static_cast<Bytes>(used);
    }
  }
  return st;
}

}  // namespace

Report summarize(const Timeline& timeline, const Timeline& baseline) {
  TimelineStats run = scan(timeline);
  TimelineStats base = scan(baseline);
  // A truncated (infeasible) run produced a prefix; anything outside the
  // baseline's node set means the timelines mix traces.
  for (NodeId id : run.produced) {
    if (!base.produced.contains(id)) {
      throw MismatchedTrace("timeline produces node " + std::to_string(id) +
                            " that the baseline never produces");
    }
  }

  Report r;
  r.peak_bytes = run.peak;
  r.baseline_peak_bytes = base.peak;
  r.saving_fraction =
      base.peak == 0 ? 0.0
                     : 1.0 - static_cast<double>(run.peak) /
                                 static_cast<double>(base.peak);
  r.wall_time_us = run.wall;
  r.baseline_wall_time_us = base.wall;
  r.overhead_fraction =
      base.wall == 0 ? 0.0
                     : static_cast<double>(run.wall) /
                               static_cast<double>(base.wall) -
                           1.0;
  r.evict_count = run.counts.evict;
  r.offload_count = run.counts.offload;
  r.reload_count = run.counts.reload;
  r.recompute_count = run.counts.recompute;
  r.prefetch_reload_count = run.counts.prefetch_reload;
  r.total_stall_us = run.total_stall;
  double ratio =
      run.copy_busy == 0
          ? 1.0
          : 1.0 - static_cast<double>(run.copy_stall) /
                      static_cast<double>(run.copy_busy);
  r.overlap_ratio = std::clamp(ratio, 0.0, 1.0);
  return r;
}

Report summarize(const RunResult& run, const RunResult& baseline) {
  Report r = summarize(run.timeline, baseline.timeline);
  r.infeasible = !run.completed();
  return r;
}

static ordered_json report_json_obj(const Report& r) {
  ordered_json j;
  j["peak_bytes"] = r.peak_bytes;
  j["baseline_peak_bytes"] = r.baseline_peak_bytes;
  j["saving_fraction"] = r.saving_fraction;
  j["wall_time_us"] = r.wall_time_us;
  j["baseline_wall_time_us"] = r.baseline_wall_time_us;
  j["overhead_fraction"] = r.overhead_fraction;
  ordered_json counts;
  counts["evict"] = r.evict_count;
  counts["offload"] = r.offload_count;
  counts["reload"] = r.reload_count;
  counts["recompute"] = r.recompute_count;
  counts["prefetch_reload"] = r.prefetch_reload_count;
  j["counts"] = std::move(counts);
  j["total_stall_us"] = r.total_stall_us;
  j["overlap_ratio"] = r.overlap_ratio;
  j["infeasible"] = r.infeasible;
  return j;
}

std::string report_to_json(const Report& r) {
  return report_json_obj(r).dump(2) + "\n";
}

Report report_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  Report r;
  r.peak_bytes = j.at("peak_bytes").get<Bytes>();
  r.baseline_peak_bytes = j.at("baseline_peak_bytes").get<Bytes>();
  r.saving_fraction = j.at("saving_fraction").get<double>();
  r.wall_time_us = j.at("wall_time_us").get<MicroTime>();
  r.baseline_wall_time_us = j.at("baseline_wall_time_us").get<MicroTime>();
  r.overhead_fraction = j.at("overhead_fraction").get<double>();
  const auto& counts = j.at("counts");
  r.evict_count = counts.at("evict").get<std::uint64_t>();
  r.offload_count = counts.at("offload").get<std::uint64_t>();
  r.reload_count = counts.at("reload").get<std::uint64_t>();
  r.recompute_count = counts.at("recompute").get<std::uint64_t>();
  r.prefetch_reload_count = counts.at("prefetch_reload").get<std::uint64_t>();
  r.total_stall_us = j.at("total_stall_us").get<MicroDur>();
  r.overlap_ratio = j.at("overlap_ratio").get<double>();
  r.infeasible = j.at("infeasible").get<bool>();
  return r;
}

static const char* kReportCsvHeader =
    "peak_bytes,baseline_peak_bytes,saving_fraction,wall_time_us,"
    "baseline_wall_time_us,overhead_fraction,evict,offload,reload,recompute,"
    "prefetch_reload,total_stall_us,overlap_ratio,infeasible";

static std::string report_csv_row(const Report& r) {
  std::ostringstream os;
  os << r.peak_bytes << ',' << r.baseline_peak_bytes << ','
     << r.saving_fraction << ',' << r.wall_time_us << ','
     << r.baseline_wall_time_us << ',' << r.overhead_fraction << ','
     << r.evict_count << ',' << r.offload_count << ',' << r.reload_count
     << ',' << r.recompute_count << ',' << r.prefetch_reload_count << ','
     << r.total_stall_us << ',' << r.overlap_ratio << ','
     << (r.infeasible ? "true" : "false");
  return os.str();
}

std::string report_to_csv(const Report& r) {
  return std::string(kReportCsvHeader) + "\n" + report_csv_row(r) + "\n";
}

std::size_t write_report(const Report& r, ReportFormat format,
                         const std::string& path) {
  std::string payload =
      format == ReportFormat::Json ? report_to_json(r) : report_to_csv(r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << payload;
  if (!out) throw IoError("write to " + path + " failed");
  return payload.size();
}

namespace {

std::string event_name(const TimelineEvent& e) {
  std::string name = to_string(e.kind);
  name += '/';
  name += e.phase == Phase::Forward ? 'F' : 'B';
  if (e.prefetch) name += "#pf" + std::to_string(e.burst);
  return name;
}

bool parse_event_name(const std::string& name, TimelineEvent& e) {
  auto slash = name.find('/');
  if (slash == std::string::npos || slash + 1 >= name.size()) return false;
  std::string kind = name.substr(0, slash);
  static const EventKind kinds[] = {
      EventKind::Compute, EventKind::Offload, EventKind::Reload,
      EventKind::Recompute, EventKind::Stall, EventKind::Evict,
      EventKind::Use, EventKind::Free};
  bool found = false;
  for (EventKind k : kinds) {
    if (kind == to_string(k)) {
      e.kind = k;
      found = true;
      break;
    }
  }
  if (!found) return false;
  e.phase = name[slash + 1] == 'B' ? Phase::Backward : Phase::Forward;
  auto pf = name.find("#pf", slash);
  if (pf != std::string::npos) {
    e.prefetch = true;
    e.burst = static_cast<std::uint32_t>(
        std::stoul(name.substr(pf + 3)));
  }
  return true;
}

}  // namespace

std::string timeline_to_chrome_trace(const Timeline& t) {
  std::vector<const TimelineEvent*> order;
  order.reserve(t.events.size());
  for (const TimelineEvent& e : t.events) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(),
                   [](const TimelineEvent* a, const TimelineEvent* b) {
                     if (a->ts != b->ts) return a->ts < b->ts;
                     return a->stream < b->stream;
                   });
  ordered_json arr = ordered_json::array();
  for (const TimelineEvent* e : order) {
    ordered_json j;
    j["name"] = event_name(*e);
    j["ph"] = "X";
    j["ts"] = e->ts;
    j["dur"] = e->duration;
    j["pid"] = 0;
    j["tid"] = e->stream == StreamKind::Compute ? 0 : 1;
    ordered_json args;
    args["node"] = e->node;
    args["bytes"] = e->bytes;
    j["args"] = std::move(args);
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

Timeline timeline_from_chrome_trace(const std::string& text) {
  ordered_json arr = ordered_json::parse(text, nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) {
    throw IoError("timeline file is not a JSON array");
  }
  Timeline t;
  for (const ordered_json& j : arr) {
    TimelineEvent e;
    if (!parse_event_name(j.at("name").get<std::string>(), e)) {
      throw IoError("unrecognized timeline event name: " +
                    j.at("name").get<std::string>());
    }
    e.ts = j.at("ts").get<MicroTime>();
    e.duration = j.at("dur").get<MicroDur>();
    e.stream =
        j.at("tid").get<int>() == 0 ? StreamKind::Compute : StreamKind::Copy;
    e.node = j.at("args").at("node").get<NodeId>();
    e.bytes = j.at("args").at("bytes").get<Bytes>();
    t.events.push_back(e);
  }
  return t;
}

std::size_t write_chrome_trace(const Timeline& t, const std::string& path) {
  std::string payload = timeline_to_chrome_trace(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << payload;
  if (!out) throw IoError("write to " + path + " failed");
  return payload.size();
}

static const char* kComparisonCsvHeader =
    "trace,budget,policy,heuristic,peak_bytes,baseline_peak_bytes,"
    "saving_fraction,wall_time_us,baseline_wall_time_us,overhead_fraction,"
    "evict,offload,reload,recompute,prefetch_reload,total_stall_us,"
    "overlap_ratio,infeasible";

std::string comparison_to_csv(const ComparisonReport& rep) {
  std::ostringstream os;
  os << kComparisonCsvHeader << "\n";
  for (const ComparisonCell& cell : rep.cells) {
    Report r = summarize(cell.result, rep.baseline);
    os << rep.trace_name << ',' << cell.budget << ','
       << to_string(cell.policy) << ',' << to_string(cell.heuristic) << ','
       << report_csv_row(r) << "\n";
  }
  return os.str();
}

std::string comparison_to_json(const ComparisonReport& rep) {
  ordered_json root;
  root["trace"] = rep.trace_name;
  root["baseline_peak_bytes"] = rep.baseline.peak_bytes;
  root["baseline_wall_time_us"] = rep.baseline.wall_time_us;
  ordered_json cells = ordered_json::array();
  for (const ComparisonCell& cell : rep.cells) {
    ordered_json j;
    j["budget"] = cell.budget;
    j["policy"] = to_string(cell.policy);
    j["heuristic"] = to_string(cell.heuristic);
    j["report"] = report_json_obj(summarize(cell.result, rep.baseline));
    cells.push_back(std::move(j));
  }
  root["cells"] = std::move(cells);
  return root.dump(2) + "\n";
}

}  // namespace deltasim
