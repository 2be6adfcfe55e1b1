#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deltasim/engine.hpp"
#include "deltasim/metrics.hpp"
#include "deltasim/oracle.hpp"
#include "deltasim/trace.hpp"

namespace {

using namespace deltasim;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << payload;
  if (!out) throw IoError("write to " + path + " failed");
}

// Exact fraction from a decimal string like "0.35" (at most 6 places).
Frac64 parse_fraction(const std::string& text) {
  auto dot = text.find('.');
  std::string whole = dot == std::string::npos ? text : text.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : text.substr(dot + 1);
  if (whole.empty()) whole = "0";
  if (frac.size() > 6) {
    throw ArgumentError("fraction '" + text +
                        "' has more than 6 decimal places");
  }
  for (char c : whole + frac) {
    if (c < '0' || c > '9') {
      throw ArgumentError("fraction '" + text + "' is not a decimal number");
    }
  }
  std::uint64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  std::uint64_t num =
      std::stoull(whole) * den + (frac.empty() ? 0 : std::stoull(frac));
  std::uint64_t g = std::gcd(num == 0 ? den : num, den);
  return {num / g, den / g};
}

PolicyMode parse_policy(const std::string& s) {
  if (s == "delta") return PolicyMode::Delta;
  if (s == "recompute-only") return PolicyMode::RecomputeOnly;
  if (s == "offload-only") return PolicyMode::OffloadOnly;
  if (s == "baseline") return PolicyMode::Baseline;
  throw ArgumentError("unknown policy '" + s + "'");
}

Heuristic parse_heuristic(const std::string& s) {
  if (s == "base") return Heuristic::Base;
  if (s == "lru") return Heuristic::Lru;
  if (s == "greedy") return Heuristic::Greedy;
  throw ArgumentError("unknown heuristic '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t pick_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DELTA_SIM_SEED")) {
    return std::stoull(env);
  }
  return 0;
}

void print_summary(std::ostream& os, const Report& r) {
  os << "peak " << r.peak_bytes << " B (baseline " << r.baseline_peak_bytes
     << " B, saving " << r.saving_fraction * 100.0 << "%), wall "
     << r.wall_time_us << " us (baseline " << r.baseline_wall_time_us
     << " us), evict " << r.evict_count << " offload " << r.offload_count
     << " reload " << r.reload_count << " recompute " << r.recompute_count
     << ", stall " << r.total_stall_us << " us, overlap " << r.overlap_ratio
     << "\n";
}

int cmd_generate(const std::string& kind, std::size_t n, std::uint64_t seed,
                 const std::string& out_path) {
  Trace t;
  if (kind == "linear") {
    t = gen_linear_chain(n, 100, 5, seed);
  } else if (kind == "resnet") {
    t = gen_resnet_like(n, 1 << 20, seed);
  } else if (kind == "transformer") {
    t = gen_transformer_like(n, 256 << 10, seed);
  } else {
    throw ArgumentError("unknown kind '" + kind + "'");
  }
  write_file(out_path, serialize_trace(t));
  std::cout << "wrote " << t.nodes.size() << " nodes, " << t.schedule.size()
            << " events to " << out_path << "\n";
  return 0;
}

struct RunFlags {
  std::string trace_path;
  Bytes budget = 0;
  std::string policy = "delta";
  std::string heuristic = "base";
  double bandwidth_bytes_per_sec = 64e9;
  std::string eff_fraction = "0.35";
  std::string watermark = "0.75";
  std::uint64_t prefetch_n = 2;
  bool no_prefetch = false;
  bool no_overlap = false;
  std::string swap_cost_mode = "one-way";
  std::string prefetch_guard = "and";
  std::string report_path;
  std::string timeline_path;
};

EngineConfig config_from(const RunFlags& f) {
  EngineConfig cfg;
  cfg.budget = f.budget;
  cfg.policy_mode = parse_policy(f.policy);
  cfg.heuristic = parse_heuristic(f.heuristic);
  auto bytes_per_sec = static_cast<std::uint64_t>(f.bandwidth_bytes_per_sec);
  if (bytes_per_sec == 0) throw ArgumentError("bandwidth must be positive");
  std::uint64_t g = std::gcd(bytes_per_sec, std::uint64_t{1000000});
  cfg.cost_model.bandwidth_bytes_per_us = {bytes_per_sec / g, 1000000 / g};
  cfg.cost_model.effective_fraction = parse_fraction(f.eff_fraction);
  if (cfg.cost_model.effective_fraction.num == 0 ||
      cfg.cost_model.effective_fraction.num >
          cfg.cost_model.effective_fraction.den) {
    throw ArgumentError("eff-fraction must be in (0,1]");
  }
  if (f.swap_cost_mode == "one-way") {
    cfg.cost_model.swap_cost_mode = SwapCostMode::OneWay;
  } else if (f.swap_cost_mode == "round-trip") {
    cfg.cost_model.swap_cost_mode = SwapCostMode::RoundTrip;
  } else {
    throw ArgumentError("unknown swap-cost-mode '" + f.swap_cost_mode + "'");
  }
  cfg.watermark_fraction = parse_fraction(f.watermark);
  if (cfg.watermark_fraction.num == 0 ||
      cfg.watermark_fraction.num > cfg.watermark_fraction.den) {
    throw ArgumentError("watermark must be in (0,1]");
  }
  cfg.prefetch_limit = f.prefetch_n;
  cfg.prefetch_enabled = !f.no_prefetch;
  cfg.overlap_enabled = !f.no_overlap;
  if (f.prefetch_guard == "and") {
    cfg.prefetch_guard = PrefetchGuard::And;
  } else if (f.prefetch_guard == "paper-or") {
    cfg.prefetch_guard = PrefetchGuard::PaperOr;
  } else {
    throw ArgumentError("unknown prefetch-guard '" + f.prefetch_guard + "'");
  }
  return cfg;
}

ReportFormat format_for(const std::string& path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv"
             ? ReportFormat::Csv
             : ReportFormat::Json;
}

int cmd_run(const RunFlags& f) {
  Trace trace = parse_trace(read_file(f.trace_path));
  EngineConfig cfg = config_from(f);
  RunResult result = run_iteration(trace, cfg);
  RunResult baseline = run_unconstrained_baseline(trace, cfg);
  Report report = summarize(result, baseline);

  if (!f.report_path.empty()) {
    write_report(report, format_for(f.report_path), f.report_path);
  }
  if (!f.timeline_path.empty()) {
    write_chrome_trace(result.timeline, f.timeline_path);
  }
  if (result.infeasible) {
    std::cerr << "infeasible: node " << result.infeasible->node
              << " cannot fit (" << result.infeasible->deficit
              << " bytes short of budget " << cfg.budget << ")\n";
    return 3;
  }
  print_summary(std::cout, report);
  return 0;
}

int cmd_compare(const std::string& trace_path, const std::string& budgets_csv,
                const std::string& policies_csv,
                const std::string& heuristics_csv, const RunFlags& base_flags,
                const std::string& out_path) {
  Trace trace = parse_trace(read_file(trace_path));
  std::vector<Bytes> budgets;
  for (const std::string& b : split_csv(budgets_csv)) {
    budgets.push_back(std::stoull(b));
  }
  std::vector<PolicyMode> policies;
  for (const std::string& p : split_csv(policies_csv)) {
    policies.push_back(parse_policy(p));
  }
  std::vector<Heuristic> heuristics;
  for (const std::string& h : split_csv(heuristics_csv)) {
    heuristics.push_back(parse_heuristic(h));
  }
  if (budgets.empty() || policies.empty() || heuristics.empty()) {
    throw ArgumentError("compare needs at least one budget, policy, and "
                        "heuristic");
  }
  RunFlags f = base_flags;
  f.budget = 1;  // per-cell budgets come from the grid
  EngineConfig cfg = config_from(f);
  ComparisonReport rep = run_comparison(trace, budgets, policies, heuristics,
                                        cfg);
  std::string payload = format_for(out_path) == ReportFormat::Csv
                            ? comparison_to_csv(rep)
                            : comparison_to_json(rep);
  write_file(out_path, payload);
  std::size_t infeasible = 0;
  for (const ComparisonCell& c : rep.cells) {
    if (!c.result.completed()) infeasible += 1;
  }
  std::cout << rep.cells.size() << " cells (" << infeasible
            << " infeasible) written to " << out_path << "\n";
  return 0;
}

int cmd_verify(const std::string& trace_path, const std::string& timeline_path,
               std::optional<Bytes> budget,
               std::optional<std::uint64_t> prefetch_n) {
  Trace trace = parse_trace(read_file(trace_path));
  Timeline timeline = timeline_from_chrome_trace(read_file(timeline_path));
  EngineConfig cfg;
  cfg.budget = budget.value_or(std::numeric_limits<Bytes>::max());
  cfg.prefetch_limit =
      prefetch_n.value_or(std::numeric_limits<std::uint64_t>::max());
  auto violations = oracle::replay_check(timeline, trace, cfg);
  if (violations.empty()) {
    std::cout << "clean: " << timeline.events.size() << " events\n";
    return 0;
  }
  for (const auto& v : violations) {
    std::cerr << oracle::to_string(v.code) << " at t=" << v.ts << " node "
              << v.node << ": " << v.detail << "\n";
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DELTA tensor memory-management simulator"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "synthesize a trace");
  std::string gen_kind;
  std::size_t gen_n = 1;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("--kind", gen_kind, "linear|resnet|transformer")
      ->required();
  gen->add_option("--n", gen_n, "layers/blocks")->required();
  gen->add_option("--seed", gen_seed, "jitter seed (0 = none)");
  gen->add_option("--out", gen_out, "output trace path")->required();

  // run
  auto* run = app.add_subcommand("run", "simulate one iteration");
  RunFlags rf;
  run->add_option("--trace", rf.trace_path, "trace path")->required();
  run->add_option("--budget", rf.budget, "memory budget in bytes")
      ->required();
  run->add_option("--policy", rf.policy,
                  "delta|recompute-only|offload-only|baseline");
  run->add_option("--heuristic", rf.heuristic, "base|lru|greedy");
  run->add_option("--bandwidth", rf.bandwidth_bytes_per_sec,
                  "link bandwidth in bytes/s");
  run->add_option("--eff-fraction", rf.eff_fraction,
                  "usable fraction of bandwidth");
  run->add_option("--watermark", rf.watermark, "release watermark fraction");
  run->add_option("--prefetch-n", rf.prefetch_n, "max reloads per burst");
  run->add_flag("--no-prefetch", rf.no_prefetch, "disable the prefetcher");
  run->add_flag("--no-overlap", rf.no_overlap,
                "run copies synchronously on the compute stream");
  run->add_option("--swap-cost-mode", rf.swap_cost_mode,
                  "one-way|round-trip");
  run->add_option("--prefetch-guard", rf.prefetch_guard, "and|paper-or");
  run->add_option("--report", rf.report_path, "report output (.json/.csv)");
  run->add_option("--timeline", rf.timeline_path,
                  "chrome trace output path");

  // compare
  auto* cmp = app.add_subcommand("compare", "grid of budgets x policies x "
                                            "heuristics");
  std::string cmp_trace, cmp_budgets, cmp_out;
  std::string cmp_policies = "delta";
  std::string cmp_heuristics = "base";
  RunFlags cf;
  cmp->add_option("--trace", cmp_trace, "trace path")->required();
  cmp->add_option("--budgets", cmp_budgets, "comma-separated byte budgets")
      ->required();
  cmp->add_option("--policies", cmp_policies, "comma-separated policies");
  cmp->add_option("--heuristics", cmp_heuristics,
                  "comma-separated heuristics");
  cmp->add_option("--bandwidth", cf.bandwidth_bytes_per_sec,
                  "link bandwidth in bytes/s");
  cmp->add_option("--eff-fraction", cf.eff_fraction,
                  "usable fraction of bandwidth");
  cmp->add_option("--watermark", cf.watermark, "release watermark fraction");
  cmp->add_option("--prefetch-n", cf.prefetch_n, "max reloads per burst");
  cmp->add_flag("--no-prefetch", cf.no_prefetch, "disable the prefetcher");
  cmp->add_flag("--no-overlap", cf.no_overlap,
                "run copies synchronously on the compute stream");
  cmp->add_option("--out", cmp_out, "output path (.json/.csv)")->required();

  // verify
  auto* ver = app.add_subcommand("verify", "replay-check a timeline");
  std::string ver_trace, ver_timeline;
  std::optional<Bytes> ver_budget;
  std::optional<std::uint64_t> ver_prefetch_n;
  ver->add_option("--trace", ver_trace, "trace path")->required();
  ver->add_option("--timeline", ver_timeline, "chrome trace path")
      ->required();
  ver->add_option("--budget", ver_budget,
                  "budget to check compliance against");
  ver->add_option("--prefetch-n", ver_prefetch_n,
                  "burst limit to check against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(gen_kind, gen_n, pick_seed(gen_seed), gen_out);
    }
    if (run->parsed()) return cmd_run(rf);
    if (cmp->parsed()) {
      return cmd_compare(cmp_trace, cmp_budgets, cmp_policies, cmp_heuristics,
                         cf, cmp_out);
    }
    if (ver->parsed()) {
      return cmd_verify(ver_trace, ver_timeline, ver_budget, ver_prefetch_n);
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationErrorEx& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
