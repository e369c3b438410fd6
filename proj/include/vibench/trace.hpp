#pragma once

#include "vibench/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace vibench {

/// Column layout of trace files. Changing it bumps kTraceSchemaVersion.
inline constexpr std::string_view kTraceHeader =
    "iter,component_evals,matvec_ops,gap_avg,gap_last,residual,elapsed_ms";
inline constexpr int kTraceSchemaVersion = 1;

struct TraceRow {
  std::int64_t iter = 0;
  std::int64_t component_evals = 0;
  double matvec_ops = 0.0;
  double gap_avg = 0.0;
  double gap_last = 0.0;
  double residual = 0.0;
  std::int64_t elapsed_ms = 0;
  // In-memory only; not part of the CSV schema.
  std::int64_t refreshes = 0;
};

enum class RunStatus { completed, target_reached, budget_exhausted, diverged };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::target_reached: return "target_reached";
    case RunStatus::budget_exhausted: return "budget_exhausted";
    case RunStatus::diverged: return "diverged";
  }
  return "unknown";
}

struct RunMetadata {
  std::string solver;
  double eta = 0.0;
  double gamma = 0.0;
  double p = 0.0;
  Index batch = 0;
  std::uint64_t seed = 0;
  Index num_components = 0;
  Index dim = 0;
  std::uint64_t problem_digest = 0;
  bool theorem_mode = false;
  bool clamped = false;
  std::vector<std::string> warnings;
  RunStatus status = RunStatus::completed;
  std::int64_t iterations = 0;
  std::int64_t snapshot_refreshes = 0;
  /// b*3 + p*M component evaluations per iteration in expectation, in
  /// matvec-equivalent units.
  double expected_ops_per_iter = 0.0;
};

struct RunTrace {
  RunMetadata meta;
  std::vector<TraceRow> rows;
  /// Ergodic average of the iterates (the reported solution).
  Vec average;
  Vec last_iterate;
};

namespace detail {

inline std::string format_sig(double v, int digits) {
  char buf[64];
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Writes the CSV body. Floats carry 10 significant digits, elapsed_ms is an
/// integer (zeroed when `record_time` is false).
inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, bool record_time = true) {
  os << kTraceHeader << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << r.component_evals << ',' << detail::format_sig(r.matvec_ops, 10) << ','
       << detail::format_sig(r.gap_avg, 10) << ',' << detail::format_sig(r.gap_last, 10) << ','
       << detail::format_sig(r.residual, 10) << ',' << (record_time ? r.elapsed_ms : 0) << '\n';
  }
}

inline void save_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows,
                           bool record_time = true) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_trace_csv(out, rows, record_time);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace detail {

inline double parse_csv_double(std::string_view tok, std::size_t line, std::size_t col) {
  if (tok == "nan") return std::nan("");
  if (tok == "inf") return INFINITY;
  if (tok == "-inf") return -INFINITY;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid number '" + std::string(tok) + "'", line, col);
  return v;
}

inline std::int64_t parse_csv_int(std::string_view tok, std::size_t line, std::size_t col) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid integer '" + std::string(tok) + "'", line, col);
  return v;
}

}  // namespace detail

inline std::vector<TraceRow> read_trace_csv(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<TraceRow> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kTraceHeader) throw ParseError("unexpected trace header '" + line + "'", line_no, 1);
      header_seen = true;
      continue;
    }
    std::vector<std::pair<std::string_view, std::size_t>> fields;
    std::string_view rest(line);
    std::size_t col = 1;
    while (true) {
      const auto comma = rest.find(',');
      fields.emplace_back(rest.substr(0, comma), col);
      if (comma == std::string_view::npos) break;
      col += comma + 1;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 7)
      throw ParseError("expected 7 fields, found " + std::to_string(fields.size()), line_no, 1);
    TraceRow r;
    r.iter = detail::parse_csv_int(fields[0].first, line_no, fields[0].second);
    r.component_evals = detail::parse_csv_int(fields[1].first, line_no, fields[1].second);
    r.matvec_ops = detail::parse_csv_double(fields[2].first, line_no, fields[2].second);
    r.gap_avg = detail::parse_csv_double(fields[3].first, line_no, fields[3].second);
    r.gap_last = detail::parse_csv_double(fields[4].first, line_no, fields[4].second);
    r.residual = detail::parse_csv_double(fields[5].first, line_no, fields[5].second);
    r.elapsed_ms = detail::parse_csv_int(fields[6].first, line_no, fields[6].second);
    rows.push_back(r);
  }
  if (!header_seen) throw ParseError("empty trace (no header)");
  return rows;
}

inline std::vector<TraceRow> load_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace '" + path.string() + "'");
  try {
    return read_trace_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace vibench
