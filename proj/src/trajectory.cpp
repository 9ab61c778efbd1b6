#include "trajmode/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "trajmode/error.hpp"
#include "trajmode/geo.hpp"

namespace trajmode {

using nlohmann::json;

// ---------------------------------------------------------------------------
// LabelMap

LabelMap::LabelMap(std::vector<std::string> classes, std::map<std::string, std::string> aliases)
    : classes_(std::move(classes)), aliases_(std::move(aliases)) {
  if (classes_.empty()) throw Error(ErrorKind::Config, "label map needs at least one class");
  std::vector<std::string> sorted = classes_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error(ErrorKind::Config, "label map class names must be unique");
  for (const auto& [alias, target] : aliases_) {
    if (std::find(classes_.begin(), classes_.end(), target) == classes_.end())
      throw Error(ErrorKind::Config, "label alias '" + alias + "' targets unknown class '" + target + "'");
  }
}

LabelMap LabelMap::geolife_default() {
  return LabelMap({"walk", "bike", "bus", "subway", "private_car", "taxi", "train"}, {{"car", "private_car"}});
}

std::optional<ClassLabel> LabelMap::lookup(std::string_view raw_name) const {
  std::string name(raw_name);
  if (auto it = aliases_.find(name); it != aliases_.end()) name = it->second;
  auto it = std::find(classes_.begin(), classes_.end(), name);
  if (it == classes_.end()) return std::nullopt;
  return ClassLabel{name, static_cast<int>(it - classes_.begin())};
}

ClassLabel LabelMap::at(int index) const {
  if (index < 0 || index >= num_classes())
    throw Error(ErrorKind::Precondition, "class index " + std::to_string(index) + " out of range");
  return ClassLabel{classes_[static_cast<std::size_t>(index)], index};
}

// ---------------------------------------------------------------------------
// Validation helpers

void validate(const Trajectory& traj) {
  if (traj.points.empty()) throw Error(ErrorKind::Precondition, "trajectory '" + traj.traj_id + "' is empty");
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const GpsPoint& p = traj.points[i];
    if (p.id != i)
      throw Error(ErrorKind::Precondition, "trajectory '" + traj.traj_id + "': point ids must be 0..N-1");
    if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0))
      throw Error(ErrorKind::Precondition, "trajectory '" + traj.traj_id + "': coordinate out of range");
    if (!std::isfinite(p.ts)) throw Error(ErrorKind::Precondition, "trajectory '" + traj.traj_id + "': non-finite ts");
    if (i > 0 && !(p.ts > traj.points[i - 1].ts))
      throw Error(ErrorKind::Precondition, "trajectory '" + traj.traj_id + "': ts not strictly increasing");
  }
}

void renumber(std::vector<GpsPoint>& points) {
  for (std::size_t i = 0; i < points.size(); ++i) points[i].id = i;
}

void validate(const StayPointConfig& cfg) {
  if (!(cfg.dist_threshold_m > 0.0) || !(cfg.time_threshold_s > 0.0))
    throw Error(ErrorKind::Config, "stay-point thresholds must be strictly positive");
}

double utc_seconds(int year, int month, int day, int hour, int minute, double second) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0.0 || second >= 61.0)
    throw Error(ErrorKind::Parse, "invalid date/time");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + hour * 3600.0 + minute * 60.0 + second;
}

// ---------------------------------------------------------------------------
// Text parsing

namespace {

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    if (end == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

// "yyyy<sep>mm<sep>dd" and "hh:mm:ss"
bool parse_date(std::string_view s, char sep, int& y, int& m, int& d) {
  const auto parts = split(trim(s), sep);
  return parts.size() == 3 && parse_number(parts[0], y) && parse_number(parts[1], m) && parse_number(parts[2], d);
}

bool parse_time(std::string_view s, int& h, int& mi, double& sec) {
  const auto parts = split(trim(s), ':');
  return parts.size() == 3 && parse_number(parts[0], h) && parse_number(parts[1], mi) && parse_number(parts[2], sec);
}

}  // namespace

Trajectory parse_plt(std::string_view content, std::string traj_id) {
  constexpr std::size_t kHeaderLines = 6;
  const auto lines = split_lines(content);
  Trajectory traj;
  traj.traj_id = std::move(traj_id);
  for (std::size_t i = kHeaderLines; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const std::string_view line = lines[i];
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 7) throw ParseError(line_no, "expected 7 comma-separated fields");
    double lat = 0.0, lon = 0.0;
    if (!parse_number(fields[0], lat) || !parse_number(fields[1], lon))
      throw ParseError(line_no, "bad latitude/longitude");
    if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0))
      throw ParseError(line_no, "latitude/longitude out of range");
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    if (!parse_date(fields[5], '-', y, mo, d) || !parse_time(fields[6], h, mi, sec))
      throw ParseError(line_no, "bad date/time");
    double ts = 0.0;
    try {
      ts = utc_seconds(y, mo, d, h, mi, sec);
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
    if (!traj.points.empty() && !(ts > traj.points.back().ts)) continue;
    traj.points.push_back(GpsPoint{traj.points.size(), lat, lon, ts});
  }
  if (traj.points.empty()) throw Error(ErrorKind::Data, "PLT file '" + traj.traj_id + "' has no data lines");
  return traj;
}

std::vector<LabelInterval> parse_labels(std::string_view content) {
  const auto lines = split_lines(content);
  std::vector<LabelInterval> intervals;
  const auto parse_stamp = [](std::string_view s, std::size_t line_no) {
    s = trim(s);
    const std::size_t space = s.find(' ');
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    if (space == std::string_view::npos || !parse_date(s.substr(0, space), '/', y, mo, d) ||
        !parse_time(s.substr(space + 1), h, mi, sec))
      throw ParseError(line_no, "unparseable time '" + std::string(s) + "'");
    try {
      return utc_seconds(y, mo, d, h, mi, sec);
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], '\t');
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    LabelInterval interval{parse_stamp(fields[0], line_no), parse_stamp(fields[1], line_no),
                           std::string(trim(fields[2]))};
    if (interval.end_ts < interval.start_ts)
      throw Error(ErrorKind::Data, "line " + std::to_string(line_no) + ": interval ends before it starts");
    intervals.push_back(std::move(interval));
  }
  return intervals;
}

// ---------------------------------------------------------------------------
// Label join and segmentation

JoinResult label_join(const Trajectory& traj, std::vector<LabelInterval> intervals, const LabelMap& label_map) {
  std::stable_sort(intervals.begin(), intervals.end(),
                   [](const LabelInterval& a, const LabelInterval& b) { return a.start_ts < b.start_ts; });

  // Interval index covering ts, or -1. Closed bounds.
  const auto covering = [&](double ts) -> long {
    auto it = std::upper_bound(intervals.begin(), intervals.end(), ts,
                               [](double t, const LabelInterval& iv) { return t < iv.start_ts; });
    if (it == intervals.begin()) return -1;
    --it;
    return ts <= it->end_ts ? static_cast<long>(it - intervals.begin()) : -1;
  };

  JoinResult result;
  result.stats.points_in = traj.points.size();
  std::size_t run_counter = 0;
  std::size_t i = 0;
  while (i < traj.points.size()) {
    const long iv = covering(traj.points[i].ts);
    if (iv < 0) {
      ++result.stats.points_outside;
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < traj.points.size() && covering(traj.points[j].ts) == iv) ++j;
    const auto label = label_map.lookup(intervals[static_cast<std::size_t>(iv)].mode_name);
    if (!label) {
      result.stats.points_unmapped_mode += j - i;
      ++result.stats.runs_dropped_unmapped;
    } else {
      Trajectory run;
      run.traj_id = traj.traj_id + "#" + std::to_string(run_counter++);
      run.points.assign(traj.points.begin() + static_cast<std::ptrdiff_t>(i),
                        traj.points.begin() + static_cast<std::ptrdiff_t>(j));
      renumber(run.points);
      run.mode = label;
      result.stats.points_kept += run.points.size();
      result.trajectories.push_back(std::move(run));
    }
    i = j;
  }
  return result;
}

std::vector<Trajectory> segment_stay_points(const Trajectory& traj, const StayPointConfig& cfg) {
  validate(cfg);
  const auto& pts = traj.points;
  const std::size_t n = pts.size();
  std::vector<bool> in_stay(n, false);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && geo::haversine_m(pts[i].lat, pts[i].lon, pts[j].lat, pts[j].lon) <= cfg.dist_threshold_m) ++j;
    if (pts[j - 1].ts - pts[i].ts >= cfg.time_threshold_s) {
      std::fill(in_stay.begin() + static_cast<std::ptrdiff_t>(i), in_stay.begin() + static_cast<std::ptrdiff_t>(j), true);
      i = j;
    } else {
      ++i;
    }
  }

  std::vector<Trajectory> segments;
  std::size_t k = 0;
  i = 0;
  while (i < n) {
    if (in_stay[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !in_stay[j]) ++j;
    if (j - i >= 2) {
      Trajectory seg;
      seg.traj_id = traj.traj_id + "." + std::to_string(k++);
      seg.points.assign(pts.begin() + static_cast<std::ptrdiff_t>(i), pts.begin() + static_cast<std::ptrdiff_t>(j));
      renumber(seg.points);
      seg.mode = traj.mode;
      segments.push_back(std::move(seg));
    }
    i = j;
  }
  // A segment that was never cut keeps its identity, which makes segmentation idempotent.
  if (segments.size() == 1 && segments.front().size() == n) segments.front().traj_id = traj.traj_id;
  return segments;
}

// ---------------------------------------------------------------------------
// Canonical dataset

void write_dataset(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  for (const auto& traj : trajectories) {
    json points = json::array();
    for (const auto& p : traj.points) points.push_back(json::array({p.lat, p.lon, p.ts}));
    json rec;
    rec["id"] = traj.traj_id;
    rec["mode"] = traj.mode ? json(traj.mode->name) : json(nullptr);
    rec["points"] = std::move(points);
    out << rec.dump() << '\n';
  }
}

std::vector<Trajectory> read_dataset(std::istream& in, const LabelMap& label_map) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Trajectory traj;
    try {
      const json rec = json::parse(line);
      traj.traj_id = rec.at("id").get<std::string>();
      const json& mode = rec.at("mode");
      if (!mode.is_null()) {
        const auto name = mode.get<std::string>();
        traj.mode = label_map.lookup(name);
        if (!traj.mode) throw ParseError(line_no, "unknown mode '" + name + "'");
      }
      for (const json& p : rec.at("points")) {
        if (!p.is_array() || p.size() != 3) throw ParseError(line_no, "point must be [lat, lon, ts]");
        traj.points.push_back(
            GpsPoint{traj.points.size(), p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      validate(traj);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
    out.push_back(std::move(traj));
  }
  return out;
}

void write_dataset_file(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  write_dataset(out, trajectories);
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

std::vector<Trajectory> read_dataset_file(const std::filesystem::path& path, const LabelMap& label_map) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return read_dataset(in, label_map);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace trajmode
