#include "evptam/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace evptam {

SyncSchedule compute_fusion_timestamps(const std::vector<double>& frame_stamps, double exposure) {
  if (exposure < 0.0) throw ConfigError("exposure must be non-negative");
  SyncSchedule schedule;
  schedule.t_f.reserve(frame_stamps.size());
  for (std::size_t i = 0; i < frame_stamps.size(); ++i) {
    if (i > 0 && !(frame_stamps[i] > frame_stamps[i - 1])) {
      throw NonMonotonicTimestamps("frame timestamps must be strictly increasing");
    }
    schedule.t_f.push_back(frame_stamps[i] + exposure / 2.0);
  }
  for (std::size_t k = 1; k < schedule.t_f.size(); ++k) {
    schedule.delta_t.push_back(schedule.t_f[k] - schedule.t_f[k - 1]);
  }
  return schedule;
}

EventStream::EventStream(std::vector<Event> events) : events_(std::move(events)) {
  std::stable_sort(events_.begin(), events_.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

EventVolume EventStream::slice(double t_start, double t_end) {
  if (!(t_start < t_end)) throw ConfigError("slice_window requires t_start < t_end");
  const std::uint64_t start_ns = seconds_to_ns(t_start);
  const std::uint64_t end_ns = seconds_to_ns(t_end);

  if (!events_.empty() && events_.back().t < start_ns) {
    throw StreamExhausted("event source ended before window start");
  }

  EventVolume volume;
  volume.window_start = start_ns;
  volume.window_end = end_ns;
  while (cursor_ < events_.size() && events_[cursor_].t < start_ns) ++cursor_;
  std::size_t i = cursor_;
  while (i < events_.size() && events_[i].t < end_ns) {
    volume.events.push_back(events_[i]);
    ++i;
  }
  cursor_ = i;
  return volume;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kRecordBytes = 8 + 2 + 2 + 1;

void put_le(std::uint64_t v, int bytes, std::string& out) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

void write_events_binary(const std::vector<Event>& events, const std::string& path) {
  std::string buf;
  buf.reserve(events.size() * kRecordBytes);
  for (const Event& e : events) {
    put_le(e.t, 8, buf);
    put_le(e.x, 2, buf);
    put_le(e.y, 2, buf);
    buf.push_back(static_cast<char>(e.polarity));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write event file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<Event> read_events_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open event file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() % kRecordBytes != 0) {
    throw DataError("event file size is not a multiple of the record size: " + path);
  }
  std::vector<Event> events(buf.size() / kRecordBytes);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (auto& e : events) {
    e.t = get_le(p, 8);
    e.x = static_cast<std::uint16_t>(get_le(p + 8, 2));
    e.y = static_cast<std::uint16_t>(get_le(p + 10, 2));
    e.polarity = static_cast<std::int8_t>(p[12]);
    p += kRecordBytes;
  }
  return events;
}

void write_events_csv(const std::vector<Event>& events, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write event file: " + path);
  out << "t,x,y,p\n";
  for (const Event& e : events) {
    out << e.t << "," << e.x << "," << e.y << "," << int(e.polarity) << "\n";
  }
}

std::vector<Event> read_events_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file: " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty event csv: " + path, 1);
  ++line_no;
  std::vector<Event> events;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::uint64_t t;
    long x, y;
    int p;
    if (!(ss >> t >> x >> y >> p)) throw ParseError("malformed event record", line_no);
    if (p != 1 && p != -1) throw ParseError("event polarity must be +1 or -1", line_no);
    events.push_back(Event{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                           static_cast<std::int8_t>(p)});
  }
  return events;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

double decay_weight(double t_rel, double alpha, double eta) {
  const double t = std::clamp(t_rel, 0.0, eta);
  const double z = (t - eta / 2.0) / (eta / 6.0);
  return std::exp(-alpha * z * z);
}

std::vector<double> decay_kernel(const EventVolume& volume, double alpha, double eta) {
  if (!(eta > 0.0)) throw ConfigError("decay span eta must be positive");
  std::vector<double> weights;
  weights.reserve(volume.events.size());
  for (const Event& e : volume.events) {
    weights.push_back(decay_weight(ns_to_seconds(e.t - volume.window_start), alpha, eta));
  }
  return weights;
}

std::array<double, 3> trilinear_weights(double t_rel, double bin_width) {
  std::array<double, 3> w{};
  for (int i = 0; i < 3; ++i) {
    const double center = (i + 0.5) * bin_width;
    w[i] = std::max(0.0, 1.0 - std::abs(t_rel - center) / bin_width);
  }
  return w;
}

E3CT trilinear_vote(const EventVolume& volume, const std::vector<double>& weights,
                    double bin_width, int height, int width, double timestamp) {
  if (!(bin_width > 0.0)) throw ConfigError("bin width must be positive");
  E3CT tensor = E3CT::zero(height, width, timestamp);
  for (std::size_t i = 0; i < volume.events.size(); ++i) {
    const Event& e = volume.events[i];
    if (e.x >= width || e.y >= height) continue;
    const double t_rel = ns_to_seconds(e.t - volume.window_start);
    const auto votes = trilinear_weights(t_rel, bin_width);
    for (int c = 0; c < 3; ++c) {
      if (votes[c] > 0.0) {
        tensor.channels[c](e.y, e.x) += static_cast<float>(weights[i] * votes[c]);
      }
    }
  }
  return tensor;
}

Grid median_filter(const Grid& grid, int radius) {
  if (radius <= 0) return grid;
  const int rows = static_cast<int>(grid.rows());
  const int cols = static_cast<int>(grid.cols());
  Grid out(rows, cols);
  const int side = 2 * radius + 1;
  const int take = (side * side) / 2;  // index of the median element

  // Sliding multiset down each column of output pixels; rows enter and leave
  // as the window advances. Borders replicate edge pixels.
  auto clamped = [&](int y, int x) {
    y = std::clamp(y, 0, rows - 1);
    x = std::clamp(x, 0, cols - 1);
    return grid(y, x);
  };

  for (int x = 0; x < cols; ++x) {
    std::multiset<float> window;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        window.insert(clamped(dy, x + dx));
      }
    }
    for (int y = 0; y < rows; ++y) {
      if (y > 0) {
        for (int dx = -radius; dx <= radius; ++dx) {
          window.erase(window.find(clamped(y - 1 - radius, x + dx)));
          window.insert(clamped(y + radius, x + dx));
        }
      }
      auto it = window.begin();
      std::advance(it, take);
      out(y, x) = *it;
    }
  }
  return out;
}

E3CT postprocess(const E3CT& tensor, int median_radius, double binary_threshold) {
  E3CT out;
  out.timestamp = tensor.timestamp;
  const float thr = static_cast<float>(binary_threshold);
  for (int c = 0; c < 3; ++c) {
    Grid filtered = median_filter(tensor.channels[c], median_radius);
    out.channels[c] = (filtered >= thr).cast<float>();
  }
  return out;
}

E3CT build_tensor(const EventVolume& volume, const E3ctConfig& cfg, double timestamp) {
  const double width = volume.width_seconds();
  const std::vector<double> weights = decay_kernel(volume, cfg.alpha, cfg.eta);
  E3CT raw = trilinear_vote(volume, weights, width / 3.0, cfg.height, cfg.width, timestamp);
  return postprocess(raw, cfg.median_radius, cfg.binary_threshold);
}

std::vector<std::array<E3CT, 2>> build_e3ct(EventStream& left, EventStream& right,
                                            const SyncSchedule& schedule, const E3ctConfig& cfg) {
  std::vector<std::array<E3CT, 2>> tensors;
  tensors.reserve(schedule.t_f.size());
  for (std::size_t k = 0; k < schedule.t_f.size(); ++k) {
    if (k == 0) {
      tensors.push_back({E3CT::zero(cfg.height, cfg.width, schedule.t_f[0]),
                         E3CT::zero(cfg.height, cfg.width, schedule.t_f[0])});
      continue;
    }
    const double t0 = schedule.t_f[k - 1];
    const double t1 = schedule.t_f[k];
    const EventVolume vol_l = left.slice(t0, t1);
    const EventVolume vol_r = right.slice(t0, t1);
    tensors.push_back(
        {build_tensor(vol_l, cfg, t1), build_tensor(vol_r, cfg, t1)});
  }
  return tensors;
}

}  // namespace evptam
