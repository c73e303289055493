#ifndef EVPTAM_EVENTS_HPP
#define EVPTAM_EVENTS_HPP

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "evptam/errors.hpp"

// Event ingestion, constant-time accumulation windows synchronized to frame
// mid-exposure, and construction of the 3-channel event tensor.

namespace evptam {

using Grid = Eigen::ArrayXXf;  // (rows = y, cols = x), intensities/weights

struct Event {
  std::uint64_t t = 0;  // nanoseconds
  std::uint16_t x = 0, y = 0;
  std::int8_t polarity = 1;  // +1 / -1; not used by the tensor kernels
};

constexpr double kNsPerSecond = 1e9;

inline std::uint64_t seconds_to_ns(double t) {
  return static_cast<std::uint64_t>(t * kNsPerSecond + 0.5);
}
inline double ns_to_seconds(std::uint64_t t) { return static_cast<double>(t) / kNsPerSecond; }

// One temporal accumulation window of raw events, sorted by timestamp,
// window_start <= t < window_end.
struct EventVolume {
  std::uint64_t window_start = 0, window_end = 0;  // nanoseconds
  std::vector<Event> events;

  double width_seconds() const { return ns_to_seconds(window_end - window_start); }
};

// 3-channel image-like event tensor stamped with its fusion timestamp.
struct E3CT {
  std::array<Grid, 3> channels;
  double timestamp = 0.0;  // seconds

  static E3CT zero(int height, int width, double timestamp) {
    E3CT t;
    for (auto& c : t.channels) c = Grid::Zero(height, width);
    t.timestamp = timestamp;
    return t;
  }
  int height() const { return static_cast<int>(channels[0].rows()); }
  int width() const { return static_cast<int>(channels[0].cols()); }
};

// Fusion timestamps per frame and window widths between consecutive ones.
struct SyncSchedule {
  std::vector<double> t_f;      // seconds, strictly increasing
  std::vector<double> delta_t;  // delta_t[k-1] = t_f[k] - t_f[k-1]
};

// t_f = t_CAM + t_exp / 2 for every frame timestamp.
SyncSchedule compute_fusion_timestamps(const std::vector<double>& frame_stamps, double exposure);

// ---------------------------------------------------------------------------
// Event sources. A stream serves strictly forward-moving window slices; it
// throws StreamExhausted when a finite, non-empty source ended before the
// requested window start (nothing can ever be served again). A source with no
// events at all keeps yielding empty volumes.
// ---------------------------------------------------------------------------

class EventStream {
 public:
  explicit EventStream(std::vector<Event> events);

  // Events with t in [t_start, t_end), seconds. Windows must not move backwards.
  EventVolume slice(double t_start, double t_end);

  std::size_t size() const { return events_.size(); }
  const std::vector<Event>& events() const { return events_; }

 private:
  std::vector<Event> events_;  // sorted by t
  std::size_t cursor_ = 0;
};

// Binary event file: packed little-endian records of
// (u64 timestamp ns, u16 x, u16 y, i8 polarity), no header.
std::vector<Event> read_events_binary(const std::string& path);
void write_events_binary(const std::vector<Event>& events, const std::string& path);

// CSV fixture format with a "t,x,y,p" header; t in nanoseconds.
std::vector<Event> read_events_csv(const std::string& path);
void write_events_csv(const std::vector<Event>& events, const std::string& path);

// ---------------------------------------------------------------------------
// Tensor kernels.
// ---------------------------------------------------------------------------

struct E3ctConfig {
  double alpha = 0.5;        // decay kernel exponent factor
  double eta = 0.030;        // decay span, seconds (30 ms)
  int median_radius = 1;     // post-processing median window radius, pixels
  double binary_threshold = 0.05;
  int height = 0, width = 0;  // event-camera resolution
};

// Decay weight of a single event at window-relative time t_rel (seconds),
// clamped to [0, eta]: exp(-alpha * ((t_rel - eta/2) / (eta/6))^2).
double decay_weight(double t_rel, double alpha, double eta);

// Per-event weights for a whole volume.
std::vector<double> decay_kernel(const EventVolume& volume, double alpha, double eta);

// Triangular vote of one event at window-relative time t_rel onto the three
// channel centers (i + 1/2) * dt: max(0, 1 - |t_rel - c_i| / dt). At most two
// adjacent channels receive weight and the contributions sum to <= 1.
std::array<double, 3> trilinear_weights(double t_rel, double bin_width);

// Stack decay-weighted events into the 3-channel tensor; contributions
// accumulate additively per pixel.
E3CT trilinear_vote(const EventVolume& volume, const std::vector<double>& weights,
                    double bin_width, int height, int width, double timestamp);

// Per-channel median filter followed by a binary threshold (>= thr -> 1).
E3CT postprocess(const E3CT& tensor, int median_radius, double binary_threshold);

// Median filter of one channel, window (2r+1)^2, replicated borders.
Grid median_filter(const Grid& grid, int radius);

// Full construction of one post-processed tensor from a window slice.
E3CT build_tensor(const EventVolume& volume, const E3ctConfig& cfg, double timestamp);

// One post-processed tensor per camera per window; window k covers
// [t_f[k-1], t_f[k]). The first frame has no window and gets a zero tensor.
std::vector<std::array<E3CT, 2>> build_e3ct(EventStream& left, EventStream& right,
                                            const SyncSchedule& schedule, const E3ctConfig& cfg);

}  // namespace evptam

#endif  // EVPTAM_EVENTS_HPP
