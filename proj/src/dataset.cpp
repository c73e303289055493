#include "evptam/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evptam/image_io.hpp"

namespace evptam {

namespace fs = std::filesystem;

namespace {

std::string require(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("missing dataset file: " + p.string());
  return p.string();
}

// Simulator layout ----------------------------------------------------------

class SimDataset final : public DatasetReader {
 public:
  explicit SimDataset(const std::string& root) : root_(root) {
    rig_ = read_rig_calibration(require(root_ / "calib.txt"));
    std::ifstream csv(require(root_ / "frames.csv"));
    std::string line;
    std::getline(csv, line);  // header
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      std::size_t index;
      std::uint64_t t_ns;
      if (!(ss >> index >> t_ns)) throw ParseError("malformed frames.csv record", line_no);
      stamps_.push_back(ns_to_seconds(t_ns));
    }
  }

  RigCalibration calibration() const override { return rig_; }
  std::size_t num_frames() const override { return stamps_.size(); }
  double frame_timestamp(std::size_t index) const override { return stamps_.at(index); }

  Grid frame(std::size_t index, Side side) const override {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06zu.pgm", side == Side::Left ? "left" : "right",
                  index);
    return read_pgm(require(root_ / "frames" / name));
  }

  std::vector<Event> events(Side side) const override {
    return read_events_binary(
        require(root_ / (side == Side::Left ? "events_left.bin" : "events_right.bin")));
  }

  std::string name() const override { return "sim"; }

 private:
  fs::path root_;
  RigCalibration rig_;
  std::vector<double> stamps_;
};

// Benchmark-style layouts ----------------------------------------------------
//
// Both adapters expect calibration in the rig key-value format and frames
// converted to PGM; they differ in tree shape and timestamp units, matching
// the upstream conventions (ns for the first, us for the second).

class DirDataset : public DatasetReader {
 public:
  DirDataset(const std::string& root, const std::string& cam_dir_suffix,
             const std::string& events_suffix, double stamp_to_seconds, std::string name)
      : root_(root),
        cam_suffix_(cam_dir_suffix),
        events_suffix_(events_suffix),
        stamp_scale_(stamp_to_seconds),
        name_(std::move(name)) {
    rig_ = read_rig_calibration(require(root_ / "calibration.txt"));
    std::ifstream ts(require(root_ / ("left" + cam_suffix_) / "timestamps.txt"));
    double raw;
    while (ts >> raw) stamps_.push_back(raw * stamp_scale_);
    for (const auto& entry : fs::directory_iterator(root_ / ("left" + cam_suffix_))) {
      if (entry.path().extension() == ".pgm") images_.push_back(entry.path().filename().string());
    }
    std::sort(images_.begin(), images_.end());
    if (images_.size() != stamps_.size()) {
      throw DataError("frame/timestamp count mismatch in " + root_.string());
    }
  }

  RigCalibration calibration() const override { return rig_; }
  std::size_t num_frames() const override { return stamps_.size(); }
  double frame_timestamp(std::size_t index) const override { return stamps_.at(index); }

  Grid frame(std::size_t index, Side side) const override {
    const std::string cam = (side == Side::Left ? "left" : "right") + cam_suffix_;
    return read_pgm(require(root_ / cam / images_.at(index)));
  }

  std::vector<Event> events(Side side) const override {
    const std::string stem = (side == Side::Left ? "left" : "right") + events_suffix_;
    const fs::path csv = root_ / (stem + ".csv");
    const fs::path bin = root_ / (stem + ".bin");
    if (fs::exists(csv)) {
      std::vector<Event> ev = read_events_csv(csv.string());
      if (stamp_scale_ != 1e-9) {
        const double to_ns = stamp_scale_ * 1e9;
        for (auto& e : ev) e.t = static_cast<std::uint64_t>(e.t * to_ns + 0.5);
      }
      return ev;
    }
    return read_events_binary(require(bin));
  }

  std::string name() const override { return name_; }

 private:
  fs::path root_;
  std::string cam_suffix_, events_suffix_;
  double stamp_scale_;
  std::string name_;
  RigCalibration rig_;
  std::vector<double> stamps_;
  std::vector<std::string> images_;
};

}  // namespace

std::unique_ptr<DatasetReader> open_sim_dataset(const std::string& root) {
  return std::make_unique<SimDataset>(root);
}

std::unique_ptr<DatasetReader> open_vector_dataset(const std::string& root) {
  // <root>/{left,right}_camera/{timestamps.txt, *.pgm}, events in ns
  return std::make_unique<DirDataset>(root, "_camera", "_events", 1e-9, "vector");
}

std::unique_ptr<DatasetReader> open_tumvie_dataset(const std::string& root) {
  // <root>/{left,right}/{timestamps.txt, *.pgm}, timestamps and events in us
  return std::make_unique<DirDataset>(root, "", "_events", 1e-6, "tumvie");
}

std::unique_ptr<DatasetReader> open_dataset(const std::string& adapter, const std::string& root) {
  if (adapter == "sim") return open_sim_dataset(root);
  if (adapter == "vector") return open_vector_dataset(root);
  if (adapter == "tumvie") return open_tumvie_dataset(root);
  throw ConfigError("unknown dataset adapter: " + adapter);
}

}  // namespace evptam
