#ifndef EVPTAM_DATASET_HPP
#define EVPTAM_DATASET_HPP

#include <memory>
#include <string>
#include <vector>

#include "evptam/events.hpp"
#include "evptam/geometry.hpp"

// Dataset adapters behind one interface so dataset-specific layouts plug in
// without core changes. Images are rectified grayscale PGM; events come from
// the binary or CSV formats of the event pipeline.

namespace evptam {

class DatasetReader {
 public:
  virtual ~DatasetReader() = default;
  virtual RigCalibration calibration() const = 0;
  virtual std::size_t num_frames() const = 0;
  virtual double frame_timestamp(std::size_t index) const = 0;  // seconds, t_CAM
  virtual Grid frame(std::size_t index, Side side) const = 0;
  virtual std::vector<Event> events(Side side) const = 0;
  virtual std::string name() const = 0;
};

// Layout written by the simulator / `simulate` subcommand: calib.txt,
// frames.csv (index,timestamp_ns), frames/{left,right}_NNNNNN.pgm,
// events_{left,right}.bin.
std::unique_ptr<DatasetReader> open_sim_dataset(const std::string& root);

// Best-effort directory adapters for external benchmark layouts with frames
// pre-converted to PGM; see README for the exact expected trees.
std::unique_ptr<DatasetReader> open_vector_dataset(const std::string& root);
std::unique_ptr<DatasetReader> open_tumvie_dataset(const std::string& root);

std::unique_ptr<DatasetReader> open_dataset(const std::string& adapter, const std::string& root);

}  // namespace evptam

#endif  // EVPTAM_DATASET_HPP
