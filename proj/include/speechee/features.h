#ifndef SPEECHEE_FEATURES_H_
#define SPEECHEE_FEATURES_H_

#include <Eigen/Dense>

namespace speechee {

inline constexpr int kMelChannels = 80;
inline constexpr double kDefaultFrameRate = 100.0;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

// Log-magnitude mel energies, one row per frame.
struct FrameFeatures {
  Matrix frames;  // [time x 80]
  double frame_rate = kDefaultFrameRate;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  double seconds() const { return frames.rows() / frame_rate; }
};

// Throws speechee::ShapeError unless the features have 80 channels, at least
// one frame and only finite values.
void CheckFrameFeatures(const FrameFeatures &f);

}  // namespace speechee

#endif  // SPEECHEE_FEATURES_H_
