#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "feddet/sample.hpp"

namespace feddet {

// Deterministic synthetic tumor-style images: dark noisy background, an
// elliptical skull band, and one bright blob whose class sets its look.
//   class 0: large irregular diffuse blob (several gaussian lobes)
//   class 1: mid-size compact high-contrast disc
//   class 2: small soft blob constrained near the image center-bottom
// The bbox tightly encloses the blob's 50%-of-peak intensity contour.
// Pixels are quantized to the k/255 grid so a save/load cycle is lossless.
Dataset generate_synthetic(int count, int image_size,
                           const std::array<double, 3>& class_mix,
                           std::uint64_t seed);

// Loads every `*.pgm` (binary P5, maxval up to 65535) in lexicographic
// order together with its sibling `<stem>.txt` label file (`class cx cy w h`
// per line). A missing label file warns and yields zero objects; malformed
// lines, out-of-range classes, or boxes breaking the inside-image invariant
// are hard errors naming the file and line.
Dataset load_directory(const std::filesystem::path& dir, int num_classes = 3);

// Writes samples as sample_00000.pgm / sample_00000.txt pairs (P5 maxval
// 255; labels printed with enough digits to round-trip doubles exactly).
void save_directory(const std::filesystem::path& dir, const Dataset& samples);

// Single-image helpers, exposed for format tests.
void write_pgm(const std::filesystem::path& path, const Sample& s);
Sample read_pgm(const std::filesystem::path& path);

enum class Augment { kRot90, kRot180, kRot270, kFlipH, kFlipV };

// Exact bbox transform for one augmentation (rotations are clockwise).
BBox augment_box(const BBox& b, Augment a);

// Nearest-neighbor resize to target_size x target_size, then one extra
// sample per requested augmentation. The original (resized) sample is
// always first; augmentations follow in the fixed order rot90, rot180,
// rot270, fliph, flipv regardless of how `augment` is ordered.
std::vector<Sample> preprocess(const Sample& s, int target_size,
                               const std::vector<Augment>& augment);

// Deterministic stratified split (stratum = class of first object; samples
// without objects form their own stratum). Train gets ceil(fraction * n)
// samples, apportioned across strata by largest remainder. Both halves
// keep ascending original order.
std::pair<Dataset, Dataset> split_train_test(const Dataset& samples, double fraction,
                                             std::uint64_t seed);

struct PartitionSpec {
  enum class Mode { kIid, kDirichlet };
  Mode mode = Mode::kIid;
  double alpha = 0.5;  // dirichlet concentration, ignored for iid
  int num_clients = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Client assignment as index lists into `train`. Every index appears in
// exactly one client; every client is nonempty. iid deals round-robin
// after a shuffle (N=1 keeps the original order); dirichlet draws
// per-class client proportions from Dirichlet(alpha,...,alpha) and deals
// accordingly, redrawing up to 100 times if a client comes up empty.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& train,
                                                        const PartitionSpec& spec);

std::vector<Dataset> partition(const Dataset& train, const PartitionSpec& spec);

// JSON manifest mapping client id (as a string key) to its sample indices.
void write_partition_manifest(const std::filesystem::path& path,
                              const std::vector<std::vector<std::size_t>>& assignment);

}  // namespace feddet
