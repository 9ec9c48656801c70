#pragma once

#include <vector>

#include "feddet/box.hpp"

namespace feddet {

// One annotated object: class id plus its normalized bounding box.
struct GroundTruthObject {
  int class_id = 0;
  BBox box;
};

// One image with its annotations. Pixels are row-major grayscale in [0,1].
struct Sample {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::vector<GroundTruthObject> objects;
};

using Dataset = std::vector<Sample>;

}  // namespace feddet
