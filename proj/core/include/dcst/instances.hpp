#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dcst/tensor.hpp"

namespace dcst {

struct BinaryMap {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> data;  // row-major, 1 = foreground

  bool at(std::int64_t y, std::int64_t x) const { return data[y * width + x] != 0; }
  std::int64_t foreground() const;
};

/// Foreground iff score > t. Requires 0 < t < 1.
BinaryMap binarize(std::span<const float> scores, std::int64_t height, std::int64_t width,
                   double threshold);
/// Accepts [H, W], [1, H, W] or [1, 1, H, W].
BinaryMap binarize(const Tensor& scores, double threshold);

enum class Connectivity { four = 4, eight = 8 };

/// 0 = background, 1..count = components, numbered in raster order of each
/// component's first pixel.
struct InstanceMap {
  std::int64_t height = 0, width = 0;
  std::vector<std::int32_t> labels;
  std::int32_t count = 0;
};

/// Two-pass union-find labelling.
InstanceMap connected_components(const BinaryMap& bin,
                                 Connectivity connectivity = Connectivity::eight);

struct Instance {
  std::int32_t id = 0;
  double x = 0.0, y = 0.0;  // centroid, pixel coordinates
  std::int64_t area = 0;
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
};

/// One instance per label with area >= min_area, sorted by id. Ids are
/// renumbered densely when the filter drops components.
std::vector<Instance> extract_instances(const InstanceMap& labels, std::int64_t min_area = 1);

struct ExtractOptions {
  double threshold = 0.5;
  Connectivity connectivity = Connectivity::eight;
  std::int64_t min_area = 1;
};

/// binarize -> connected_components -> extract_instances.
std::vector<Instance> localize(const Tensor& scores, const ExtractOptions& options);

/// "count K threshold t" followed by one "x y area" line per instance.
void write_predictions(std::ostream& out, const std::vector<Instance>& instances,
                       double threshold);
/// Parses the format above; x, y and area are filled in.
std::vector<Instance> read_predictions(std::istream& in, double* threshold = nullptr);

}  // namespace dcst
