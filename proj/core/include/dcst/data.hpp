#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dcst/config.hpp"
#include "dcst/metrics.hpp"
#include "dcst/rng.hpp"
#include "dcst/tensor.hpp"

namespace dcst {

struct SceneSample {
  std::string id;
  Tensor image;  // [3, H, W] in [0, 1]
  std::vector<HeadAnnotation> heads;

  std::int64_t height() const { return image.dim(1); }
  std::int64_t width() const { return image.dim(2); }
};

/// Procedural crowd scenes: shaded disks on a textured background, smaller
/// toward the top of the frame, with an optional blurred band at the top.
struct SyntheticConfig {
  std::int64_t height = 64, width = 64;
  std::int64_t min_heads = 5, max_heads = 20;
  /// Radius at the top and bottom rows; interpolated linearly in y.
  double min_radius = 2.0, max_radius = 5.0;
  /// Minimum empty space between two disks, in pixels.
  double gap = 1.0;
  /// Fraction of rows, from the top, that are Gaussian blurred.
  double blur_band = 0.3;
  double blur_sigma = 1.0;
  double noise = 0.06;
  int max_attempts = 400;
  std::uint64_t seed = 1;

  void validate() const;
  static SyntheticConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
  static const std::set<std::string>& keys();
};

/// Sample `index` of the stream defined by cfg.seed. Throws DataError when the
/// requested heads cannot be placed.
SceneSample generate_scene(const SyntheticConfig& cfg, std::uint64_t index = 0);

/// [1, H, W] binary mask, one separate blob per head: pixels inside a disk go
/// to the nearest covering centre, then pixels touching (8-neighbourhood) a
/// different head are cleared.
Tensor render_instance_mask(const SceneSample& sample);

struct AugmentConfig {
  double flip_probability = 0.5;
  double min_scale = 0.8, max_scale = 1.2;
  std::int64_t crop_h = 64, crop_w = 64;
};

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  std::int64_t crop_y = 0, crop_x = 0;
  std::int64_t crop_h = 0, crop_w = 0;
};

/// Mirror: x' = W - 1 - x.
SceneSample flip_horizontal(const SceneSample& s);
/// Bilinear resample to round(H * s) x round(W * s); x' = (x + 0.5) s - 0.5.
SceneSample rescale(const SceneSample& s, double scale);
/// Window of size h x w at (y, x); zero padding where it leaves the image.
/// Heads whose centre falls outside the window are dropped.
SceneSample crop(const SceneSample& s, std::int64_t y, std::int64_t x, std::int64_t h,
                 std::int64_t w);

AugmentParams draw_augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng);
SceneSample apply_augment(const SceneSample& s, const AugmentParams& p);
/// flip (p = 0.5), scale in [0.8, 1.2], random crop.
SceneSample augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng);

/// One head per line: `x y w h`. Blank lines and `#` comments are skipped.
std::vector<HeadAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, const std::vector<HeadAnnotation>& heads);

/// Directory layout: manifest.txt (one sample id per line), <id>.ppm and
/// <id>.txt per sample.
void save_sample(const std::filesystem::path& dir, const SceneSample& s);
SceneSample load_sample(const std::filesystem::path& dir, const std::string& id);
std::vector<std::string> read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& ids);
/// Generates `count` scenes into `dir` and writes the manifest.
void generate_dataset(const SyntheticConfig& cfg, std::int64_t count,
                      const std::filesystem::path& dir);
/// All samples listed in the manifest, in manifest order.
std::vector<SceneSample> load_dataset(const std::filesystem::path& dir);

/// Seed-stable shuffle, then the first (1 - val_fraction) go to training.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double val_fraction, std::uint64_t seed);

}  // namespace dcst
