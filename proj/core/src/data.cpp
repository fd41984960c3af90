#include "dcst/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dcst/error.hpp"
#include "dcst/image_io.hpp"

namespace dcst {

// ------------------------------------------------------------------ config

void SyntheticConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("data.height/width must be at least 8");
  if (min_heads < 0 || max_heads < min_heads) {
    throw ConfigError("data.min_heads/max_heads must satisfy 0 <= min <= max");
  }
  if (!(min_radius > 0.0) || max_radius < min_radius) {
    throw ConfigError("data.min_radius/max_radius must satisfy 0 < min <= max");
  }
  if (gap < 0.0) throw ConfigError("data.gap must be non-negative");
  if (blur_band < 0.0 || blur_band > 1.0) throw ConfigError("data.blur_band must lie in [0, 1]");
  if (blur_sigma < 0.0 || noise < 0.0) throw ConfigError("data.blur_sigma/noise must be >= 0");
  if (max_attempts < 1) throw ConfigError("data.max_attempts must be positive");
}

const std::set<std::string>& SyntheticConfig::keys() {
  static const std::set<std::string> k = {
      "data.height",     "data.width",     "data.min_heads", "data.max_heads",
      "data.min_radius", "data.max_radius", "data.gap",      "data.blur_band",
      "data.blur_sigma", "data.noise",      "data.max_attempts", "data.seed"};
  return k;
}

SyntheticConfig SyntheticConfig::from_config(const KeyValueConfig& kv) {
  SyntheticConfig c;
  c.height = kv.get_int("data.height", c.height);
  c.width = kv.get_int("data.width", c.width);
  c.min_heads = kv.get_int("data.min_heads", c.min_heads);
  c.max_heads = kv.get_int("data.max_heads", c.max_heads);
  c.min_radius = kv.get_double("data.min_radius", c.min_radius);
  c.max_radius = kv.get_double("data.max_radius", c.max_radius);
  c.gap = kv.get_double("data.gap", c.gap);
  c.blur_band = kv.get_double("data.blur_band", c.blur_band);
  c.blur_sigma = kv.get_double("data.blur_sigma", c.blur_sigma);
  c.noise = kv.get_double("data.noise", c.noise);
  c.max_attempts = static_cast<int>(kv.get_int("data.max_attempts", c.max_attempts));
  c.seed = static_cast<std::uint64_t>(kv.get_int("data.seed", static_cast<std::int64_t>(c.seed)));
  c.validate();
  return c;
}

void SyntheticConfig::to_config(KeyValueConfig& kv) const {
  kv.set("data.height", height);
  kv.set("data.width", width);
  kv.set("data.min_heads", min_heads);
  kv.set("data.max_heads", max_heads);
  kv.set("data.min_radius", min_radius);
  kv.set("data.max_radius", max_radius);
  kv.set("data.gap", gap);
  kv.set("data.blur_band", blur_band);
  kv.set("data.blur_sigma", blur_sigma);
  kv.set("data.noise", noise);
  kv.set("data.max_attempts", static_cast<std::int64_t>(max_attempts));
  kv.set("data.seed", static_cast<std::int64_t>(seed));
}

// -------------------------------------------------------------- generation

namespace {

// Separable Gaussian blur of one [H, W] plane with clamped borders.
void gaussian_blur(std::vector<float>& plane, std::int64_t h, std::int64_t w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double z = 0.0;
  for (int i = -radius; i <= radius; ++i) z += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= z;
  std::vector<float> tmp(plane.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * plane[y * w + std::clamp<std::int64_t>(x + i, 0, w - 1)];
      tmp[y * w + x] = static_cast<float>(acc);
    }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp[std::clamp<std::int64_t>(y + i, 0, h - 1) * w + x];
      plane[y * w + x] = static_cast<float>(acc);
    }
}

std::string scene_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

SceneSample generate_scene(const SyntheticConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.seed, index);
  const auto h = cfg.height, w = cfg.width;
  const auto n = rng.uniform_int(cfg.min_heads, cfg.max_heads);

  struct Disk {
    double x, y, r;
  };
  std::vector<Disk> disks;
  for (std::int64_t k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const double y = rng.uniform(0.0, static_cast<double>(h - 1));
      const double x = rng.uniform(0.0, static_cast<double>(w - 1));
      const double depth = y / static_cast<double>(h - 1);
      const double r = (cfg.min_radius + (cfg.max_radius - cfg.min_radius) * depth) *
                       rng.uniform(0.9, 1.1);
      placed = std::all_of(disks.begin(), disks.end(), [&](const Disk& d) {
        return std::hypot(d.x - x, d.y - y) >= d.r + r + cfg.gap;
      });
      if (placed) disks.push_back({x, y, r});
    }
    if (!placed) {
      throw DataError("cannot place " + std::to_string(n) + " heads in a " + std::to_string(h) +
                      "x" + std::to_string(w) + " scene after " +
                      std::to_string(cfg.max_attempts) + " attempts per head");
    }
  }

  // Background: vertical gradient, a few low-frequency waves, pixel noise.
  std::vector<float> planes(static_cast<std::size_t>(3 * h * w));
  double tint[3], wave_a[3], wave_f[3], wave_p[3];
  for (int c = 0; c < 3; ++c) {
    tint[c] = rng.uniform(0.5, 0.75);
    wave_a[c] = rng.uniform(0.03, 0.08);
    wave_f[c] = rng.uniform(0.05, 0.25);
    wave_p[c] = rng.uniform(0.0, 6.283185307179586);
  }
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double g = tint[c] + 0.1 * (double(y) / h - 0.5) +
                         wave_a[c] * std::sin(wave_f[c] * (x + 0.7 * y) + wave_p[c]);
        planes[(c * h + y) * w + x] = static_cast<float>(g + rng.uniform(-cfg.noise, cfg.noise));
      }

  // Heads: dark shaded disks with a soft one-pixel edge.
  for (const auto& d : disks) {
    double base[3];
    const double shade = rng.uniform(0.08, 0.3);
    for (auto& b : base) b = shade + rng.uniform(-0.05, 0.05);
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(d.y - d.r - 1));
    const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(d.y + d.r + 1));
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(d.x - d.r - 1));
    const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(d.x + d.r + 1));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double dist = std::hypot(x - d.x, y - d.y);
        const double alpha = std::clamp(d.r + 0.5 - dist, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        const double light = 0.25 * (1.0 - dist / (d.r + 0.5));
        for (int c = 0; c < 3; ++c) {
          float& p = planes[(c * h + y) * w + x];
          p = static_cast<float>((1.0 - alpha) * p + alpha * (base[c] + light));
        }
      }
  }

  const auto band = static_cast<std::int64_t>(std::lround(cfg.blur_band * static_cast<double>(h)));
  if (band > 0 && cfg.blur_sigma > 0.0) {
    for (int c = 0; c < 3; ++c) {
      std::vector<float> plane(planes.begin() + c * h * w, planes.begin() + (c + 1) * h * w);
      gaussian_blur(plane, h, w, cfg.blur_sigma);
      std::copy(plane.begin(), plane.begin() + band * w, planes.begin() + c * h * w);
    }
  }
  for (auto& p : planes) p = std::clamp(p, 0.0f, 1.0f);

  SceneSample s;
  s.id = scene_id(index);
  s.image = Tensor::from({3, h, w}, std::move(planes));
  for (const auto& d : disks) s.heads.push_back({d.x, d.y, 2.0 * d.r, 2.0 * d.r});
  return s;
}

Tensor render_instance_mask(const SceneSample& sample) {
  const auto h = sample.height(), w = sample.width();
  std::vector<int> owner(static_cast<std::size_t>(h * w), -1);
  std::vector<double> best(owner.size(), 0.0);
  auto claim = [&](std::int64_t y, std::int64_t x, int id, double dist) {
    auto& o = owner[y * w + x];
    if (o < 0 || dist < best[y * w + x]) {
      o = id;
      best[y * w + x] = dist;
    }
  };
  for (int i = 0; i < static_cast<int>(sample.heads.size()); ++i) {
    const auto& hd = sample.heads[i];
    const double rx = hd.w / 2.0, ry = hd.h / 2.0;
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(hd.y - ry)));
    const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(hd.y + ry)));
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(hd.x - rx)));
    const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(hd.x + rx)));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double u = (x - hd.x) / rx, v = (y - hd.y) / ry;
        if (u * u + v * v <= 1.0) claim(y, x, i, std::hypot(x - hd.x, y - hd.y));
      }
    // The pixel holding the centre always belongs to some head.
    const auto cy = std::clamp<std::int64_t>(std::lround(hd.y), 0, h - 1);
    const auto cx = std::clamp<std::int64_t>(std::lround(hd.x), 0, w - 1);
    claim(cy, cx, i, std::hypot(cx - hd.x, cy - hd.y));
  }
  std::vector<float> mask(owner.size(), 0.0f);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const int o = owner[y * w + x];
      if (o < 0) continue;
      bool contested = false;
      for (int dy = -1; dy <= 1 && !contested; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const int n = owner[yy * w + xx];
          if (n >= 0 && n != o) {
            contested = true;
            break;
          }
        }
      mask[y * w + x] = contested ? 0.0f : 1.0f;
    }
  return Tensor::from({1, h, w}, std::move(mask));
}

// ----------------------------------------------------------- augmentation

SceneSample flip_horizontal(const SceneSample& s) {
  const auto h = s.height(), w = s.width();
  std::vector<std::int64_t> index(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) index[(c * h + y) * w + x] = (c * h + y) * w + (w - 1 - x);
  SceneSample out = s;
  auto src = s.image.data();
  std::vector<float> v(index.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = src[index[i]];
  out.image = Tensor::from(s.image.shape(), std::move(v));
  for (auto& hd : out.heads) hd.x = static_cast<double>(w - 1) - hd.x;
  return out;
}

SceneSample rescale(const SceneSample& s, double scale) {
  if (!(scale > 0.0)) throw ConfigError("scale must be positive");
  const auto h = s.height(), w = s.width();
  const auto nh = std::max<std::int64_t>(1, std::lround(h * scale));
  const auto nw = std::max<std::int64_t>(1, std::lround(w * scale));
  const double sy = double(nh) / double(h), sx = double(nw) / double(w);
  auto src = s.image.data();
  std::vector<float> v(static_cast<std::size_t>(3 * nh * nw));
  for (std::int64_t y = 0; y < nh; ++y) {
    const double fy = std::clamp((y + 0.5) / sy - 0.5, 0.0, double(h - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const auto y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (std::int64_t x = 0; x < nw; ++x) {
      const double fx = std::clamp((x + 0.5) / sx - 0.5, 0.0, double(w - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const auto x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (std::int64_t c = 0; c < 3; ++c) {
        const float* p = src.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bot = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        v[(c * nh + y) * nw + x] = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  SceneSample out = s;
  out.image = Tensor::from({3, nh, nw}, std::move(v));
  out.heads.clear();
  for (auto hd : s.heads) {
    hd.x = (hd.x + 0.5) * sx - 0.5;
    hd.y = (hd.y + 0.5) * sy - 0.5;
    hd.w *= sx;
    hd.h *= sy;
    // keep centres that the resampling grid can still address
    if (hd.x >= 0.0 && hd.y >= 0.0 && hd.x <= nw - 1 && hd.y <= nh - 1) out.heads.push_back(hd);
  }
  return out;
}

SceneSample crop(const SceneSample& s, std::int64_t y, std::int64_t x, std::int64_t ch,
                 std::int64_t cw) {
  if (ch < 1 || cw < 1) throw ConfigError("crop size must be positive");
  const auto h = s.height(), w = s.width();
  auto src = s.image.data();
  std::vector<float> v(static_cast<std::size_t>(3 * ch * cw), 0.0f);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < ch; ++i)
      for (std::int64_t j = 0; j < cw; ++j) {
        const auto sy = y + i, sx = x + j;
        if (sy >= 0 && sx >= 0 && sy < h && sx < w) v[(c * ch + i) * cw + j] = src[(c * h + sy) * w + sx];
      }
  SceneSample out = s;
  out.image = Tensor::from({3, ch, cw}, std::move(v));
  out.heads.clear();
  for (auto hd : s.heads) {
    hd.x -= static_cast<double>(x);
    hd.y -= static_cast<double>(y);
    if (hd.x >= 0.0 && hd.y >= 0.0 && hd.x <= cw - 1 && hd.y <= ch - 1) out.heads.push_back(hd);
  }
  return out;
}

AugmentParams draw_augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(cfg.flip_probability);
  p.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
  const auto sh = std::max<std::int64_t>(1, std::lround(s.height() * p.scale));
  const auto sw = std::max<std::int64_t>(1, std::lround(s.width() * p.scale));
  p.crop_h = cfg.crop_h;
  p.crop_w = cfg.crop_w;
  p.crop_y = sh > cfg.crop_h ? rng.uniform_int(0, sh - cfg.crop_h) : 0;
  p.crop_x = sw > cfg.crop_w ? rng.uniform_int(0, sw - cfg.crop_w) : 0;
  return p;
}

SceneSample apply_augment(const SceneSample& s, const AugmentParams& p) {
  SceneSample out = p.flip ? flip_horizontal(s) : s;
  if (p.scale != 1.0) out = rescale(out, p.scale);
  const auto ch = p.crop_h > 0 ? p.crop_h : out.height();
  const auto cw = p.crop_w > 0 ? p.crop_w : out.width();
  if (p.crop_y == 0 && p.crop_x == 0 && ch == out.height() && cw == out.width()) return out;
  return crop(out, p.crop_y, p.crop_x, ch, cw);
}

SceneSample augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(s, draw_augment(s, cfg, rng));
}

// --------------------------------------------------------------------- I/O

std::vector<HeadAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::vector<HeadAnnotation> heads;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    HeadAnnotation hd;
    std::string extra;
    if (!(row >> hd.x >> hd.y >> hd.w >> hd.h) || (row >> extra)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y w h'");
    }
    if (!(hd.w > 0.0) || !(hd.h > 0.0)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": box width and height must be positive");
    }
    heads.push_back(hd);
  }
  return heads;
}

void save_annotations(const std::filesystem::path& path, const std::vector<HeadAnnotation>& heads) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  out << std::fixed << std::setprecision(4);
  for (const auto& hd : heads) out << hd.x << ' ' << hd.y << ' ' << hd.w << ' ' << hd.h << '\n';
}

void save_sample(const std::filesystem::path& dir, const SceneSample& s) {
  write_ppm(dir / (s.id + ".ppm"), s.image);
  save_annotations(dir / (s.id + ".txt"), s.heads);
}

SceneSample load_sample(const std::filesystem::path& dir, const std::string& id) {
  SceneSample s;
  s.id = id;
  s.image = read_pnm(dir / (id + ".ppm"));
  if (s.image.dim(0) != 3) throw DataError(id + ".ppm: expected a colour image");
  s.heads = load_annotations(dir / (id + ".txt"));
  return s;
}

std::vector<std::string> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw DataError("no manifest.txt in " + dir.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    ids.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
  }
  return ids;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& id : ids) out << id << '\n';
}

void generate_dataset(const SyntheticConfig& cfg, std::int64_t count,
                      const std::filesystem::path& dir) {
  if (count < 1) throw ConfigError("dataset size must be positive");
  std::filesystem::create_directories(dir);
  std::vector<std::string> ids;
  for (std::int64_t i = 0; i < count; ++i) {
    auto s = generate_scene(cfg, static_cast<std::uint64_t>(i));
    save_sample(dir, s);
    ids.push_back(s.id);
  }
  write_manifest(dir, ids);
  KeyValueConfig kv;
  cfg.to_config(kv);
  std::ofstream(dir / "generator.cfg") << kv.to_string();
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& dir) {
  std::vector<SceneSample> out;
  for (const auto& id : read_manifest(dir)) out.push_back(load_sample(dir, id));
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  Rng rng = Rng::derive(seed, 0x5eed);
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * double(count)));
  std::vector<std::size_t> train(idx.begin(), idx.end() - n_val), val(idx.end() - n_val, idx.end());
  return {train, val};
}

}  // namespace dcst
