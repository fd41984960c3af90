#include "dcst/instances.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dcst/error.hpp"

namespace dcst {

std::int64_t BinaryMap::foreground() const {
  return std::count(data.begin(), data.end(), std::uint8_t{1});
}

BinaryMap binarize(std::span<const float> scores, std::int64_t height, std::int64_t width,
                   double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  if (static_cast<std::int64_t>(scores.size()) != height * width) {
    throw ShapeError("binarize: " + std::to_string(scores.size()) + " scores for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  BinaryMap b{height, width, std::vector<std::uint8_t>(scores.size())};
  for (std::size_t i = 0; i < scores.size(); ++i) b.data[i] = scores[i] > threshold ? 1 : 0;
  return b;
}

BinaryMap binarize(const Tensor& scores, double threshold) {
  const auto& s = scores.shape();
  const bool ok = s.size() >= 2 && s.size() <= 4 &&
                  std::all_of(s.begin(), s.end() - 2, [](std::int64_t d) { return d == 1; });
  if (!ok) throw ShapeError("binarize: expected a single map, got " + to_string(s));
  return binarize(scores.data(), s[s.size() - 2], s.back(), threshold);
}

namespace {

struct UnionFind {
  std::vector<std::int32_t> parent;
  std::int32_t make() {
    parent.push_back(static_cast<std::int32_t>(parent.size()));
    return parent.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

InstanceMap connected_components(const BinaryMap& bin, Connectivity connectivity) {
  const auto h = bin.height, w = bin.width;
  InstanceMap out{h, w, std::vector<std::int32_t>(static_cast<std::size_t>(h * w), 0), 0};
  UnionFind uf;
  uf.make();  // index 0 is background
  // First pass: provisional labels from the already-visited neighbours.
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!bin.at(y, x)) continue;
      std::int32_t best = 0;
      auto visit = [&](std::int64_t yy, std::int64_t xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const auto l = out.labels[yy * w + xx];
        if (l == 0) return;
        if (best == 0) best = l;
        else uf.unite(best, l);
      };
      visit(y, x - 1);
      visit(y - 1, x);
      if (connectivity == Connectivity::eight) {
        visit(y - 1, x - 1);
        visit(y - 1, x + 1);
      }
      out.labels[y * w + x] = best != 0 ? best : uf.make();
    }
  // Second pass: resolve roots and number them in raster order.
  std::vector<std::int32_t> dense(uf.parent.size(), 0);
  for (auto& l : out.labels) {
    if (l == 0) continue;
    const auto root = uf.find(l);
    if (dense[root] == 0) dense[root] = ++out.count;
    l = dense[root];
  }
  return out;
}

std::vector<Instance> extract_instances(const InstanceMap& labels, std::int64_t min_area) {
  struct Acc {
    double sx = 0.0, sy = 0.0;
    std::int64_t area = 0;
    std::int64_t x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(labels.count) + 1);
  for (std::int64_t y = 0; y < labels.height; ++y)
    for (std::int64_t x = 0; x < labels.width; ++x) {
      const auto l = labels.labels[y * labels.width + x];
      if (l == 0) continue;
      auto& a = acc[l];
      if (a.area == 0) a.x0 = a.x1 = x, a.y0 = a.y1 = y;
      a.sx += static_cast<double>(x);
      a.sy += static_cast<double>(y);
      ++a.area;
      a.x0 = std::min(a.x0, x), a.x1 = std::max(a.x1, x);
      a.y0 = std::min(a.y0, y), a.y1 = std::max(a.y1, y);
    }
  std::vector<Instance> out;
  for (std::int32_t l = 1; l <= labels.count; ++l) {
    const auto& a = acc[l];
    if (a.area < std::max<std::int64_t>(min_area, 1)) continue;
    Instance inst;
    inst.id = static_cast<std::int32_t>(out.size()) + 1;
    inst.x = a.sx / static_cast<double>(a.area);
    inst.y = a.sy / static_cast<double>(a.area);
    inst.area = a.area;
    inst.x0 = a.x0, inst.y0 = a.y0, inst.x1 = a.x1, inst.y1 = a.y1;
    out.push_back(inst);
  }
  return out;
}

std::vector<Instance> localize(const Tensor& scores, const ExtractOptions& options) {
  return extract_instances(
      connected_components(binarize(scores, options.threshold), options.connectivity),
      options.min_area);
}

void write_predictions(std::ostream& out, const std::vector<Instance>& instances,
                       double threshold) {
  out << "count " << instances.size() << " threshold " << threshold << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& i : instances) out << i.x << ' ' << i.y << ' ' << i.area << '\n';
  out << std::defaultfloat;
}

std::vector<Instance> read_predictions(std::istream& in, double* threshold) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("predictions: missing header line");
  std::istringstream header(line);
  std::string count_kw, thr_kw;
  std::size_t count = 0;
  double t = 0.0;
  if (!(header >> count_kw >> count >> thr_kw >> t) || count_kw != "count" ||
      thr_kw != "threshold") {
    throw DataError("predictions line 1: expected 'count K threshold t'");
  }
  if (threshold) *threshold = t;
  std::vector<Instance> out;
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(in, line)) {
      throw DataError("predictions: header promises " + std::to_string(count) +
                      " instances, file ends after " + std::to_string(k));
    }
    std::istringstream row(line);
    Instance inst;
    inst.id = static_cast<std::int32_t>(k) + 1;
    if (!(row >> inst.x >> inst.y >> inst.area)) {
      throw DataError("predictions line " + std::to_string(k + 2) + ": expected 'x y area'");
    }
    out.push_back(inst);
  }
  return out;
}

}  // namespace dcst
