#include <algorithm>

#include "ktl/model.hpp"

namespace ktl::model {

template <typename T>
std::vector<keypoints::Keypoint> extract_keypoints(const Heatmap<T>& map, double threshold,
                                                   int window, std::size_t max_points) {
  if (window < 1) throw UserError("extract_keypoints: window must be >= 1");
  if (map.c != 1) throw UserError("extract_keypoints: single-channel map expected");
  struct Peak {
    double v;
    int y, x;
  };
  std::vector<Peak> peaks;
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      const double v = map.at(0, y, x);
      if (!(v >= threshold)) continue;
      bool strict = true;
      for (int dy = -window; dy <= window && strict; ++dy)
        for (int dx = -window; dx <= window; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= map.h || xx >= map.w) continue;
          if (!(map.at(0, yy, xx) < v)) {
            strict = false;
            break;
          }
        }
      if (strict) peaks.push_back({v, y, x});
    }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.v != b.v) return a.v > b.v;
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  if (peaks.size() > max_points) peaks.resize(max_points);
  std::vector<keypoints::Keypoint> out;
  out.reserve(peaks.size());
  for (const Peak& p : peaks) {
    keypoints::Keypoint k;
    k.position = {static_cast<double>(p.x), static_cast<double>(p.y)};
    k.confidence = std::clamp(p.v, 0.0, 1.0);
    out.push_back(std::move(k));
  }
  return out;
}

template std::vector<keypoints::Keypoint> extract_keypoints<float>(const Heatmap<float>&, double,
                                                                   int, std::size_t);
template std::vector<keypoints::Keypoint> extract_keypoints<double>(const Heatmap<double>&, double,
                                                                    int, std::size_t);

}  // namespace ktl::model
