#include "unetseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "unetseg/dataset.hpp"
#include "unetseg/error.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/preprocess.hpp"

namespace unetseg {

namespace {

constexpr double kPi = std::numbers::pi;

struct Blob {
  double cx = 0, cy = 0, radius = 1, aspect = 1, angle = 0;
  std::array<double, 4> amplitude{};
  std::array<double, 4> phase{};

  // Signed margin in units of the blob radius; positive inside.
  double margin(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / radius;
    const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / (radius * aspect);
    const double rho = std::hypot(u, v);
    const double phi = std::atan2(v, u);
    double boundary = 1.0;
    for (std::size_t k = 0; k < amplitude.size(); ++k) boundary += amplitude[k] * std::cos((k + 2) * phi + phase[k]);
    return boundary - rho;
  }

  std::size_t area(std::size_t size) const {
    std::size_t n = 0;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) n += margin(x + 0.5, y + 0.5) >= 0.0;
    }
    return n;
  }
};

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

}  // namespace

void SynthOptions::validate() const {
  if (count == 0) throw ConfigError("synth.count must be positive");
  if (size < 8) throw ConfigError("synth.size must be at least 8");
  if (!(min_area > 0.0 && min_area <= max_area && max_area < 0.8)) {
    throw ConfigError("synth area fractions must satisfy 0 < min <= max < 0.8");
  }
  if (!(hair_probability >= 0.0 && hair_probability <= 1.0)) {
    throw ConfigError("synth.hair_probability must lie in [0, 1]");
  }
}

std::string synth_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%05zu", index);
  return buf;
}

Sample synth_sample(std::size_t index, const SynthOptions& options) {
  options.validate();
  const std::string id = synth_id(index);
  std::mt19937_64 rng(augmentation_seed(options.seed, id, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::size_t n = options.size;
  const double s = static_cast<double>(n);

  const std::array<double, 3> skin{uniform(0.72, 0.92), uniform(0.52, 0.68), uniform(0.42, 0.58)};
  std::array<std::array<double, 4>, 3> waves;  // fx, fy, phase, amplitude
  for (auto& w : waves) w = {uniform(0.5, 3.5), uniform(0.5, 3.5), uniform(0.0, 2 * kPi), uniform(0.01, 0.035)};

  Blob blob;
  blob.aspect = uniform(0.65, 1.0);
  blob.angle = uniform(0.0, kPi);
  for (std::size_t k = 0; k < blob.amplitude.size(); ++k) {
    blob.amplitude[k] = uniform(0.0, 0.16) / static_cast<double>(k + 1);
    blob.phase[k] = uniform(0.0, 2 * kPi);
  }
  const double target = uniform(options.min_area, options.max_area) * s * s;
  blob.radius = std::sqrt(target / (kPi * blob.aspect));
  double reach = blob.radius;
  for (double a : blob.amplitude) reach += blob.radius * a;
  const double slack = std::max(0.0, s / 2 - 0.9 * reach);
  blob.cx = s / 2 + uniform(-slack, slack);
  blob.cy = s / 2 + uniform(-slack, slack);
  for (int iter = 0; iter < 8; ++iter) {
    const double have = static_cast<double>(std::max<std::size_t>(blob.area(n), 1));
    blob.radius *= std::sqrt(target / have);
  }

  const double contrast = uniform(0.55, 1.0);
  const std::array<double, 3> lesion{uniform(0.30, 0.52), uniform(0.17, 0.33), uniform(0.10, 0.24)};
  const double core = uniform(0.0, 0.3);
  const double edge_px = uniform(0.6, 1.6);

  struct Stroke {
    std::vector<std::pair<double, double>> points;
  };
  std::vector<Stroke> hairs;
  if (unit(rng) < options.hair_probability) {
    const int count = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int h = 0; h < count; ++h) {
      const double ax = uniform(-0.1, 1.1) * s, ay = uniform(-0.1, 1.1) * s;
      const double bx = uniform(-0.1, 1.1) * s, by = uniform(-0.1, 1.1) * s;
      const double qx = uniform(0.0, 1.0) * s, qy = uniform(0.0, 1.0) * s;
      Stroke st;
      for (int i = 0; i <= 24; ++i) {
        const double t = i / 24.0;
        st.points.emplace_back((1 - t) * (1 - t) * ax + 2 * t * (1 - t) * qx + t * t * bx,
                               (1 - t) * (1 - t) * ay + 2 * t * (1 - t) * qy + t * t * by);
      }
      hairs.push_back(std::move(st));
    }
  }
  const double hair_width = std::max(0.5, s / 96.0);
  std::normal_distribution<double> noise(0.0, 0.015);

  Sample sample{id, Image(3, n, n), Mask(n, n)};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double m = blob.margin(px, py);
      sample.mask.at(y, x) = m >= 0.0 ? 1 : 0;
      const double alpha = std::clamp(0.5 + m * blob.radius / edge_px, 0.0, 1.0);
      const double depth = std::clamp(m, 0.0, 1.0);

      double texture = 0.0;
      for (const auto& w : waves) texture += w[3] * std::sin(2 * kPi * (w[0] * px + w[1] * py) / s + w[2]);
      const double r2 = ((px - s / 2) * (px - s / 2) + (py - s / 2) * (py - s / 2)) / (s * s / 2);
      const double vignette = 1.0 - 0.08 * r2;

      double hair = 0.0;
      for (const auto& st : hairs) {
        double d = 1e9;
        for (std::size_t i = 0; i + 1 < st.points.size(); ++i) {
          d = std::min(d, segment_distance(px, py, st.points[i].first, st.points[i].second,
                                           st.points[i + 1].first, st.points[i + 1].second));
        }
        hair = std::max(hair, 0.85 * std::clamp(1.0 - (d - hair_width / 2) / 0.75, 0.0, 1.0));
      }

      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = (skin[c] + texture) * vignette;
        const double fg = lesion[c] * (1.0 - core * depth);
        double v = bg + alpha * contrast * (fg - bg);
        const std::array<double, 3> hair_color{0.12, 0.08, 0.06};
        v = v + hair * (hair_color[c] - v) + noise(rng);
        sample.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return sample;
}

std::vector<std::string> synth_generate(const std::filesystem::path& root, const SynthOptions& options) {
  options.validate();
  const DatasetLayout layout{root};
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < options.count; ++i) {
    const Sample s = synth_sample(i, options);
    write_png_rgb(s.image, layout.image_path(s.id));
    write_png_mask(s.mask, layout.mask_path(s.id));
    ids.push_back(s.id);
  }
  return ids;
}

}  // namespace unetseg
