#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "test_util.hpp"
#include "unetseg/dataset.hpp"
#include "unetseg/error.hpp"
#include "unetseg/log.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/preprocess.hpp"
#include "unetseg/synth.hpp"

using namespace unetseg;
using unetseg::testing::TempDir;

namespace {

Sample random_sample(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  Sample s{"s" + std::to_string(seed), Image(3, h, w), Mask(h, w)};
  for (float& v : s.image.data) v = byte(rng) / 255.0f;
  for (auto& v : s.mask.data) v = byte(rng) & 1;
  return s;
}

Sample disk_sample(std::size_t n, double radius) {
  Sample s{"disk", Image(3, n, n, 0.5f), Mask(n, n)};
  const double c = n / 2.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const bool in = std::hypot(x + 0.5 - c, y + 0.5 - c) <= radius;
      s.mask.at(y, x) = in;
      if (in) s.image.at(0, y, x) = 0.1f;
    }
  }
  return s;
}

void write_gray(const std::vector<std::uint8_t>& values, std::size_t h, std::size_t w,
                const std::filesystem::path& path) {
  Image im(1, h, w);
  for (std::size_t i = 0; i < values.size(); ++i) im.data[i] = values[i] / 255.0f;
  write_png_rgb(im, path);
}

}  // namespace

TEST(PngIo, RgbRoundTripIsExact) {
  TempDir dir("png");
  const Sample s = random_sample(7, 5, 1);
  write_png_rgb(s.image, dir / "a.png");
  EXPECT_EQ(read_png_rgb(dir / "a.png"), s.image);
}

TEST(PngIo, MaskAndProbabilityRoundTrip) {
  TempDir dir("png");
  const Sample s = random_sample(6, 9, 2);
  write_png_mask(s.mask, dir / "m.png");
  const auto plane = read_png_gray(dir / "m.png");
  for (std::size_t i = 0; i < plane.data.size(); ++i) EXPECT_EQ(plane.data[i], s.mask.data[i] ? 255 : 0);

  Image p(1, 4, 4);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<float>(i * 4099 % 65536 / 65535.0);
  write_png_probability(p, dir / "p.png");
  const Image back = read_png_probability(dir / "p.png");
  for (std::size_t i = 0; i < p.data.size(); ++i) EXPECT_NEAR(back.data[i], p.data[i], 1e-7);
}

TEST(PngIo, MissingAndCorruptFiles) {
  TempDir dir("png");
  EXPECT_THROW(read_png_rgb(dir / "nope.png"), IoError);
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(read_png_rgb(dir / "bad.png"), IoError);
}

TEST(LoadSample, BinarisesMaskAndWarnsOnOddValues) {
  TempDir dir("load");
  write_png_rgb(Image(3, 2, 2, 0.5f), dir / "i.png");
  write_gray({0, 255, 255, 0}, 2, 2, dir / "clean.png");
  write_gray({0, 200, 127, 128}, 2, 2, dir / "odd.png");
  {
    log::Capture capture;
    const Sample s = load_sample("x", dir / "i.png", dir / "clean.png");
    EXPECT_EQ(s.mask.data, (std::vector<std::uint8_t>{0, 1, 1, 0}));
    EXPECT_EQ(capture.warnings(), 0);
  }
  log::Capture capture;
  const Sample s = load_sample("x", dir / "i.png", dir / "odd.png");
  EXPECT_EQ(s.mask.data, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(capture.warnings(), 1);
  EXPECT_FLOAT_EQ(s.image.at(1, 0, 0), 128.0f / 255.0f);
}

TEST(LoadSample, MissingMaskAndSizeMismatch) {
  TempDir dir("load");
  write_png_rgb(Image(3, 2, 2, 0.5f), dir / "i.png");
  write_gray({0, 0, 0}, 1, 3, dir / "m.png");
  EXPECT_THROW(load_sample("x", dir / "i.png", dir / "none.png"), DataError);
  EXPECT_THROW(load_sample("x", dir / "i.png", dir / "m.png"), DataError);
}

TEST(LoadDataset, ReportsMissingMasksById) {
  TempDir dir("ds");
  DatasetLayout layout{dir.path()};
  const Sample s = random_sample(4, 4, 3);
  for (const char* id : {"a", "b", "c"}) write_png_rgb(s.image, layout.image_path(id));
  write_png_mask(s.mask, layout.mask_path("a"));
  try {
    load_dataset(dir.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("b"), std::string::npos);
    EXPECT_NE(msg.find("c"), std::string::npos);
  }
  write_png_mask(s.mask, layout.mask_path("b"));
  write_png_mask(s.mask, layout.mask_path("c"));
  LoadOptions opts;
  opts.size = 2;
  const auto samples = load_dataset(dir.path(), opts);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[1].id, "b");
  EXPECT_EQ(samples[1].image.height, 2u);
}

TEST(Resize, SameSizeIsIdentity) {
  const Sample s = random_sample(9, 9, 4);
  const Sample r = resize(s, 9);
  EXPECT_EQ(r.image, s.image);
  EXPECT_EQ(r.mask, s.mask);
}

TEST(Resize, NearestCheckerboardFollowsMapping) {
  Mask m(4, 4);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) m.at(y, x) = (x / 1 + y * 3) % 2;
  }
  const Mask r = resize_nearest(m, 2, 2);
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) EXPECT_EQ(r.at(y, x), m.at(2 * y + 1, 2 * x + 1));
  }
}

TEST(Resize, HalvingBilinearAveragesBlocks) {
  const Sample s = random_sample(8, 8, 5);
  const Image r = resize_bilinear(s.image, 4, 4);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        const double mean = (s.image.at(c, 2 * y, 2 * x) + s.image.at(c, 2 * y, 2 * x + 1) +
                             s.image.at(c, 2 * y + 1, 2 * x) + s.image.at(c, 2 * y + 1, 2 * x + 1)) / 4.0;
        EXPECT_NEAR(r.at(c, y, x), mean, 1e-6);
      }
    }
  }
}

TEST(ColorBalance, EqualisesChannelMeans) {
  Sample s = random_sample(16, 16, 6);
  for (std::size_t i = 0; i < s.image.plane(); ++i) s.image.data[i] *= 0.5f;
  const Image b = color_balance(s.image);
  std::array<double, 3> means{};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < b.plane(); ++i) means[c] += b.data[c * b.plane() + i];
  }
  EXPECT_NEAR(means[0] / means[1], 1.0, 0.02);
  EXPECT_NEAR(means[2] / means[1], 1.0, 0.02);

  Image zero = s.image;
  std::fill(zero.data.begin(), zero.data.begin() + static_cast<std::ptrdiff_t>(zero.plane()), 0.0f);
  const Image z = color_balance(zero);
  for (std::size_t i = 0; i < z.plane(); ++i) EXPECT_EQ(z.data[i], 0.0f);
}

TEST(Augment, DisabledIsBitExact) {
  const Sample s = random_sample(12, 12, 7);
  const Sample a = augment(s, AugmentParams::none(), std::uint64_t{99});
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.mask, s.mask);
}

TEST(Augment, DihedralInverseRestoresExactly) {
  const Sample s = random_sample(10, 10, 8);
  for (int k = 0; k < 8; ++k) {
    const Sample once = apply_geometry(s, {k, 0.0, 1.0});
    const Sample back = apply_geometry(once, {dihedral_inverse(k), 0.0, 1.0});
    EXPECT_EQ(back.mask, s.mask) << k;
    EXPECT_EQ(back.image, s.image) << k;
    if (k != 0) {
      EXPECT_NE(once.mask, s.mask) << k;
    }
  }
}

TEST(Augment, DihedralElementsAreDistinctPermutations) {
  Sample s{"p", Image(1, 4, 4), Mask(4, 4)};
  std::iota(s.image.data.begin(), s.image.data.end(), 0.0f);
  std::set<std::vector<float>> seen;
  for (int k = 0; k < 8; ++k) {
    auto data = apply_geometry(s, {k, 0.0, 1.0}).image.data;
    auto sorted = data;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, s.image.data);
    seen.insert(data);
  }
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Augment, RotationThenInversePreservesArea) {
  const Sample s = disk_sample(128, 36.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> angle(-44.0, 44.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double theta = angle(rng);
    const Sample back = apply_geometry(apply_geometry(s, {0, theta, 1.0}), {0, -theta, 1.0});
    const double ratio = static_cast<double>(back.mask.count()) / static_cast<double>(s.mask.count());
    EXPECT_NEAR(ratio, 1.0, 0.02) << theta;
  }
}

TEST(Augment, SeededAndBounded) {
  const Sample s = synth_sample(3, SynthOptions{});
  const AugmentParams params;
  const Sample a = augment(s, params, augmentation_seed(1, s.id, 4));
  const Sample b = augment(s, params, augmentation_seed(1, s.id, 4));
  const Sample c = augment(s, params, augmentation_seed(1, s.id, 5));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.image, c.image);
  for (float v : a.image.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  for (auto v : a.mask.data) ASSERT_LE(v, 1);
  EXPECT_NE(augmentation_seed(1, "a", 0), augmentation_seed(1, "b", 0));
}

TEST(Augment, ZoomKeepsCentre) {
  const Sample s = disk_sample(32, 8.0);
  const Sample z = apply_geometry(s, {0, 0.0, 1.05});
  EXPECT_EQ(z.mask.at(16, 16), 1);
  EXPECT_GE(z.mask.count(), s.mask.count());
}

TEST(Augment, NonSquareRestrictsDihedral) {
  const Sample s = random_sample(4, 6, 10);
  EXPECT_THROW(apply_geometry(s, {1, 0.0, 1.0}), ContractError);
  for (int trial = 0; trial < 10; ++trial) {
    const Sample a = augment(s, AugmentParams{}, static_cast<std::uint64_t>(trial));
    EXPECT_EQ(a.image.height, 4u);
  }
}

TEST(KFold, ExampleSizes) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
  const FoldSplit split = kfold_split(ids, 3, 7);
  std::multiset<std::size_t> sizes{split.fold_size(0), split.fold_size(1), split.fold_size(2)};
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{3, 3, 4}));
  EXPECT_THROW(kfold_split(ids, 1, 7), ContractError);
  EXPECT_THROW(kfold_split({"a"}, 2, 7), ContractError);
}

TEST(KFold, PartitionProperty) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 60)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(2, n)(rng);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    const FoldSplit split = kfold_split(ids, k, trial);
    std::multiset<std::string> all;
    std::size_t lo = n, hi = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const auto val = split.validation_ids(f);
      all.insert(val.begin(), val.end());
      lo = std::min(lo, val.size());
      hi = std::max(hi, val.size());
      EXPECT_EQ(split.training_ids(f).size() + val.size(), n);
    }
    EXPECT_EQ(all, std::multiset<std::string>(ids.begin(), ids.end()));
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(KFold, DeterministicAndCsvRoundTrip) {
  std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g"};
  const FoldSplit a = kfold_split(ids, 3, 5);
  EXPECT_EQ(a.assignment, kfold_split(ids, 3, 5).assignment);
  TempDir dir("split");
  write_split_csv(a, dir / "split.csv");
  const FoldSplit back = read_split_csv(dir / "split.csv");
  EXPECT_EQ(back.assignment, a.assignment);
  EXPECT_EQ(back.k, 3u);
}

TEST(Synth, DeterministicAndAreaDistribution) {
  SynthOptions opts;
  opts.size = 32;
  opts.seed = 4;
  EXPECT_EQ(synth_sample(5, opts).image, synth_sample(5, opts).image);
  double area = 0.0;
  double lo = 1.0, hi = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const Sample s = synth_sample(i, opts);
    const double a = static_cast<double>(s.mask.count()) / 1024.0;
    area += a;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  EXPECT_GE(area / 200, 0.18);
  EXPECT_LE(area / 200, 0.26);
  EXPECT_GT(lo, 0.0);
  EXPECT_LT(hi, 0.5);
}

TEST(Synth, GeneratedDatasetLoadsBack) {
  TempDir dir("synth");
  SynthOptions opts;
  opts.count = 5;
  opts.size = 16;
  const auto ids = synth_generate(dir.path(), opts);
  EXPECT_EQ(list_image_ids(dir.path()), ids);
  const auto samples = load_dataset(dir.path());
  ASSERT_EQ(samples.size(), 5u);
  EXPECT_EQ(samples[2].mask, synth_sample(2, opts).mask);
}

TEST(Batch, StacksSamples) {
  const Sample a = random_sample(4, 4, 11), b = random_sample(4, 4, 12);
  const std::vector<const Sample*> ptrs{&a, &b};
  auto [x, y] = make_batch<float>(ptrs);
  EXPECT_EQ(x.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(y.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(x.at(48 + 5), b.image.data[5]);
  EXPECT_EQ(y.at(16 + 3), b.mask.data[3]);
}
