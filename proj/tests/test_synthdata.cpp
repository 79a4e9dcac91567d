#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "cpgan/synthdata.hpp"
#include "helpers.hpp"

using namespace cpgan;

namespace {

DatasetConfig squares32() {
  DatasetConfig c;
  c.background = BackgroundSource::procedural;
  return c;
}

// Writes `records` CIFAR-style records with deterministic byte patterns.
void write_fake_cifar(const std::filesystem::path& path, int records, int extra_bytes = 0) {
  std::ofstream out(path, std::ios::binary);
  for (int r = 0; r < records; ++r) {
    out.put(static_cast<char>(r % 10));
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>((i * 7 + r * 13) % 256));
  }
  for (int i = 0; i < extra_bytes; ++i) out.put(0);
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("palette lists the eight corners then the mid-tones") {
    const auto& p = default_palette();
    int corners = 0;
    for (int i = 0; i < 8; ++i) {
      bool corner = true;
      for (int c = 0; c < 3; ++c) corner = corner && (p[i][c] == 0 || p[i][c] == 255);
      corners += corner;
    }
    CHECK(corners == 8);
    CHECK(p[8] == Rgb{128, 0, 0});
    CHECK(p[14] == Rgb{192, 192, 192});
    CHECK(p[15] == Rgb{128, 128, 128});
  }

  TEST_CASE("square masks have at most 81 visible pixels and exactly 81 when unoccluded") {
    const auto config = squares32();
    int unoccluded = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto s = sample_scene(config, seed);
      REQUIRE(s.object_masks.size() >= 1);
      REQUIRE(s.object_masks.size() <= 5);
      for (std::size_t k = 0; k < s.object_masks.size(); ++k) {
        const auto& m = s.object_masks[k];
        CHECK(m.is_binary());
        CHECK(m.sum() <= 81.0);
        bool covered = false;
        for (std::size_t j = k + 1; j < s.squares.size(); ++j) {
          const auto& a = s.squares[k];
          const auto& b = s.squares[j];
          covered = covered || (std::abs(a.top - b.top) < 9 && std::abs(a.left - b.left) < 9);
        }
        if (!covered) {
          CHECK(m.sum() == 81.0);
          ++unoccluded;
        }
      }
    }
    CHECK(unoccluded > 0);
  }

  TEST_CASE("a single square on a solid background has 81 visible pixels") {
    auto c = squares32();
    c.min_count = c.max_count = 1;
    c.background = BackgroundSource::solid;
    const auto s = sample_scene(c, 42);
    REQUIRE(s.object_masks.size() == 1);
    CHECK(s.object_masks[0].sum() == 81.0);
  }

  TEST_CASE("scene sampling is deterministic") {
    const auto a = sample_scene(squares32(), 9);
    const auto b = sample_scene(squares32(), 9);
    CHECK(a.image == b.image);
    CHECK((a.object_masks == b.object_masks));
    CHECK(a.background_id == b.background_id);
    CHECK_FALSE(sample_scene(squares32(), 10).image == a.image);
  }

  TEST_CASE("painting squares in order onto the background reconstructs the image") {
    auto c = squares32();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto s = sample_scene(c, seed);
      Image painted = s.background;
      for (std::size_t k = 0; k < s.squares.size(); ++k) {
        const auto& rgb = c.palette[s.squares[k].colour_index];
        const auto& m = s.object_masks[k];
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            if (m.at(y, x) == 1.0f)
              for (int ch = 0; ch < 3; ++ch) painted.at(y, x, ch) = rgb[ch] / 255.0f;
      }
      CHECK(painted == s.image);
      // The union of visible masks stays inside the placed squares.
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          bool in_square = false;
          for (const auto& sq : s.squares)
            in_square = in_square || (y >= sq.top && y < sq.top + 9 && x >= sq.left && x < sq.left + 9);
          float any = 0.0f;
          for (const auto& m : s.object_masks) any = std::max(any, m.at(y, x));
          if (any > 0.0f) CHECK(in_square);
        }
    }
  }

  TEST_CASE("solid scenes never reuse the background colour for squares") {
    const auto c = *dataset_preset("easysquares");
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const auto s = sample_scene(c, seed);
      const int bg = std::stoi(s.background_id.substr(6));
      for (const auto& sq : s.squares) CHECK(sq.colour_index != bg);
      CHECK(s.image.height() == 24);
      CHECK(s.object_masks.size() <= 3);
    }
  }

  TEST_CASE("salt and pepper noise") {
    auto c = squares32();
    const auto clean = sample_scene(c, 3);
    const auto same = apply_salt_pepper(clean, 0.0, 1);
    CHECK(same.image == clean.image);

    const auto full = apply_salt_pepper(clean, 1.0, 1);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        bool inside = false;
        for (const auto& m : clean.object_masks) inside = inside || m.at(y, x) > 0.5f;
        for (int ch = 0; ch < 3; ++ch) {
          if (inside) {
            const float v = full.image.at(y, x, ch);
            CHECK((v == 0.0f || v == 1.0f));
            CHECK(v == full.image.at(y, x, 0));
          } else {
            CHECK(full.image.at(y, x, ch) == clean.image.at(y, x, ch));
          }
        }
      }
    CHECK((full.object_masks == clean.object_masks));
  }

  TEST_CASE("salt and pepper pixel count follows the binomial law") {
    // One 9x9 square per scene on a mid-grey solid background; noise pixels are
    // exactly those set to pure black or white.
    DatasetConfig c;
    c.image_size = 16;
    c.min_count = c.max_count = 1;
    c.background = BackgroundSource::solid;
    for (auto& rgb : c.palette) rgb = Rgb{128, 128, 128};
    const int trials = 10000;
    double total = 0.0;
    for (int t = 0; t < trials; ++t) {
      auto s = sample_scene(c, static_cast<std::uint64_t>(t));
      s = apply_salt_pepper(std::move(s), 0.3, 1000 + t);
      int noisy = 0;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const float v = s.image.at(y, x, 0);
          noisy += (v == 0.0f || v == 1.0f) ? 1 : 0;
        }
      total += noisy;
    }
    const double mean = total / trials;
    const double sigma_of_mean = std::sqrt(81 * 0.3 * 0.7 / trials);
    CHECK(std::abs(mean - 24.3) < 3 * sigma_of_mean);
  }

  TEST_CASE("procedural backgrounds") {
    const auto a = procedural_background(32, 5);
    CHECK(a == procedural_background(32, 5));
    int differ = 0;
    int total = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto im = procedural_background(32, seed);
      const auto other = procedural_background(32, seed + 1000);
      float lo = 1, hi = 0;
      for (float v : im.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        CHECK((v >= 0.0f && v <= 1.0f));
      }
      CHECK(lo <= 0.1f);
      CHECK(hi >= 0.9f);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          float d = 0;
          for (int ch = 0; ch < 3; ++ch) d = std::max(d, std::abs(im.at(y, x, ch) - other.at(y, x, ch)));
          differ += d > 0.05f;
          ++total;
        }
    }
    CHECK(differ > total / 2);
  }

  TEST_CASE("CIFAR-10 batch parsing") {
    const auto dir = testing::temp_dir("cifar");
    write_fake_cifar(dir / "data_batch_1.bin", 3);
    const auto pool = load_cifar10_batch(dir / "data_batch_1.bin");
    REQUIRE(pool.size() == 3);
    // Channel-planar layout: pixel (0,0) red is byte 1 of the record.
    CHECK(pool[0].at(0, 0, 0) == doctest::Approx(0 / 255.0));
    CHECK(pool[1].at(0, 0, 0) == doctest::Approx(13 / 255.0));
    // Green plane starts 1024 bytes later.
    CHECK(pool[0].at(0, 0, 1) == doctest::Approx(((1024 * 7) % 256) / 255.0));
    CHECK(pool[0].at(0, 1, 2) == doctest::Approx(((2049 * 7) % 256) / 255.0));

    write_fake_cifar(dir / "data_batch_2.bin", 2);
    CHECK(load_cifar10_backgrounds(dir).size() == 5);

    std::ofstream(dir / "empty.bin").close();
    CHECK(load_cifar10_batch(dir / "empty.bin").empty());

    write_fake_cifar(dir / "bad.bin", 2, 100);
    try {
      load_cifar10_batch(dir / "bad.bin");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 2 * 3073);
    }
    CHECK_THROWS_AS(load_cifar10_backgrounds(dir / "nope"), IoError);
  }

  TEST_CASE("full-size batch yields file size / 3073 images") {
    const auto dir = testing::temp_dir("cifar_full");
    write_fake_cifar(dir / "data_batch_1.bin", 10000);
    const auto size = std::filesystem::file_size(dir / "data_batch_1.bin");
    CHECK(load_cifar10_batch(dir / "data_batch_1.bin").size() == size / 3073);
    CHECK(size / 3073 == 10000);
  }

  TEST_CASE("CIFAR backgrounds need a loaded pool") {
    const auto c = *dataset_preset("squares");
    CHECK_THROWS_AS(sample_scene(c, 0), IoError);
    BackgroundPool pool{Image(32, 32, 0.25f)};
    const auto s = sample_scene(c, 0, &pool);
    CHECK(s.background_id == "cifar10:0");
  }

  TEST_CASE("config validation") {
    DatasetConfig c;
    c.square_side = 32;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DatasetConfig{};
    c.max_count = 17;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DatasetConfig{};
    c.noise_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_FALSE(dataset_preset("clevr").has_value());
    CHECK(dataset_preset("noisysquares")->noise_prob == 0.3);
  }

  TEST_CASE("dataset directory round trip") {
    const auto dir = testing::temp_dir("dataset");
    SyntheticDataset ds(*dataset_preset("easysquares"), 100, 6);
    std::vector<Scene> scenes;
    for (std::size_t i = 0; i < ds.size(); ++i) scenes.push_back(ds.scene(i));
    write_dataset(dir, scenes);
    DirectoryDataset back(dir);
    REQUIRE(back.size() == 6);
    CHECK(back.image_size() == 24);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(back.scene(i).image == scenes[i].image);  // palette values survive 8-bit quantization
      CHECK((back.scene(i).object_masks == scenes[i].object_masks));
      CHECK(back.scene(i).seed == 100 + i);
    }
  }

  TEST_CASE("cached images match generated scenes") {
    SyntheticDataset cached(*dataset_preset("easysquares"), 7, 20, nullptr, true);
    SyntheticDataset plain(*dataset_preset("easysquares"), 7, 20);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(cached.image(i) == plain.scene(i).image);
      CHECK(cached.image(i) == plain.image(i));
    }
  }
}
