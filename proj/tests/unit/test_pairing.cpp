#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "oneshot/errors.hpp"
#include "oneshot/pairing.hpp"
#include "oneshot/random.hpp"

using namespace oneshot;

namespace {

Dataset small_dataset(int classes, int per_class) {
  Dataset d;
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) {
      d.images.emplace_back(2, 3, 1, static_cast<float>(c * per_class + k) / 100.0f);
      d.class_ids.push_back(c);
      d.sources.push_back("img" + std::to_string(c) + "_" + std::to_string(k));
    }
  return d;
}

}  // namespace

TEST_CASE("grayscale") {
  CHECK(to_grayscale(Image(1, 1, 3, std::vector<float>{1, 1, 1})).at(0, 0) == doctest::Approx(1.0));
  CHECK(to_grayscale(Image(1, 1, 3, std::vector<float>{1, 0, 0})).at(0, 0) == doctest::Approx(0.299));
  const Image g(2, 2, 1, 0.4f);
  CHECK(to_grayscale(g) == g);
  CHECK_THROWS_AS(to_grayscale(Image(1, 1, 2, 0.0f)), ShapeError);
}

TEST_CASE("merge modes") {
  const Image a(96, 96, 1, 0.2f), b(96, 96, 1, 0.7f);
  const Image s = merge(a, b, MergeMode::stacked).data;
  CHECK(s.shape() == Shape{96, 96, 2});
  CHECK(s.at(5, 5, 0) == 0.2f);
  CHECK(s.at(5, 5, 1) == 0.7f);
  const Image h = merge(a, b, MergeMode::h_join).data;
  CHECK(h.shape() == Shape{96, 192, 1});
  CHECK(h.at(0, 95) == 0.2f);
  CHECK(h.at(0, 96) == 0.7f);
  CHECK(merge(a, b, MergeMode::v_join).data.shape() == Shape{192, 96, 1});
  const Image same = merge(a, a, MergeMode::stacked).data;
  for (std::size_t i = 0; i < same.size(); i += 2) CHECK(same.pixels()[i] == same.pixels()[i + 1]);
  CHECK_THROWS_AS(merge(a, Image(90, 96, 1, 0.0f), MergeMode::stacked), ShapeError);
  CHECK(merged_input_shape({96, 96, 1}, MergeMode::h_join) == Shape{1, 96, 192});
  CHECK(merge_mode_from_string(to_string(MergeMode::h_join)) == MergeMode::h_join);
  CHECK_THROWS_AS(merge_mode_from_string("diagonal"), ConfigError);
}

TEST_CASE("pair sampling") {
  const Dataset d = small_dataset(5, 4);
  const auto pairs = sample_pairs(d, 100, 0.5, 7);
  CHECK(pairs.size() == 100);
  CHECK(std::count_if(pairs.begin(), pairs.end(), [](const PairSample& p) { return p.label == 1; }) == 50);
  for (const auto& p : pairs) {
    CHECK(p.index_a != p.index_b);
    CHECK((d.class_ids[p.index_a] == d.class_ids[p.index_b]) == (p.label == 1));
  }
  const auto again = sample_pairs(d, 100, 0.5, 7);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(again[i].index_a == pairs[i].index_a);
    CHECK(again[i].index_b == pairs[i].index_b);
  }
  CHECK_THROWS_AS(sample_pairs(small_dataset(1, 5), 10, 0.5, 1), DataError);
  CHECK_THROWS_AS(sample_pairs(small_dataset(4, 1), 10, 0.5, 1), DataError);
  CHECK_THROWS_AS(sample_pairs(d, 10, 1.5, 1), ConfigError);
  CHECK(with_swapped(pairs).size() == 200);
}

TEST_CASE("query pairs work with one image per class") {
  const Dataset queries = small_dataset(4, 1), gallery = small_dataset(4, 3);
  const auto pairs = sample_query_pairs(queries, gallery, 40, 0.5, 3);
  CHECK(pairs.size() == 40);
  for (const auto& p : pairs) CHECK((queries.class_ids[p.index_a] == gallery.class_ids[p.index_b]) == (p.label == 1));
}

TEST_CASE("class hold-out") {
  const Dataset d = small_dataset(10, 2);
  const ClassSplit s = holdout_split(d, 3, 11);
  CHECK(s.test_classes.size() == 3);
  CHECK(s.train_classes.size() == 7);
  for (int c : s.test_classes) CHECK(std::find(s.train_classes.begin(), s.train_classes.end(), c) == s.train_classes.end());
  CHECK(holdout_split(d, 3, 11).test_classes == s.test_classes);
  CHECK_THROWS_AS(holdout_split(d, 10, 1), ConfigError);
}

TEST_CASE("pair manifests") {
  const auto path = std::filesystem::temp_directory_path() / "oneshot_pairs.tsv";
  const Dataset d = small_dataset(3, 2);
  const auto entries = manifest_entries(d, sample_pairs(d, 6, 0.5, 1));
  write_pair_manifest(path, entries);
  const auto back = read_pair_manifest(path);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].path_a == entries[i].path_a);
    CHECK(back[i].label == entries[i].label);
  }
  std::ofstream(path) << "a\tb\t2\n";
  CHECK_THROWS_AS(read_pair_manifest(path), FormatError);
  std::ofstream(path) << "a\tb\n";
  CHECK_THROWS_AS(read_pair_manifest(path), FormatError);
  std::ofstream(path) << "\n\n";
  CHECK(read_pair_manifest(path).empty());
  std::filesystem::remove(path);
}
