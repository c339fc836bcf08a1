#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oneshot/errors.hpp"
#include "oneshot/pgm.hpp"
#include "oneshot/random.hpp"
#include "oneshot/smallnorb.hpp"

using namespace oneshot;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oneshot_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Image gradient_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> px(h * w);
  for (auto& p : px) p = static_cast<float>(rng.below(256)) / 255.0f;
  return Image(h, w, 1, px);
}

}  // namespace

TEST_CASE("pgm decoding") {
  const std::string bytes = std::string("P5\n# a comment\n2 1\n# another\n255\n") + char(255) + char(0);
  const PgmFile f = decode_pgm(bytes);
  CHECK(f.image.shape() == Shape{1, 2, 1});
  CHECK(f.image.at(0, 0) == 1.0f);
  CHECK(f.image.at(0, 1) == 0.0f);
  CHECK(f.maxval == 255);

  const std::string wide = std::string("P5 1 1 1000\n") + char(1000 >> 8) + char(1000 & 255);
  CHECK(decode_pgm(wide).image.at(0, 0) == 1.0f);

  CHECK_THROWS_AS(decode_pgm("P2\n1 1\n255\n0"), FormatError);
  CHECK_THROWS_AS(decode_pgm(std::string("P5\n2 2\n255\n") + "ab"), FormatError);
  CHECK_THROWS_AS(decode_pgm(std::string("P5\n1 1\n100\n") + char(200)), FormatError);
}

TEST_CASE("pgm round trip is byte-identical") {
  const Image img = gradient_image(7, 5, 3);
  const std::string once = encode_pgm(img);
  CHECK(encode_pgm(decode_pgm(once).image) == once);
  CHECK(decode_pgm(once).image == img);
  CHECK_THROWS_AS(encode_pgm(Image(2, 2, 2, 0.0f)), ShapeError);
}

TEST_CASE("face tree loader") {
  const fs::path dir = scratch("faces");
  Dataset d;
  for (int c = 1; c <= 40; ++c)
    for (int k = 0; k < 10; ++k) {
      d.images.push_back(gradient_image(6, 5, c * 100 + k));
      d.class_ids.push_back(c);
    }
  export_pgm_tree(d, dir);
  const Dataset faces = load_pgm_faces(dir);
  CHECK(faces.size() == 400);
  CHECK(faces.classes().size() == 40);
  for (const auto& [c, idx] : faces.indices_by_class()) CHECK(idx.size() == 10);
  CHECK(faces.images[0] == d.images[0]);
  CHECK(faces.class_ids == d.class_ids);
  // Deterministic and numerically ordered (s10 after s9).
  CHECK(content_hash(load_pgm_faces(dir)) == content_hash(faces));
  CHECK(faces.sources[9 * 10].find("s10") != std::string::npos);

  fs::remove_all(dir / "s40");
  CHECK_THROWS_AS(load_pgm_faces(dir), DataError);
  CHECK_THROWS_AS(load_pgm_tree(scratch("empty")), DataError);
}

TEST_CASE("norb matrix codec") {
  const fs::path dir = scratch("norbcodec");
  NorbMatrix m;
  m.header.magic = kNorbIntMatrix;
  m.header.ndim = 1;
  m.header.stored_dims = {3, 1, 1};
  m.payload = {1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0};
  write_norb_matrix(dir / "m.mat", m);
  const NorbMatrix back = read_norb_matrix(dir / "m.mat");
  CHECK(back.header.dims() == std::vector<std::size_t>{3});
  CHECK(back.payload == m.payload);

  std::string bytes = slurp(dir / "m.mat");
  bytes[0] = 0;
  std::ofstream(dir / "bad.mat", std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_norb_matrix(dir / "bad.mat"), FormatError);
  std::ofstream(dir / "short.mat", std::ios::binary) << slurp(dir / "m.mat").substr(0, 20);
  CHECK_THROWS_AS(read_norb_matrix(dir / "short.mat"), FormatError);
}

TEST_CASE("smallnorb split layout on a reduced-resolution fixture") {
  const fs::path dir = scratch("norb");
  write_smallnorb_fixture(dir, "training", 5, 8);
  const Dataset train = load_smallnorb_split(dir, "training");
  CHECK(train.size() == 24300);
  CHECK(train.image_shape() == Shape{8, 8, 2});
  const Dataset by_category = train.relabelled("category");
  CHECK(by_category.classes() == std::vector<int>{0, 1, 2, 3, 4});
  for (const auto& [c, idx] : by_category.indices_by_class()) CHECK(idx.size() == 4860);
  std::set<int> toys(train.attributes.at("instance").begin(), train.attributes.at("instance").end());
  CHECK(toys == std::set<int>{4, 6, 7, 8, 9});
  CHECK(train.classes().size() == 25);

  // Files round-trip through the matrix codec byte for byte.
  const auto files = smallnorb_files(dir, "training");
  for (const auto& p : {files.dat, files.cat, files.info}) {
    write_norb_matrix(dir / "copy.mat", read_norb_matrix(p));
    CHECK(slurp(dir / "copy.mat") == slurp(p));
  }
  CHECK(content_hash(load_smallnorb_split(dir, "training")) == content_hash(train));

  SmallNorbOptions half;
  half.downscale = 2;
  CHECK(load_smallnorb_split(dir, "training", half).image_shape() == Shape{4, 4, 2});
  SmallNorbOptions wrong;
  wrong.expected_examples = 100;
  CHECK_THROWS_AS(load_smallnorb_split(dir, "training", wrong), DataError);
  CHECK_THROWS_AS(load_smallnorb_split(dir, "testing"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic anodes") {
  SyntheticAnodeSpec spec;
  const Dataset one = generate_synthetic_anodes(spec, 20, 1);
  for (std::size_t i = 0; i < one.size(); ++i)
    for (std::size_t j = i + 1; j < one.size(); ++j) CHECK(!(one.images[i] == one.images[j]));

  const Dataset d = generate_synthetic_anodes(spec, 6, 4);
  CHECK(d.size() == 24);
  CHECK(d.synthetic);
  CHECK(content_hash(generate_synthetic_anodes(spec, 6, 4)) == content_hash(d));

  // Stub pixels are dark in every view of a class, and nowhere darker inside the block.
  for (std::size_t c = 0; c < 6; ++c) {
    const auto g = anode_geometry(spec, c);
    const auto mask = stub_mask(g, spec.height, spec.width);
    for (std::size_t v = 0; v < 4; ++v) {
      const Image& img = d.images[c * 4 + v];
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
          const bool in_block = y + 0.5 > g.top && y + 0.5 < g.bottom && x + 0.5 > g.left && x + 0.5 < g.right;
          if (mask[y * spec.width + x]) CHECK(img.at(y, x) < 0.25f);
          else if (in_block) CHECK(img.at(y, x) >= 0.3f);
        }
    }
  }

  SyntheticAnodeSpec bad = spec;
  bad.min_stubs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.max_stub_radius = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("k-fold split") {
  Dataset d;
  for (int c = 0; c < 40; ++c)
    for (int k = 0; k < 10; ++k) {
      d.images.emplace_back(1, 1, 1, static_cast<float>(c * 10 + k) / 400.0f);
      d.class_ids.push_back(c);
    }
  std::vector<int> seen(400, 0);
  for (std::size_t f = 0; f < 10; ++f) {
    const FoldSplit s = kfold_split(d, 10, f, 3);
    CHECK(s.validation.size() == 40);
    CHECK(s.train.size() == 360);
    CHECK(s.validation.classes().size() == 40);
    for (auto i : s.validation_indices) ++seen[i];
    CHECK(kfold_split(d, 10, f, 3).validation_indices == s.validation_indices);
  }
  for (int n : seen) CHECK(n == 1);
  CHECK(kfold_split(d, 10, 0, 4).validation_indices != kfold_split(d, 10, 0, 3).validation_indices);
  CHECK_THROWS_AS(kfold_split(d, 11, 0, 1), ConfigError);
  CHECK_THROWS_AS(kfold_split(d, 1, 0, 1), ConfigError);
  CHECK_THROWS_AS(kfold_split(d, 10, 10, 1), ConfigError);
}

TEST_CASE("dataset helpers") {
  Dataset d;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 2; ++k) {
      d.images.emplace_back(2, 2, 1, 0.1f * c);
      d.class_ids.push_back(c);
    }
  d.validate();
  CHECK(d.subset_classes({0, 2}).size() == 4);
  CHECK_THROWS_AS(d.subset({99}), IndexError);
  CHECK_THROWS_AS(d.relabelled("category"), DataError);
  Dataset ragged = d;
  ragged.images.push_back(Image(3, 3, 1, 0.0f));
  ragged.class_ids.push_back(0);
  CHECK_THROWS_AS(ragged.validate(), DataError);
  CHECK(d.merged_with(d).size() == 12);
}
