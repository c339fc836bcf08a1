#include "oneshot/smallnorb.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "oneshot/errors.hpp"
#include "oneshot/random.hpp"

namespace fs = std::filesystem;

namespace oneshot {

static_assert(std::endian::native == std::endian::little, "smallNORB codec assumes a little-endian host");

std::vector<std::size_t> NorbHeader::dims() const {
  std::vector<std::size_t> out;
  for (std::int32_t i = 0; i < ndim; ++i) out.push_back(static_cast<std::size_t>(stored_dims[static_cast<std::size_t>(i)]));
  return out;
}

std::size_t NorbHeader::element_size() const {
  switch (magic) {
    case kNorbByteMatrix:
      return 1;
    case kNorbIntMatrix:
      return 4;
    default:
      throw FormatError("unsupported matrix type");
  }
}

std::size_t NorbHeader::element_count() const {
  std::size_t n = 1;
  for (auto d : dims()) n *= d;
  return n;
}

namespace {

std::int32_t read_i32(std::istream& is, const std::string& origin) {
  std::int32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(origin + ": truncated header");
  return v;
}

void write_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void expect_no_trailing(std::istream& is, const std::string& origin) {
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(origin + ": trailing bytes after payload");
}

}  // namespace

NorbHeader read_norb_header(std::istream& is, const std::string& origin) {
  NorbHeader h;
  h.magic = read_i32(is, origin);
  if (h.magic != kNorbByteMatrix && h.magic != kNorbIntMatrix) {
    throw FormatError(origin + ": bad magic 0x" + [&] {
      char b[9];
      std::snprintf(b, sizeof b, "%08X", static_cast<unsigned>(h.magic));
      return std::string(b);
    }());
  }
  h.ndim = read_i32(is, origin);
  if (h.ndim < 1 || h.ndim > 8) throw FormatError(origin + ": unsupported ndim " + std::to_string(h.ndim));
  const std::int32_t stored = std::max<std::int32_t>(h.ndim, 3);
  for (std::int32_t i = 0; i < stored; ++i) {
    const std::int32_t d = read_i32(is, origin);
    if (d < 0 || (i < h.ndim && d == 0)) throw FormatError(origin + ": invalid extent " + std::to_string(d));
    h.stored_dims.push_back(d);
  }
  return h;
}

NorbMatrix read_norb_matrix(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  NorbMatrix m;
  m.header = read_norb_header(is, path.string());
  const std::size_t bytes = m.header.element_count() * m.header.element_size();
  m.payload.resize(bytes);
  if (!is.read(reinterpret_cast<char*>(m.payload.data()), static_cast<std::streamsize>(bytes))) {
    throw FormatError(path.string() + ": truncated payload");
  }
  expect_no_trailing(is, path.string());
  return m;
}

void write_norb_matrix(const fs::path& path, const NorbMatrix& m) {
  if (m.payload.size() != m.header.element_count() * m.header.element_size()) {
    throw ShapeError("payload size does not match header extents");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  write_i32(os, m.header.magic);
  write_i32(os, m.header.ndim);
  for (auto d : m.header.stored_dims) write_i32(os, d);
  os.write(reinterpret_cast<const char*>(m.payload.data()), static_cast<std::streamsize>(m.payload.size()));
  if (!os) throw Error("write failed: " + path.string());
}

std::string to_string(NorbIdentity id) { return id == NorbIdentity::instance ? "instance" : "category"; }

NorbIdentity norb_identity_from_string(const std::string& name) {
  if (name == "instance") return NorbIdentity::instance;
  if (name == "category") return NorbIdentity::category;
  throw ConfigError("unknown smallNORB identity '" + name + "' (expected instance or category)");
}

SmallNorbFiles smallnorb_files(const fs::path& dir, const std::string& split) {
  if (split != "training" && split != "testing") throw ConfigError("smallNORB split must be training or testing");
  const std::string stem = "smallnorb-5x46789x9x18x6x2x96x96-" + split + "-";
  return {dir / (stem + "dat.mat"), dir / (stem + "cat.mat"), dir / (stem + "info.mat")};
}

namespace {

std::vector<std::int32_t> read_int_matrix(const fs::path& path, std::size_t expected_rank) {
  const NorbMatrix m = read_norb_matrix(path);
  if (m.header.magic != kNorbIntMatrix) throw FormatError(path.string() + ": expected an integer matrix");
  if (static_cast<std::size_t>(m.header.ndim) != expected_rank) {
    throw FormatError(path.string() + ": expected rank " + std::to_string(expected_rank));
  }
  std::vector<std::int32_t> out(m.header.element_count());
  std::memcpy(out.data(), m.payload.data(), m.payload.size());
  return out;
}

}  // namespace

Dataset load_smallnorb_split(const fs::path& dir, const std::string& split, const SmallNorbOptions& options) {
  const SmallNorbFiles files = smallnorb_files(dir, split);
  if (options.downscale == 0) throw ConfigError("downscale factor must be >= 1");
  for (const auto& p : {files.dat, files.cat, files.info}) {
    if (!fs::exists(p)) throw DataError("missing smallNORB file " + p.string());
  }
  const auto categories = read_int_matrix(files.cat, 1);
  const auto info = read_int_matrix(files.info, 2);

  std::ifstream is(files.dat, std::ios::binary);
  if (!is) throw Error("cannot read " + files.dat.string());
  const NorbHeader h = read_norb_header(is, files.dat.string());
  if (h.magic != kNorbByteMatrix || h.ndim != 4 || h.stored_dims[1] != 2) {
    throw FormatError(files.dat.string() + ": expected a byte matrix of shape [N, 2, H, W]");
  }
  const auto dims = h.dims();
  const std::size_t n = dims[0], height = dims[2], width = dims[3];
  if (categories.size() != n || info.size() != 4 * n) {
    throw DataError(split + ": image count " + std::to_string(n) + " disagrees with label files");
  }
  if (options.expected_examples != 0 && n != options.expected_examples) {
    throw DataError(split + ": expected " + std::to_string(options.expected_examples) + " examples, found " +
                    std::to_string(n));
  }
  std::set<int> distinct(categories.begin(), categories.end());
  if (options.expected_categories != 0 && distinct.size() != options.expected_categories) {
    throw DataError(split + ": expected " + std::to_string(options.expected_categories) + " categories, found " +
                    std::to_string(distinct.size()));
  }

  Dataset data;
  data.name = "smallnorb-" + split;
  data.images.reserve(n);
  data.class_ids.reserve(n);
  auto& cat_attr = data.attributes["category"];
  auto& inst_attr = data.attributes["instance"];
  auto& elev_attr = data.attributes["elevation"];
  auto& azim_attr = data.attributes["azimuth"];
  auto& light_attr = data.attributes["lighting"];
  const std::size_t plane = height * width;
  std::vector<unsigned char> raw(2 * plane);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError(files.dat.string() + ": truncated at example " + std::to_string(i));
    }
    std::vector<float> px(2 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      px[2 * p] = static_cast<float>(raw[p] / 255.0);
      px[2 * p + 1] = static_cast<float>(raw[plane + p] / 255.0);
    }
    Image img(height, width, 2, std::move(px));
    data.images.push_back(options.downscale > 1 ? downscale(img, options.downscale) : img);
    const int category = categories[i];
    const int instance = info[4 * i];
    data.class_ids.push_back(options.identity == NorbIdentity::instance ? category * 10 + instance : category);
    cat_attr.push_back(category);
    inst_attr.push_back(instance);
    elev_attr.push_back(info[4 * i + 1]);
    azim_attr.push_back(info[4 * i + 2]);
    light_attr.push_back(info[4 * i + 3]);
  }
  expect_no_trailing(is, files.dat.string());
  return data;
}

SmallNorbData load_smallnorb(const fs::path& dir, const SmallNorbOptions& options) {
  return {load_smallnorb_split(dir, "training", options), load_smallnorb_split(dir, "testing", options)};
}

void write_smallnorb_fixture(const fs::path& dir, const std::string& split, std::uint64_t seed, std::size_t image_size) {
  if (image_size < 4) throw ConfigError("fixture images must be at least 4x4");
  const SmallNorbFiles files = smallnorb_files(dir, split);
  fs::create_directories(dir);
  const std::vector<int> instances =
      split == "training" ? std::vector<int>{4, 6, 7, 8, 9} : std::vector<int>{0, 1, 2, 3, 5};
  const std::size_t n = 5 * 5 * 9 * 18 * 6;

  NorbMatrix cat{{kNorbIntMatrix, {static_cast<std::int32_t>(n), 1, 1}, 1}, {}};
  NorbMatrix info{{kNorbIntMatrix, {static_cast<std::int32_t>(n), 4, 1}, 2}, {}};
  std::vector<std::int32_t> cat_vals, info_vals;
  for (int c = 0; c < 5; ++c)
    for (int inst : instances)
      for (int e = 0; e < 9; ++e)
        for (int a = 0; a < 18; ++a)
          for (int l = 0; l < 6; ++l) {
            cat_vals.push_back(c);
            info_vals.insert(info_vals.end(), {inst, e, 2 * a, l});
          }
  auto as_bytes = [](const std::vector<std::int32_t>& v) {
    std::vector<unsigned char> b(v.size() * 4);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
  };
  cat.payload = as_bytes(cat_vals);
  info.payload = as_bytes(info_vals);
  write_norb_matrix(files.cat, cat);
  write_norb_matrix(files.info, info);

  // The image file is streamed; a full split is ~450 MB.
  std::ofstream os(files.dat, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + files.dat.string());
  const auto s = static_cast<std::int32_t>(image_size);
  write_i32(os, kNorbByteMatrix);
  write_i32(os, 4);
  for (std::int32_t d : {static_cast<std::int32_t>(n), 2, s, s}) write_i32(os, d);
  const double half = 0.5 * static_cast<double>(image_size);
  std::vector<unsigned char> buf(2 * image_size * image_size);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = cat_vals[i], inst = info_vals[4 * i], e = info_vals[4 * i + 1], a = info_vals[4 * i + 2],
              l = info_vals[4 * i + 3];
    Rng rng(derive_seed(seed, "image", i));
    // An ellipse whose aspect encodes the category and whose size encodes the
    // instance, turned by the azimuth and lit according to the lighting index.
    const double theta = a * 10.0 * 3.14159265358979323846 / 180.0;
    const double ry = half * (0.35 + 0.05 * c), rx = half * (0.25 + 0.04 * inst);
    const double light = 0.45 + 0.08 * l, tilt = 0.02 * e;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t cam = 0; cam < 2; ++cam) {
      const double shift = cam == 0 ? -0.04 * half : 0.04 * half;
      for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - half;
          const double dx = static_cast<double>(x) + 0.5 - half - shift;
          const double u = ct * dx + st * dy;
          const double v = -st * dx + ct * dy;
          const double r = (u * u) / (rx * rx) + (v * v) / (ry * ry);
          double value = r <= 1.0 ? light + tilt * v / ry : 0.1;
          value += 0.02 * (rng.uniform() - 0.5);
          buf[cam * image_size * image_size + y * image_size + x] =
              static_cast<unsigned char>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
        }
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw Error("write failed: " + files.dat.string());
}

}  // namespace oneshot
