#include "oneshot/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "oneshot/errors.hpp"

namespace fs = std::filesystem;

namespace oneshot {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& origin) : b_(bytes), origin_(origin) {}

  unsigned number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(static_cast<unsigned char>(b_[pos_]))) fail(std::string("expected ") + what);
    unsigned long v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<unsigned long>(b_[pos_++] - '0');
      if (v > 1000000000UL) fail(std::string(what) + " too large");
    }
    return static_cast<unsigned>(v);
  }

  // Exactly one whitespace character separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) fail("missing whitespace after maxval");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(origin_ + ": " + msg); }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      const char c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 2;
};

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

PgmFile decode_pgm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(origin + ": not a binary PGM (P5)");
  HeaderReader hr(bytes, origin);
  const unsigned width = hr.number("width");
  const unsigned height = hr.number("height");
  const unsigned maxval = hr.number("maxval");
  if (width == 0 || height == 0) hr.fail("zero image extent");
  if (maxval == 0 || maxval > 65535) hr.fail("maxval must be in [1, 65535]");
  const std::size_t start = hr.raster_start();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() < start + n * bps) hr.fail("truncated raster");
  std::vector<float> px(n);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bps == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (v > maxval) hr.fail("sample exceeds maxval");
    px[i] = static_cast<float>(static_cast<double>(v) / maxval);
  }
  return {Image(height, width, 1, std::move(px)), maxval};
}

PgmFile read_pgm(const fs::path& path) { return decode_pgm(slurp(path), path.string()); }

std::string encode_pgm(const Image& img, unsigned maxval) {
  if (img.channels() != 1) throw ShapeError("PGM holds single-channel images, got " + std::to_string(img.channels()));
  if (maxval == 0 || maxval > 65535) throw ConfigError("maxval must be in [1, 65535]");
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n" +
                    std::to_string(maxval) + "\n";
  for (float p : img.pixels()) {
    const auto v = static_cast<unsigned>(std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * maxval));
    if (maxval > 255) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

void write_pgm(const fs::path& path, const Image& img, unsigned maxval) {
  const std::string bytes = encode_pgm(img, maxval);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace {

// "s12" -> 12, "7.pgm" -> 7; -1 if the name does not match.
long parse_numbered(const std::string& name, const std::string& prefix, const std::string& suffix) {
  if (name.size() <= prefix.size() + suffix.size()) return -1;
  if (name.compare(0, prefix.size(), prefix) != 0) return -1;
  if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return -1;
  const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
  if (digits.empty() || digits.size() > 9 ||
      !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    return -1;
  }
  return std::stol(digits);
}

}  // namespace

Dataset load_pgm_tree(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::map<long, std::map<long, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const long cls = parse_numbered(entry.path().filename().string(), "s", "");
    if (cls < 0) continue;
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const long idx = parse_numbered(f.path().filename().string(), "", ".pgm");
      if (idx >= 0 && f.is_regular_file()) files[cls][idx] = f.path();
    }
  }
  Dataset data;
  data.name = dir.filename().string();
  for (const auto& [cls, items] : files) {
    for (const auto& [idx, path] : items) {
      PgmFile pgm = read_pgm(path);
      if (!data.images.empty() && pgm.image.shape() != data.images.front().shape()) {
        throw DataError(path.string() + ": dimensions " + to_string(pgm.image.shape()) + " differ from " +
                        to_string(data.images.front().shape()));
      }
      data.images.push_back(pgm.image);
      data.class_ids.push_back(static_cast<int>(cls));
      data.sources.push_back(path.string());
    }
  }
  if (data.empty()) throw DataError("no s<class>/<index>.pgm files under " + dir.string());
  return data;
}

Dataset load_pgm_faces(const fs::path& dir) {
  Dataset data = load_pgm_tree(dir);
  const auto by_class = data.indices_by_class();
  if (by_class.size() != 40) {
    throw DataError(dir.string() + ": expected 40 subjects, found " + std::to_string(by_class.size()));
  }
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() != 10) {
      throw DataError(dir.string() + ": subject s" + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                      " images, expected 10");
    }
  }
  data.name = "att-faces";
  return data;
}

void export_pgm_tree(const Dataset& data, const fs::path& dir) {
  data.validate();
  std::map<int, std::size_t> counter;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int cls = data.class_ids[i];
    if (cls < 0) throw DataError("PGM trees need non-negative class ids");
    const fs::path sub = dir / ("s" + std::to_string(cls));
    fs::create_directories(sub);
    write_pgm(sub / (std::to_string(++counter[cls]) + ".pgm"), data.images[i]);
  }
}

}  // namespace oneshot
