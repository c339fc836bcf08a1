#include "oneshot/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "oneshot/errors.hpp"
#include "oneshot/random.hpp"

namespace oneshot {

std::string to_string(MergeMode mode) {
  switch (mode) {
    case MergeMode::stacked:
      return "stacked";
    case MergeMode::h_join:
      return "h-join";
    case MergeMode::v_join:
      return "v-join";
  }
  return "?";
}

MergeMode merge_mode_from_string(const std::string& name) {
  if (name == "stacked") return MergeMode::stacked;
  if (name == "h-join") return MergeMode::h_join;
  if (name == "v-join") return MergeMode::v_join;
  throw ConfigError("unknown merge mode '" + name + "' (expected stacked, h-join, v-join)");
}

Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) {
    throw ShapeError("grayscale conversion needs 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  const std::size_t n = img.height() * img.width();
  std::vector<float> out(n);
  auto p = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 0.299 * p[3 * i] + 0.587 * p[3 * i + 1] + 0.114 * p[3 * i + 2];
    out[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return Image(img.height(), img.width(), 1, std::move(out));
}

MergedImage merge(const Image& a, const Image& b, MergeMode mode) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot merge images of shape " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t h = a.height(), w = a.width(), c = a.channels();
  auto pa = a.pixels();
  auto pb = b.pixels();
  switch (mode) {
    case MergeMode::stacked: {
      std::vector<float> out(h * w * 2 * c);
      for (std::size_t i = 0; i < h * w; ++i) {
        std::copy_n(pa.data() + i * c, c, out.data() + i * 2 * c);
        std::copy_n(pb.data() + i * c, c, out.data() + i * 2 * c + c);
      }
      return {Image(h, w, 2 * c, std::move(out)), mode};
    }
    case MergeMode::h_join: {
      std::vector<float> out(h * 2 * w * c);
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(pa.data() + y * w * c, w * c, out.data() + y * 2 * w * c);
        std::copy_n(pb.data() + y * w * c, w * c, out.data() + y * 2 * w * c + w * c);
      }
      return {Image(h, 2 * w, c, std::move(out)), mode};
    }
    case MergeMode::v_join: {
      std::vector<float> out(pa.begin(), pa.end());
      out.insert(out.end(), pb.begin(), pb.end());
      return {Image(2 * h, w, c, std::move(out)), mode};
    }
  }
  throw ConfigError("unhandled merge mode");
}

Shape merged_input_shape(const Shape& image_shape, MergeMode mode) {
  if (image_shape.size() != 3) throw ShapeError("image shape must be [H, W, C]");
  const std::size_t h = image_shape[0], w = image_shape[1], c = image_shape[2];
  switch (mode) {
    case MergeMode::stacked:
      return {2 * c, h, w};
    case MergeMode::h_join:
      return {c, h, 2 * w};
    case MergeMode::v_join:
      return {c, 2 * h, w};
  }
  throw ConfigError("unhandled merge mode");
}

std::vector<PairSample> sample_pairs(const Dataset& data, std::size_t n_pairs, double balance, std::uint64_t seed) {
  if (!(balance >= 0.0 && balance <= 1.0)) throw ConfigError("pair balance must be in [0, 1]");
  data.validate();
  const auto by_class = data.indices_by_class();
  std::vector<const std::vector<std::size_t>*> multi;  // classes able to form same-pairs
  std::vector<const std::vector<std::size_t>*> all;
  for (const auto& [cls, idx] : by_class) {
    all.push_back(&idx);
    if (idx.size() >= 2) multi.push_back(&idx);
  }
  const auto n_same = static_cast<std::size_t>(std::llround(balance * static_cast<double>(n_pairs)));
  const std::size_t n_diff = n_pairs - n_same;
  if (n_same > 0 && multi.empty()) throw DataError("no class has two images; cannot form same-class pairs");
  if (n_diff > 0 && all.size() < 2) throw DataError("fewer than two classes; cannot form different-class pairs");

  Rng rng(seed);
  std::vector<PairSample> out;
  out.reserve(n_pairs);
  auto emit = [&](std::size_t ia, std::size_t ib, int label) {
    out.push_back({data.images[ia], data.images[ib], label, ia, ib});
  };
  for (std::size_t k = 0; k < n_same; ++k) {
    const auto& idx = *multi[rng.below(multi.size())];
    const std::size_t i = rng.below(idx.size());
    std::size_t j = rng.below(idx.size() - 1);
    if (j >= i) ++j;
    emit(idx[i], idx[j], 1);
  }
  for (std::size_t k = 0; k < n_diff; ++k) {
    const std::size_t ca = rng.below(all.size());
    std::size_t cb = rng.below(all.size() - 1);
    if (cb >= ca) ++cb;
    emit((*all[ca])[rng.below(all[ca]->size())], (*all[cb])[rng.below(all[cb]->size())], 0);
  }
  rng.shuffle(out.begin(), out.end());
  return out;
}

std::vector<PairSample> sample_query_pairs(const Dataset& queries, const Dataset& gallery, std::size_t n_pairs,
                                           double balance, std::uint64_t seed) {
  if (!(balance >= 0.0 && balance <= 1.0)) throw ConfigError("pair balance must be in [0, 1]");
  queries.validate();
  gallery.validate();
  const auto gallery_by_class = gallery.indices_by_class();
  std::vector<std::size_t> with_partner, with_other;  // query indices usable for same / different pairs
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto it = gallery_by_class.find(queries.class_ids[i]);
    if (it != gallery_by_class.end()) with_partner.push_back(i);
    if (gallery_by_class.size() > (it != gallery_by_class.end() ? 1u : 0u)) with_other.push_back(i);
  }
  const auto n_same = static_cast<std::size_t>(std::llround(balance * static_cast<double>(n_pairs)));
  const std::size_t n_diff = n_pairs - n_same;
  if (n_same > 0 && with_partner.empty()) throw DataError("no query class appears in the gallery");
  if (n_diff > 0 && with_other.empty()) throw DataError("gallery has no class different from the queries");

  std::vector<const std::vector<std::size_t>*> gallery_classes;
  for (const auto& [cls, idx] : gallery_by_class) gallery_classes.push_back(&idx);
  Rng rng(seed);
  std::vector<PairSample> out;
  out.reserve(n_pairs);
  for (std::size_t k = 0; k < n_same; ++k) {
    const std::size_t q = with_partner[rng.below(with_partner.size())];
    const auto& idx = gallery_by_class.at(queries.class_ids[q]);
    const std::size_t g = idx[rng.below(idx.size())];
    out.push_back({queries.images[q], gallery.images[g], 1, q, g});
  }
  for (std::size_t k = 0; k < n_diff; ++k) {
    const std::size_t q = with_other[rng.below(with_other.size())];
    std::size_t c;
    do {
      c = rng.below(gallery_classes.size());
    } while (gallery.class_ids[gallery_classes[c]->front()] == queries.class_ids[q]);
    const std::size_t g = (*gallery_classes[c])[rng.below(gallery_classes[c]->size())];
    out.push_back({queries.images[q], gallery.images[g], 0, q, g});
  }
  rng.shuffle(out.begin(), out.end());
  return out;
}

std::vector<PairSample> with_swapped(const std::vector<PairSample>& pairs) {
  std::vector<PairSample> out(pairs);
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) out.push_back({p.b, p.a, p.label, p.index_b, p.index_a});
  return out;
}

ClassSplit holdout_split(const Dataset& data, std::size_t held_out_classes, std::uint64_t seed) {
  std::vector<int> classes = data.classes();
  if (held_out_classes >= classes.size()) {
    throw ConfigError("cannot hold out " + std::to_string(held_out_classes) + " of " + std::to_string(classes.size()) +
                      " classes");
  }
  Rng rng(seed);
  rng.shuffle(classes.begin(), classes.end());
  ClassSplit split;
  split.test_classes.assign(classes.end() - static_cast<long>(held_out_classes), classes.end());
  split.train_classes.assign(classes.begin(), classes.end() - static_cast<long>(held_out_classes));
  std::sort(split.train_classes.begin(), split.train_classes.end());
  std::sort(split.test_classes.begin(), split.test_classes.end());
  return split;
}

void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairManifestEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& e : entries) {
    if (e.path_a.find_first_of("\t\n") != std::string::npos || e.path_b.find_first_of("\t\n") != std::string::npos) {
      throw FormatError("manifest paths may not contain tabs or newlines");
    }
    os << e.path_a << '\t' << e.path_b << '\t' << e.label << '\n';
  }
}

std::vector<PairManifestEntry> read_pair_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::vector<PairManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    const std::string label = line.substr(t2 + 1);
    if (label != "0" && label != "1") {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    }
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), label == "1" ? 1 : 0});
  }
  return out;
}

std::vector<PairManifestEntry> manifest_entries(const Dataset& data, const std::vector<PairSample>& pairs) {
  if (data.sources.size() != data.size()) throw DataError("dataset has no per-image sources");
  std::vector<PairManifestEntry> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({data.sources.at(p.index_a), data.sources.at(p.index_b), p.label});
  return out;
}

}  // namespace oneshot
