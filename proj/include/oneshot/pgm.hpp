#pragma once

#include <filesystem>
#include <string>

#include "oneshot/dataset.hpp"
#include "oneshot/image.hpp"

namespace oneshot {

struct PgmFile {
  Image image;  // single channel, pixel / maxval
  unsigned maxval = 255;
};

/// Binary PGM (P5). Header comments are skipped; maxval up to 65535
/// (two bytes per sample, big-endian, above 255). FormatError when malformed.
PgmFile read_pgm(const std::filesystem::path& path);
PgmFile decode_pgm(const std::string& bytes, const std::string& origin = "<memory>");

/// Writes P5 with pixels quantized as round(p * maxval). ShapeError unless single-channel.
void write_pgm(const std::filesystem::path& path, const Image& img, unsigned maxval = 255);
std::string encode_pgm(const Image& img, unsigned maxval = 255);

/// Loads a `s<class>/<index>.pgm` tree. Classes take the number in the
/// directory name; images are ordered by class, then by index.
/// DataError on ragged dimensions or an empty tree.
Dataset load_pgm_tree(const std::filesystem::path& dir);

/// load_pgm_tree plus the face-database contract: 40 classes of 10 images each.
Dataset load_pgm_faces(const std::filesystem::path& dir);

/// Writes `s<class>/<k>.pgm` with k counting from 1 within each class.
/// Single-channel images only.
void export_pgm_tree(const Dataset& data, const std::filesystem::path& dir);

}  // namespace oneshot
