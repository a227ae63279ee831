/* Copyright 2026 The CSIP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "csip/raster.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "csip/error.hpp"

namespace csip {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr OpenFile(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) Fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return f;
}

class ByteWriter {
 public:
  void U16(std::uint16_t v) { for (int i = 0; i < 2; ++i) bytes.push_back((v >> (8 * i)) & 0xff); }
  void U32(std::uint32_t v) { for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xff); }
  void Entry(std::uint16_t tag, std::uint16_t type, std::uint32_t count, std::uint32_t value) {
    U16(tag);
    U16(type);
    U32(count);
    if (type == 3 && count == 1) {
      U16(static_cast<std::uint16_t>(value));
      U16(0);
    } else {
      U32(value);
    }
  }
  std::vector<std::uint8_t> bytes;
};

constexpr std::uint16_t kShort = 3;
constexpr std::uint16_t kLong = 4;

void WriteTiff(const std::filesystem::path& path, int height, int width, int channels,
               int bits, int sample_format, const void* pixels) {
  const std::uint32_t pixel_bytes =
      static_cast<std::uint32_t>(height) * width * channels * (bits / 8);
  // Layout: header, pixel data, optional BitsPerSample array, IFD.
  const std::uint32_t data_offset = 8;
  std::uint32_t bps_offset = data_offset + pixel_bytes;
  std::uint32_t ifd_offset = bps_offset + (channels > 1 ? 2 * channels : 0);
  if (ifd_offset % 2) ++ifd_offset;

  ByteWriter w;
  w.bytes = {'I', 'I', 42, 0};
  w.U32(ifd_offset);
  const auto* p = static_cast<const std::uint8_t*>(pixels);
  w.bytes.insert(w.bytes.end(), p, p + pixel_bytes);
  if (channels > 1) {
    for (int c = 0; c < channels; ++c) w.U16(static_cast<std::uint16_t>(bits));
  }
  while (w.bytes.size() < ifd_offset) w.bytes.push_back(0);

  const std::uint16_t entries = channels > 1 ? 11 : 10;
  w.U16(entries);
  w.Entry(256, kLong, 1, static_cast<std::uint32_t>(width));
  w.Entry(257, kLong, 1, static_cast<std::uint32_t>(height));
  if (channels > 1) {
    w.Entry(258, kShort, static_cast<std::uint32_t>(channels), bps_offset);
  } else {
    w.Entry(258, kShort, 1, static_cast<std::uint32_t>(bits));
  }
  w.Entry(259, kShort, 1, 1);                       // no compression
  w.Entry(262, kShort, 1, channels == 3 ? 2 : 1);   // RGB or BlackIsZero
  w.Entry(273, kLong, 1, data_offset);              // StripOffsets
  w.Entry(277, kShort, 1, static_cast<std::uint32_t>(channels));
  w.Entry(278, kLong, 1, static_cast<std::uint32_t>(height));  // RowsPerStrip
  w.Entry(279, kLong, 1, pixel_bytes);              // StripByteCounts
  if (channels > 1) w.Entry(284, kShort, 1, 1);     // PlanarConfiguration
  w.Entry(339, kShort, 1, static_cast<std::uint32_t>(sample_format));
  w.U32(0);

  FilePtr f = OpenFile(path, "wb");
  if (std::fwrite(w.bytes.data(), 1, w.bytes.size(), f.get()) != w.bytes.size()) {
    Fail(ErrorKind::kIo, "short write to '" + path.string() + "'");
  }
}

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, const std::filesystem::path& path)
      : bytes_(std::move(bytes)), path_(path) {
    if (bytes_.size() < 8) Fail(ErrorKind::kIo, "'" + path_.string() + "' is not a TIFF");
    if (bytes_[0] == 'I' && bytes_[1] == 'I') {
      big_ = false;
    } else if (bytes_[0] == 'M' && bytes_[1] == 'M') {
      big_ = true;
    } else {
      Fail(ErrorKind::kIo, "'" + path_.string() + "' is not a TIFF");
    }
    if (U16(2) != 42) Fail(ErrorKind::kIo, "'" + path_.string() + "' is not a classic TIFF");
  }

  void Need(std::size_t off, std::size_t n) const {
    if (off + n > bytes_.size()) {
      Fail(ErrorKind::kIo, "'" + path_.string() + "' is truncated");
    }
  }
  std::uint16_t U16(std::size_t off) const {
    Need(off, 2);
    return big_ ? static_cast<std::uint16_t>(bytes_[off] << 8 | bytes_[off + 1])
                : static_cast<std::uint16_t>(bytes_[off + 1] << 8 | bytes_[off]);
  }
  std::uint32_t U32(std::size_t off) const {
    Need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t b = bytes_[off + static_cast<std::size_t>(i)];
      v |= big_ ? b << (8 * (3 - i)) : b << (8 * i);
    }
    return v;
  }
  // First value of an IFD entry, or the i-th element of its array.
  std::uint32_t Value(std::size_t entry, std::uint32_t i = 0) const {
    const std::uint16_t type = U16(entry + 2);
    const std::uint32_t count = U32(entry + 4);
    const std::size_t size = type == kShort ? 2 : 4;
    std::size_t off = entry + 8;
    if (size * count > 4) off = U32(entry + 8);
    off += i * size;
    return type == kShort ? U16(off) : U32(off);
  }
  std::uint32_t Count(std::size_t entry) const { return U32(entry + 4); }
  bool big_endian() const { return big_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::filesystem::path path_;
  bool big_ = false;
};

}  // namespace

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void WritePng(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    Fail(ErrorKind::kIo, "PNG writer supports 1 or 3 channels");
  }
  FilePtr f = OpenFile(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    Fail(ErrorKind::kIo, "failed writing '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.data.data() +
                                             static_cast<std::size_t>(y) * image.width *
                                                 image.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 ReadPng(const std::filesystem::path& path) {
  FilePtr f = OpenFile(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    Fail(ErrorKind::kIo, "'" + path.string() + "' is not a PNG");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  Image8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    Fail(ErrorKind::kIo, "failed reading '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  img = Image8(height, width, channels);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, img.data.data() + static_cast<std::size_t>(y) * width * channels,
                 nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void WriteTiffFloat(const std::filesystem::path& path, const ImageF& image) {
  static_assert(sizeof(float) == 4);
  WriteTiff(path, image.height, image.width, image.channels, 32, 3, image.data.data());
}

void WriteTiff8(const std::filesystem::path& path, const Image8& image) {
  WriteTiff(path, image.height, image.width, image.channels, 8, 1, image.data.data());
}

ImageF ReadTiff(const std::filesystem::path& path, int* bits_per_sample) {
  ByteReader r(ReadFileBytes(path), path);
  const std::uint32_t ifd = r.U32(4);
  const int entries = r.U16(ifd);
  std::uint32_t width = 0, height = 0, bits = 8, compression = 1, samples = 1;
  std::uint32_t planar = 1, sample_format = 1, rows_per_strip = 0;
  std::vector<std::uint32_t> offsets, counts;
  for (int e = 0; e < entries; ++e) {
    const std::size_t entry = ifd + 2 + static_cast<std::size_t>(e) * 12;
    const std::uint16_t tag = r.U16(entry);
    switch (tag) {
      case 256: width = r.Value(entry); break;
      case 257: height = r.Value(entry); break;
      case 258: bits = r.Value(entry); break;
      case 259: compression = r.Value(entry); break;
      case 277: samples = r.Value(entry); break;
      case 278: rows_per_strip = r.Value(entry); break;
      case 284: planar = r.Value(entry); break;
      case 339: sample_format = r.Value(entry); break;
      case 273:
        for (std::uint32_t i = 0; i < r.Count(entry); ++i) offsets.push_back(r.Value(entry, i));
        break;
      case 279:
        for (std::uint32_t i = 0; i < r.Count(entry); ++i) counts.push_back(r.Value(entry, i));
        break;
      default: break;
    }
  }
  const std::string where = "'" + path.string() + "'";
  if (compression != 1) Fail(ErrorKind::kIo, where + ": compressed TIFF not supported");
  if (planar != 1 && samples > 1) Fail(ErrorKind::kIo, where + ": planar TIFF not supported");
  const bool is_float = bits == 32 && sample_format == 3;
  const bool is_byte = bits == 8 && sample_format == 1;
  if (!is_float && !is_byte) {
    Fail(ErrorKind::kIo, where + ": unsupported sample type (" + std::to_string(bits) + " bit)");
  }
  if (width == 0 || height == 0 || offsets.empty() || offsets.size() != counts.size()) {
    Fail(ErrorKind::kIo, where + ": malformed TIFF header");
  }
  (void)rows_per_strip;
  ImageF img(static_cast<int>(height), static_cast<int>(width), static_cast<int>(samples));
  const std::size_t bytes_per = bits / 8;
  const std::size_t total = img.data.size() * bytes_per;
  std::vector<std::uint8_t> raw;
  raw.reserve(total);
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    r.Need(offsets[s], counts[s]);
    raw.insert(raw.end(), r.bytes().begin() + offsets[s],
               r.bytes().begin() + offsets[s] + counts[s]);
  }
  if (raw.size() < total) Fail(ErrorKind::kIo, where + " is truncated");
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if (is_byte) {
      img.data[i] = raw[i];
    } else {
      std::uint8_t b[4];
      std::memcpy(b, raw.data() + 4 * i, 4);
      if (r.big_endian()) {
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
      std::memcpy(&img.data[i], b, 4);
    }
  }
  if (bits_per_sample) *bits_per_sample = static_cast<int>(bits);
  return img;
}

Image8 ReadImage8(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return ReadPng(path);
  if (ext == ".tif" || ext == ".tiff") {
    int bits = 0;
    ImageF f = ReadTiff(path, &bits);
    if (bits != 8) Fail(ErrorKind::kIo, "'" + path.string() + "' is not an 8-bit raster");
    Image8 out(f.height, f.width, f.channels);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      out.data[i] = static_cast<std::uint8_t>(f.data[i]);
    }
    return out;
  }
  Fail(ErrorKind::kIo, "unsupported raster extension '" + ext + "'");
}

std::string Sha256Hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string Sha256File(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = ReadFileBytes(path);
  return Sha256Hex(bytes.data(), bytes.size());
}

}  // namespace csip
