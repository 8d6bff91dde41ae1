#include "finr/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "finr/errors.hpp"

namespace finr {

namespace {

const unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

std::uint32_t get_u32be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
  put_u32be(out, std::uint32_t(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, uInt(out.size() - start));
  put_u32be(out, std::uint32_t(crc));
}

unsigned char quantize(real v) {
  const real c = std::clamp(v, real(0), real(1));
  return static_cast<unsigned char>(std::lround(c * 255));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const DenseTensor& img) {
  std::size_t h = 0, w = 0, c = 0;
  if (img.order() == 2) {
    h = img.extent(0);
    w = img.extent(1);
    c = 1;
  } else if (img.order() == 3) {
    h = img.extent(0);
    w = img.extent(1);
    c = img.extent(2);
  } else {
    throw ShapeError("png writer expects (H,W), (H,W,1) or (H,W,3)");
  }
  if (c != 1 && c != 3) throw ShapeError("png writer supports 1 or 3 channels");

  // Raw scanlines, each prefixed with filter type 0.
  std::vector<unsigned char> raw((w * c + 1) * h);
  for (std::size_t i = 0; i < h; ++i) {
    unsigned char* row = raw.data() + i * (w * c + 1);
    row[0] = 0;
    for (std::size_t j = 0; j < w * c; ++j) row[1 + j] = quantize(img[i * w * c + j]);
  }
  uLongf zlen = compressBound(uLong(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw IoError("png deflate failed");
  z.resize(zlen);

  std::vector<unsigned char> out(kSig, kSig + 8);
  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, std::uint32_t(w));
  put_u32be(ihdr, std::uint32_t(h));
  ihdr.push_back(8);                 // bit depth
  ihdr.push_back(c == 1 ? 0 : 2);    // color type
  ihdr.push_back(0);                 // compression
  ihdr.push_back(0);                 // filter method
  ihdr.push_back(0);                 // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

DenseTensor read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open png '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw IoError("'" + path + "' is not a png");

  std::size_t at = 8;
  std::size_t w = 0, h = 0, channels = 0;
  bool saw_ihdr = false, saw_end = false;
  std::vector<unsigned char> idat;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32be(bytes.data() + at);
    if (at + 12 + len > bytes.size()) throw IoError("png chunk overruns the file");
    const char* type = reinterpret_cast<const char*>(bytes.data() + at + 4);
    const unsigned char* data = bytes.data() + at + 8;
    const uLong crc_want = get_u32be(bytes.data() + at + 8 + len);
    const uLong crc_have = crc32(0L, bytes.data() + at + 4, uInt(4 + len));
    if (crc_want != crc_have) throw IoError("png chunk crc mismatch");
    const std::string t(type, 4);
    if (t == "IHDR") {
      if (len != 13) throw IoError("bad IHDR length");
      w = get_u32be(data);
      h = get_u32be(data + 4);
      const int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) throw IoError("only 8-bit pngs are supported");
      if (interlace != 0) throw IoError("interlaced pngs are not supported");
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;  // gray + alpha
        case 6: channels = 4; break;
        default: throw IoError("palette pngs are not supported");
      }
      saw_ihdr = true;
    } else if (t == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (t == "IEND") {
      saw_end = true;
      break;
    }  // ancillary chunks are skipped
    at += 12 + len;
  }
  if (!saw_ihdr || !saw_end || idat.empty()) throw IoError("png is missing required chunks");
  if (w == 0 || h == 0) throw IoError("png has empty dimensions");

  const std::size_t stride = w * channels;
  std::vector<unsigned char> raw((stride + 1) * h);
  uLongf rlen = uLongf(raw.size());
  if (uncompress(raw.data(), &rlen, idat.data(), uLong(idat.size())) != Z_OK ||
      rlen != raw.size())
    throw IoError("png inflate failed or size mismatch");

  // Defilter in place into `img` bytes.
  std::vector<unsigned char> pix(stride * h);
  const std::size_t bpp = channels;  // bytes per pixel at depth 8
  for (std::size_t i = 0; i < h; ++i) {
    const unsigned char filter = raw[i * (stride + 1)];
    const unsigned char* src = raw.data() + i * (stride + 1) + 1;
    unsigned char* dst = pix.data() + i * stride;
    const unsigned char* up = i ? pix.data() + (i - 1) * stride : nullptr;
    for (std::size_t j = 0; j < stride; ++j) {
      const int left = j >= bpp ? dst[j - bpp] : 0;
      const int above = up ? up[j] : 0;
      const int corner = (up && j >= bpp) ? up[j - bpp] : 0;
      int v = src[j];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += above; break;
        case 3: v += (left + above) / 2; break;
        case 4: v += paeth(left, above, corner); break;
        default: throw IoError("png uses an unknown scanline filter");
      }
      dst[j] = static_cast<unsigned char>(v & 0xff);
    }
  }

  const std::size_t out_c = channels >= 3 ? 3 : 1;
  DenseTensor img({h, w, out_c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t q = 0; q < out_c; ++q)
        img[(i * w + j) * out_c + q] = real(pix[i * stride + j * channels + q]) / 255;
  return img;
}

DenseTensor error_map(const DenseTensor& pred, const DenseTensor& truth, real gain) {
  if (pred.extents() != truth.extents()) throw ShapeError("error_map: shape mismatch");
  DenseTensor out(pred.extents());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(gain * std::abs(pred[i] - truth[i]), real(0), real(1));
  return out;
}

}  // namespace finr
