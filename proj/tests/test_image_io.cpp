#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "finr/image_io.hpp"
#include "finr/rng.hpp"
#include "helpers.hpp"

using namespace finr;

namespace {

std::string temp_png(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

// Minimal independent PNG builder so the reader's defiltering can be tested
// against scanlines filtered by hand, one filter type per row.
std::vector<unsigned char> build_png(std::size_t w, std::size_t h,
                                     const std::vector<unsigned char>& pix,
                                     const std::vector<unsigned char>& filters) {
  auto u32be = [](std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
  };
  auto chunk = [&](std::vector<unsigned char>& out, const char* type,
                   const std::vector<unsigned char>& data) {
    u32be(out, std::uint32_t(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, uInt(out.size() - start));
    u32be(out, std::uint32_t(crc));
  };
  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
  };

  // Filter each grayscale row with the requested type.
  std::vector<unsigned char> raw((w + 1) * h);
  for (std::size_t i = 0; i < h; ++i) {
    const unsigned char ft = filters[i];
    raw[i * (w + 1)] = ft;
    for (std::size_t j = 0; j < w; ++j) {
      const int cur = pix[i * w + j];
      const int left = j ? pix[i * w + j - 1] : 0;
      const int above = i ? pix[(i - 1) * w + j] : 0;
      const int corner = (i && j) ? pix[(i - 1) * w + j - 1] : 0;
      int v = cur;
      switch (ft) {
        case 0: break;
        case 1: v = cur - left; break;
        case 2: v = cur - above; break;
        case 3: v = cur - (left + above) / 2; break;
        case 4: v = cur - paeth(left, above, corner); break;
      }
      raw[i * (w + 1) + 1 + j] = static_cast<unsigned char>(v & 0xff);
    }
  }
  uLongf zlen = compressBound(uLong(raw.size()));
  std::vector<unsigned char> z(zlen);
  REQUIRE(compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) == Z_OK);
  z.resize(zlen);

  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> out(sig, sig + 8);
  std::vector<unsigned char> ihdr;
  u32be(ihdr, std::uint32_t(w));
  u32be(ihdr, std::uint32_t(h));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth 8, gray, deflate, filter 0, no interlace
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});
  return out;
}

}  // namespace

TEST_CASE("png roundtrip preserves gray and rgb up to quantization") {
  Rng rng(55);
  for (std::size_t c : {std::size_t{1}, std::size_t{3}}) {
    DenseTensor img({9, 13, c});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(0.0, 1.0);
    const std::string path = temp_png("finr_io_" + std::to_string(c) + ".png");
    write_png(path, img);
    const DenseTensor back = read_png(path);
    CHECK(back.extents() == img.extents());
    real worst = 0;
    for (std::size_t i = 0; i < img.size(); ++i)
      worst = std::max(worst, std::abs(back[i] - img[i]));
    CHECK(worst <= 0.5 / 255 + 1e-12);
    std::remove(path.c_str());
  }

  // Out-of-range values clamp rather than wrap.
  DenseTensor hot({2, 2});
  hot[0] = -0.5;
  hot[1] = 1.5;
  hot[2] = 0;
  hot[3] = 1;
  const std::string path = temp_png("finr_io_clamp.png");
  write_png(path, hot);
  const DenseTensor back = read_png(path);
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);
  std::remove(path.c_str());
}

TEST_CASE("png reader defilters all five scanline filters") {
  // 5 rows x 7 cols grayscale with a deliberately non-smooth pattern; row i
  // uses filter type i.
  const std::size_t w = 7, h = 5;
  std::vector<unsigned char> pix(w * h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      pix[i * w + j] = static_cast<unsigned char>((i * 37 + j * 91 + (i * j) % 13) & 0xff);
  const std::vector<unsigned char> filters = {0, 1, 2, 3, 4};
  const std::vector<unsigned char> file = build_png(w, h, pix, filters);

  const std::string path = temp_png("finr_io_filters.png");
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
  }
  const DenseTensor img = read_png(path);
  CHECK(img.extents() == std::vector<std::size_t>{h, w, 1});
  for (std::size_t i = 0; i < pix.size(); ++i)
    CHECK(img[i] == doctest::Approx(real(pix[i]) / 255).epsilon(1e-12));
  std::remove(path.c_str());
}

TEST_CASE("png reader rejects garbage and truncation") {
  const std::string path = temp_png("finr_io_bad.png");
  {
    std::ofstream f(path, std::ios::binary);
    f << "definitely not a png";
  }
  CHECK_THROWS_AS((void)read_png(path), IoError);

  DenseTensor img({4, 4});
  write_png(path, img);
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()) / 2);
  }
  CHECK_THROWS_AS((void)read_png(path), IoError);
  std::remove(path.c_str());

  CHECK_THROWS_AS((void)read_png(temp_png("finr_io_nonexistent.png")), IoError);
}

TEST_CASE("error map amplifies and clamps") {
  DenseTensor a = DenseTensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5});
  DenseTensor b = DenseTensor::from_data({2, 2}, {0.5, 0.51, 0.3, 1.0});
  const DenseTensor m = error_map(a, b, 8);
  CHECK(m[0] == 0.0);
  CHECK(m[1] == doctest::Approx(0.08).epsilon(1e-12));
  CHECK(m[2] == doctest::Approx(1.0));  // 8 * 0.2 = 1.6 clamps
  CHECK(m[3] == 1.0);
}
