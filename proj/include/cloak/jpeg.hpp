#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cloak/errors.hpp"
#include "cloak/tensor.hpp"

// Baseline JPEG as a purification: YCbCr conversion, 4:2:0 subsampling,
// 8x8 DCT, quantization with the standard tables scaled by quality, then
// the inverse path. Entropy coding is lossless and pixel-irrelevant, so the
// round trip stops at quantize/dequantize.

namespace cloak {
namespace jpegdet {

// Annex-K luminance / chrominance quantization tables.
constexpr std::array<int, 64> kLumaQ = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaQ = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

inline std::array<int, 64> scaled_table(const std::array<int, 64>& base, int quality) {
  const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  for (int i = 0; i < 64; ++i) {
    int v = (base[static_cast<std::size_t>(i)] * s + 50) / 100;
    if (v < 1) v = 1;
    if (v > 255) v = 255;
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

inline void dct8x8(const double* in, double* out) {
  static const auto cosines = [] {
    std::array<double, 64> c{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        c[static_cast<std::size_t>(u * 8 + x)] = std::cos((2 * x + 1) * u * M_PI / 16.0);
    return c;
  }();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += in[y * 8 + x] * cosines[static_cast<std::size_t>(u * 8 + x)];
      tmp[y * 8 + u] = acc;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += tmp[y * 8 + u] * cosines[static_cast<std::size_t>(v * 8 + y)];
      const double cu = u == 0 ? M_SQRT1_2 : 1.0;
      const double cv = v == 0 ? M_SQRT1_2 : 1.0;
      out[v * 8 + u] = 0.25 * cu * cv * acc;
    }
}

inline void idct8x8(const double* in, double* out) {
  static const auto cosines = [] {
    std::array<double, 64> c{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        c[static_cast<std::size_t>(u * 8 + x)] = std::cos((2 * x + 1) * u * M_PI / 16.0);
    return c;
  }();
  double tmp[64];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) {
        const double cu = u == 0 ? M_SQRT1_2 : 1.0;
        acc += cu * in[v * 8 + u] * cosines[static_cast<std::size_t>(u * 8 + x)];
      }
      tmp[v * 8 + x] = acc;
    }
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) {
        const double cv = v == 0 ? M_SQRT1_2 : 1.0;
        acc += cv * tmp[v * 8 + x] * cosines[static_cast<std::size_t>(v * 8 + y)];
      }
      out[y * 8 + x] = 0.25 * acc;
    }
}

// Quantize/dequantize one padded plane through 8x8 DCT blocks, in place.
inline void requantize_plane(std::vector<double>& plane, int h, int w,
                             const std::array<int, 64>& table) {
  double block[64], coef[64];
  for (int by = 0; by < h; by += 8)
    for (int bx = 0; bx < w; bx += 8) {
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          block[y * 8 + x] = plane[static_cast<std::size_t>((by + y) * w + bx + x)] - 128.0;
      dct8x8(block, coef);
      for (int i = 0; i < 64; ++i) {
        const double q = table[static_cast<std::size_t>(i)];
        coef[i] = std::round(coef[i] / q) * q;
      }
      idct8x8(coef, block);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          plane[static_cast<std::size_t>((by + y) * w + bx + x)] = block[y * 8 + x] + 128.0;
    }
}

}  // namespace jpegdet

// Encode-decode round trip at the given quality factor. Input and output
// are [3,h,w] in [0,1]; arbitrary sizes are edge-padded to 16-pixel
// multiples internally.
inline Tensor jpeg_roundtrip(const Tensor& x, int quality) {
  if (x.rank() != 3 || x.dim(0) != 3)
    throw ShapeError("jpeg_roundtrip: expects [3,h,w], got " + shape_str(x.shape()));
  if (quality < 1 || quality > 100) throw ConfigError("jpeg_roundtrip: quality in [1,100]");
  const int h = x.dim(1), w = x.dim(2);
  const int ph = (h + 15) / 16 * 16, pw = (w + 15) / 16 * 16;

  // RGB [0,1] -> padded YCbCr planes on the 0..255 scale
  std::vector<double> yp(static_cast<std::size_t>(ph) * pw);
  std::vector<double> cb(static_cast<std::size_t>(ph) * pw);
  std::vector<double> cr(static_cast<std::size_t>(ph) * pw);
  const double* r = x.data();
  const double* g = r + static_cast<std::size_t>(h) * w;
  const double* b = g + static_cast<std::size_t>(h) * w;
  for (int yy = 0; yy < ph; ++yy) {
    const int sy = std::min(yy, h - 1);
    for (int xx = 0; xx < pw; ++xx) {
      const int sx = std::min(xx, w - 1);
      const double R = 255.0 * r[sy * w + sx];
      const double G = 255.0 * g[sy * w + sx];
      const double B = 255.0 * b[sy * w + sx];
      const std::size_t i = static_cast<std::size_t>(yy) * pw + xx;
      yp[i] = 0.299 * R + 0.587 * G + 0.114 * B;
      cb[i] = -0.168736 * R - 0.331264 * G + 0.5 * B + 128.0;
      cr[i] = 0.5 * R - 0.418688 * G - 0.081312 * B + 128.0;
    }
  }

  // 4:2:0 chroma: average 2x2, requantize at half resolution, replicate back
  const int ch = ph / 2, cw = pw / 2;
  std::vector<double> cb2(static_cast<std::size_t>(ch) * cw), cr2(cb2.size());
  for (int yy = 0; yy < ch; ++yy)
    for (int xx = 0; xx < cw; ++xx) {
      const std::size_t i0 = static_cast<std::size_t>(2 * yy) * pw + 2 * xx;
      const std::size_t i1 = i0 + 1, i2 = i0 + pw, i3 = i2 + 1;
      cb2[static_cast<std::size_t>(yy) * cw + xx] = 0.25 * (cb[i0] + cb[i1] + cb[i2] + cb[i3]);
      cr2[static_cast<std::size_t>(yy) * cw + xx] = 0.25 * (cr[i0] + cr[i1] + cr[i2] + cr[i3]);
    }

  const auto lq = jpegdet::scaled_table(jpegdet::kLumaQ, quality);
  const auto cq = jpegdet::scaled_table(jpegdet::kChromaQ, quality);
  jpegdet::requantize_plane(yp, ph, pw, lq);
  jpegdet::requantize_plane(cb2, ch, cw, cq);
  jpegdet::requantize_plane(cr2, ch, cw, cq);

  std::vector<double> out(static_cast<std::size_t>(3) * h * w);
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const double Y = yp[static_cast<std::size_t>(yy) * pw + xx];
      const double Cb = cb2[static_cast<std::size_t>(yy / 2) * cw + xx / 2] - 128.0;
      const double Cr = cr2[static_cast<std::size_t>(yy / 2) * cw + xx / 2] - 128.0;
      double R = Y + 1.402 * Cr;
      double G = Y - 0.344136 * Cb - 0.714136 * Cr;
      double B = Y + 1.772 * Cb;
      auto to_unit = [](double v) {
        v /= 255.0;
        return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      };
      out[static_cast<std::size_t>(yy) * w + xx] = to_unit(R);
      out[(static_cast<std::size_t>(h) + yy) * w + xx] = to_unit(G);
      out[(2 * static_cast<std::size_t>(h) + yy) * w + xx] = to_unit(B);
    }
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace cloak
