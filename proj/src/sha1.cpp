#include "h2o/sha1.hpp"

#include <cstring>

namespace h2o {

namespace {

inline uint32_t rotl(uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

void process_block(const uint8_t* p, uint32_t h[5]) {
  uint32_t w[80];
  for (int i = 0; i < 16; ++i) {
    w[i] = (uint32_t(p[i * 4]) << 24) | (uint32_t(p[i * 4 + 1]) << 16) |
           (uint32_t(p[i * 4 + 2]) << 8) | uint32_t(p[i * 4 + 3]);
  }
  for (int i = 16; i < 80; ++i) {
    w[i] = rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
  }
  uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
  for (int i = 0; i < 80; ++i) {
    uint32_t f, k;
    if (i < 20) {
      f = (b & c) | (~b & d);
      k = 0x5A827999;
    } else if (i < 40) {
      f = b ^ c ^ d;
      k = 0x6ED9EBA1;
    } else if (i < 60) {
      f = (b & c) | (b & d) | (c & d);
      k = 0x8F1BBCDC;
    } else {
      f = b ^ c ^ d;
      k = 0xCA62C1D6;
    }
    const uint32_t t = rotl(a, 5) + f + e + k + w[i];
    e = d;
    d = c;
    c = rotl(b, 30);
    b = a;
    a = t;
  }
  h[0] += a;
  h[1] += b;
  h[2] += c;
  h[3] += d;
  h[4] += e;
}

}  // namespace

std::array<uint8_t, 20> sha1(std::span<const uint8_t> data) {
  uint32_t h[5] = {0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0};

  const size_t n = data.size();
  size_t i = 0;
  for (; i + 64 <= n; i += 64) process_block(data.data() + i, h);

  uint8_t tail[128];
  const size_t rem = n - i;
  std::memcpy(tail, data.data() + i, rem);
  tail[rem] = 0x80;
  size_t pad_end = (rem + 1 <= 56) ? 64 : 128;
  std::memset(tail + rem + 1, 0, pad_end - rem - 1 - 8);
  const uint64_t bits = uint64_t(n) * 8;
  for (int b = 0; b < 8; ++b) {
    tail[pad_end - 8 + b] = uint8_t(bits >> (56 - 8 * b));
  }
  process_block(tail, h);
  if (pad_end == 128) process_block(tail + 64, h);

  std::array<uint8_t, 20> out;
  for (int k = 0; k < 5; ++k) {
    out[k * 4] = uint8_t(h[k] >> 24);
    out[k * 4 + 1] = uint8_t(h[k] >> 16);
    out[k * 4 + 2] = uint8_t(h[k] >> 8);
    out[k * 4 + 3] = uint8_t(h[k]);
  }
  return out;
}

std::array<uint8_t, 20> sha1(const std::string& s) {
  return sha1(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

std::string sha1_hex(const std::string& s) {
  static const char* hex = "0123456789abcdef";
  auto d = sha1(s);
  std::string out;
  out.reserve(40);
  for (uint8_t b : d) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

}  // namespace h2o
