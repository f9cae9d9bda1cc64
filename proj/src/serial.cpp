#include "mtap/serial.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace mtap {

namespace {

void put(std::ostream& os, const unsigned char* b, size_t n) {
  os.write(reinterpret_cast<const char*>(b), static_cast<std::streamsize>(n));
  if (!os) throw io_error(io_errc::io, "write failed");
}

void get(std::istream& is, unsigned char* b, size_t n) {
  is.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw io_error(io_errc::truncated, "unexpected end of file");
}

}  // namespace

void write_u8(std::ostream& os, uint8_t v) { put(os, &v, 1); }

void write_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  put(os, b, 2);
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put(os, b, 4);
}

void write_f64(std::ostream& os, double v) {
  const uint64_t u = std::bit_cast<uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  put(os, b, 8);
}

void write_bytes(std::ostream& os, const void* p, size_t n) {
  put(os, static_cast<const unsigned char*>(p), n);
}

uint8_t read_u8(std::istream& is) {
  unsigned char b;
  get(is, &b, 1);
  return b;
}

uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  get(is, b, 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  get(is, b, 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  get(is, b, 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

void read_bytes(std::istream& is, void* p, size_t n) {
  get(is, static_cast<unsigned char*>(p), n);
}

void expect_magic(std::istream& is, const char (&magic)[5], const char* container) {
  char b[4];
  read_bytes(is, b, 4);
  if (std::memcmp(b, magic, 4) != 0)
    throw io_error(io_errc::bad_magic,
                   std::string(container) + ": bad magic, expected \"" + magic + "\"");
}

}  // namespace mtap
