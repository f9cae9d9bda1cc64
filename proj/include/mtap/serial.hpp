// Little-endian binary IO primitives shared by the checkpoint and dataset
// containers.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace mtap {

enum class io_errc {
  bad_magic,
  bad_version,
  truncated,
  range,         // stored value violates a container invariant
  inconsistent,  // payload disagrees with its own header/config
  io,            // OS-level read/write failure
};

class io_error : public std::runtime_error {
 public:
  io_error(io_errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  io_errc code() const { return code_; }

 private:
  io_errc code_;
};

void write_u8(std::ostream& os, uint8_t v);
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, const void* p, size_t n);

uint8_t read_u8(std::istream& is);
uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
double read_f64(std::istream& is);
void read_bytes(std::istream& is, void* p, size_t n);

// Reads 4 magic bytes and compares; throws io_errc::bad_magic on mismatch.
void expect_magic(std::istream& is, const char (&magic)[5], const char* container);

}  // namespace mtap
