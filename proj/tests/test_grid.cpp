#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mtap/grid.hpp"
#include "mtap/serial.hpp"

using namespace mtap;

TEST_CASE("factories produce the advertised shapes") {
  CHECK(Grid::vec(5).shape() == std::vector<int>{5});
  CHECK(Grid::mat(2, 3).shape() == std::vector<int>{2, 3});
  CHECK(Grid::image(1, 8, 12).shape() == std::vector<int>{1, 8, 12});
  CHECK(Grid::kernel(4, 3, 3, 3).shape() == std::vector<int>{4, 3, 3, 3});
  CHECK(Grid::scalar(7.0).size() == 1);
  CHECK(Grid::scalar(7.0)[0] == 7.0);

  Grid g = Grid::from({1.0, 2.0, 3.0});
  CHECK(g.rank() == 1);
  CHECK(g.size() == 3);
  CHECK(g[2] == 3.0);

  CHECK(Grid().empty());
  CHECK(Grid::vec(4, 2.5)[3] == 2.5);
}

TEST_CASE("indexing is row-major") {
  Grid img = Grid::image(2, 3, 4);
  img.at(1, 2, 3) = 9.0;
  CHECK(img[1 * 12 + 2 * 4 + 3] == 9.0);

  Grid m = Grid::mat(3, 5);
  m.at(2, 4) = 4.0;
  CHECK(m[2 * 5 + 4] == 4.0);

  Grid k = Grid::kernel(2, 3, 3, 3);
  k.at(1, 2, 0, 1) = 5.0;
  CHECK(k[(1 * 3 + 2) * 9 + 0 * 3 + 1] == 5.0);
}

TEST_CASE("extent helpers name the rank-3 roles") {
  Grid img = Grid::image(2, 3, 4);
  CHECK(img.channels() == 2);
  CHECK(img.height() == 3);
  CHECK(img.width() == 4);
  CHECK(img.extent(2) == 4);
}

TEST_CASE("fill and all_finite") {
  Grid g = Grid::vec(3);
  g.fill(1.5);
  CHECK(g[0] == 1.5);
  CHECK(g.all_finite());
  g[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(g.all_finite());
  g[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(g.all_finite());
}

TEST_CASE("shape comparison helpers") {
  Grid a = Grid::image(1, 2, 3), b = Grid::image(1, 2, 3), c = Grid::mat(2, 3);
  CHECK(same_shape(a, b));
  CHECK_FALSE(same_shape(a, c));
  CHECK_NOTHROW(require_same_shape(a, b, "here"));
  CHECK_THROWS_AS(require_same_shape(a, c, "here"), std::invalid_argument);
  CHECK_FALSE(shape_str(a).empty());
}

TEST_CASE("max_abs_diff and l1_norm") {
  Grid a = Grid::from({1.0, -2.0, 3.0});
  Grid b = Grid::from({1.5, -2.0, 2.0});
  CHECK(max_abs_diff(a, b) == doctest::Approx(1.0));
  CHECK(l1_norm(a) == doctest::Approx(6.0));
}

TEST_CASE("bit_identical compares representations, not values") {
  Grid a = Grid::from({0.0, 1.0});
  Grid b = Grid::from({0.0, 1.0});
  CHECK(bit_identical(a, b));
  b[0] = -0.0;
  CHECK(a[0] == b[0]);  // numeric equality can't tell them apart
  CHECK_FALSE(bit_identical(a, b));
  // A NaN equals itself bitwise even though == never would.
  a[0] = std::numeric_limits<double>::quiet_NaN();
  b[0] = a[0];
  CHECK(a[0] != b[0]);
  CHECK(bit_identical(a, b));
  CHECK_FALSE(bit_identical(a, Grid::from({0.0, 1.0})));
}

TEST_CASE("little-endian primitives round-trip") {
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_u8(ss, 0xAB);
  write_u16(ss, 0x1234);
  write_u32(ss, 0xDEADBEEF);
  write_f64(ss, -0.1234567890123);
  CHECK(read_u8(ss) == 0xAB);
  CHECK(read_u16(ss) == 0x1234);
  CHECK(read_u32(ss) == 0xDEADBEEF);
  CHECK(read_f64(ss) == -0.1234567890123);
}

TEST_CASE("short reads throw truncated") {
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_u16(ss, 7);
  try {
    read_u32(ss);
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(e.code() == io_errc::truncated);
  }
}

TEST_CASE("expect_magic checks all four bytes") {
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  ss.write("MTXX", 4);
  try {
    expect_magic(ss, "MTAP", "checkpoint");
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(e.code() == io_errc::bad_magic);
  }

  std::stringstream ok(std::ios::in | std::ios::out | std::ios::binary);
  ok.write("MTDS", 4);
  CHECK_NOTHROW(expect_magic(ok, "MTDS", "dataset"));
}
