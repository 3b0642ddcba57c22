#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "eyemod/dataset.hpp"
#include "eyemod/error.hpp"

using namespace eyemod;
namespace fs = std::filesystem;

namespace {

DatasetPlan desk_plan(std::size_t frames) {
  DatasetPlan p;
  p.schemes = {Scheme::BPSK, Scheme::QPSK, Scheme::QAM16, Scheme::PAM4};
  p.snr_grid_db = {10.0};
  p.frames_per_class_per_snr = frames;
  p.pipeline = {8, 16, 32, 16, 32};
  return p;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "eyemod_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

ErrorCode read_error(const fs::path& p) {
  try {
    read(p);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected read to throw");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("plan arithmetic") {
  DatasetPlan def;
  CHECK(def.total_records() == 420000);
  CHECK(def.payload_bytes() == 420000ull * 299 * 699 * 2);
  CHECK(desk_plan(50).total_records() == 200);
  CHECK_NOTHROW(def.validate());
}

TEST_CASE("plan validation") {
  auto p = desk_plan(10);
  p.split = {0.7, 0.2, 0.2};
  CHECK_THROWS_AS(p.validate(), Error);
  p = desk_plan(10);
  p.split = {0.7, 0.3, 0.0};
  CHECK_THROWS_AS(p.validate(), Error);
  p = desk_plan(10);
  p.schemes.clear();
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("cell split sizes") {
  const SplitFractions f;
  const auto big = cell_split_sizes(5000, f);
  CHECK(big[0] == 3500);
  CHECK(big[1] == 1000);
  CHECK(big[2] == 500);
  const auto small = cell_split_sizes(50, f);
  CHECK(small[0] + small[1] + small[2] == 50);
  CHECK(small[0] == 35);
  for (std::size_t n = 10; n < 200; ++n) {
    const auto s = cell_split_sizes(n, f);
    CHECK(s[0] + s[1] + s[2] == n);
    CHECK(s[1] > 0);
    CHECK(s[2] > 0);
  }
}

TEST_CASE("quantization round trip") {
  CHECK(quantize(0.0f) == 0);
  CHECK(quantize(1.0f) == 255);
  CHECK(quantize(0.5f) == 128);
  for (int b = 0; b < 256; ++b) CHECK(quantize(dequantize(static_cast<std::uint8_t>(b))) == b);
}

TEST_CASE("build: order, labels, split, determinism across workers") {
  const auto plan = desk_plan(12);
  const auto a = build(plan, 1);
  const auto b = build(plan, 3);
  CHECK(a == b);
  CHECK(a.count() == 48);
  CHECK(a.height == 16);
  CHECK(a.width == 32);
  // Classes are stored in canonical order regardless of plan order.
  CHECK(a.class_names == std::vector<std::string>{"QAM16", "QPSK", "BPSK", "PAM4"});
  for (std::size_t i = 0; i < a.count(); ++i) CHECK(a.class_ids[i] == i / 12);
  REQUIRE(a.manifest.has_value());
  const auto& m = *a.manifest;
  std::set<std::uint32_t> all(m.train.begin(), m.train.end());
  all.insert(m.val.begin(), m.val.end());
  all.insert(m.test.begin(), m.test.end());
  CHECK(all.size() == a.count());
  CHECK(m.train.size() + m.val.size() + m.test.size() == a.count());
}

TEST_CASE("build record equals the directly synthesized tensor") {
  const auto plan = desk_plan(10);
  const auto c = build(plan, 2);
  const auto t = synthesize_tensor(plan, Scheme::QPSK, 0, 7);
  const std::size_t rec = 1 * 10 + 7;  // QPSK is the second canonical class here
  for (std::size_t k = 0; k < c.record_bytes(); ++k) CHECK(c.record_pixels(rec)[k] == quantize(t.data[k]));
}

TEST_CASE("split: every cell in every split, stratified counts") {
  auto plan = desk_plan(20);
  plan.snr_grid_db = {-10.0, 20.0};
  const auto c = build(plan, 2);
  const auto m = split(c, {}, 9);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    std::set<std::pair<int, int>> cells;
    for (auto i : m.indices(s)) cells.insert({c.class_ids[i], c.snr_indices[i]});
    CHECK(cells.size() == 8);
  }
  CHECK(m.train.size() == 8 * 14);
  CHECK(m.val.size() == 8 * 4);
  CHECK(m.test.size() == 8 * 2);
  CHECK(split(c, {}, 9) == m);
  CHECK(split(c, {}, 10) != m);
}

TEST_CASE("split: undersized cells are rejected") {
  const auto c = build(desk_plan(10), 1);
  try {
    split(c, {0.9, 0.05, 0.05}, 1);
    FAIL("expected CellTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CellTooSmall);
  }
  try {
    build(desk_plan(2), 1);
    FAIL("expected CellTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CellTooSmall);
  }
}

TEST_CASE("write/read round trip is exact and byte stable") {
  const auto c = build(desk_plan(50), 2);
  CHECK(c.count() == 200);
  CHECK(c.manifest->train.size() == 140);
  CHECK(c.manifest->val.size() == 40);
  CHECK(c.manifest->test.size() == 20);
  const auto p1 = temp_file("a.eyeamc");
  const auto p2 = temp_file("b.eyeamc");
  write(c, p1);
  const auto back = read(p1);
  CHECK(back == c);
  write(back, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(slurp(manifest_path(p1)) == slurp(manifest_path(p2)));
  CHECK(slurp(p1).substr(0, 8) == "EYEAMC1\n");
}

TEST_CASE("read errors: magic, truncation, count, version") {
  const auto c = build(desk_plan(10), 1);
  const auto good = temp_file("good.eyeamc");
  write(c, good);
  const auto bytes = slurp(good);

  const auto bad_magic = temp_file("magic.eyeamc");
  auto m = bytes;
  m[0] = 'X';
  spit(bad_magic, m);
  CHECK(read_error(bad_magic) == ErrorCode::NotADataset);

  const auto trunc = temp_file("trunc.eyeamc");
  spit(trunc, bytes.substr(0, bytes.size() - c.record_bytes() / 2));
  CHECK(read_error(trunc) == ErrorCode::Corrupt);

  const auto short_one = temp_file("short.eyeamc");
  spit(short_one, bytes.substr(0, bytes.size() - (c.record_bytes() + 2)));
  CHECK(read_error(short_one) == ErrorCode::Corrupt);

  const auto version = temp_file("version.eyeamc");
  auto v = bytes;
  v[8] = 9;
  spit(version, v);
  CHECK(read_error(version) == ErrorCode::UnsupportedVersion);
}

TEST_CASE("manifest text round trip") {
  const auto c = build(desk_plan(10), 1);
  const auto text = format_manifest(*c.manifest, c.count());
  CHECK(parse_manifest(text, c.count()) == *c.manifest);
  CHECK_THROWS_AS(parse_manifest(text, c.count() + 1), Error);
}

TEST_CASE("batch stream: sizes, layout, shuffling") {
  const auto c = build(desk_plan(50), 2);
  auto s = iterate(c, Split::Train, 32, 5);
  CHECK(s.batch_count() == 5);
  std::vector<std::size_t> sizes;
  std::vector<std::uint32_t> seen;
  while (auto b = s.next()) {
    sizes.push_back(b->size);
    CHECK(b->pixels.size() == b->size * 2 * 16 * 32);
    seen.insert(seen.end(), b->records.begin(), b->records.end());
    for (std::size_t k = 0; k < b->size; ++k) CHECK(b->labels[k] == c.class_ids[b->records[k]]);
  }
  CHECK(sizes == std::vector<std::size_t>{32, 32, 32, 32, 12});
  auto sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == c.manifest->train);
  CHECK(seen != c.manifest->train);

  auto again = iterate(c, Split::Train, 32, 5);
  CHECK(again.next()->records == std::vector<std::uint32_t>(seen.begin(), seen.begin() + 32));

  auto test = iterate(c, Split::Test, 8, 5);
  std::vector<std::uint32_t> order;
  while (auto b = test.next()) order.insert(order.end(), b->records.begin(), b->records.end());
  CHECK(order == c.manifest->test);
}

TEST_CASE("batch pixels are channel-major dequantized bytes") {
  const auto c = build(desk_plan(10), 1);
  const std::uint32_t rec = 3;
  const auto b = gather(c, std::span<const std::uint32_t>(&rec, 1));
  const auto* px = c.record_pixels(rec);
  for (std::size_t h = 0; h < c.height; ++h)
    for (std::size_t w = 0; w < c.width; ++w)
      for (std::size_t ch = 0; ch < 2; ++ch) {
        CHECK(b.pixels[(ch * c.height + h) * c.width + w] == dequantize(px[(h * c.width + w) * 2 + ch]));
      }
}

TEST_CASE("empty split is an error") {
  auto c = build(desk_plan(10), 1);
  c.manifest->val.clear();
  try {
    iterate(c, Split::Val, 4, 0);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySplit);
  }
}

TEST_CASE("worker count honours EYEMOD_THREADS") {
  ::setenv("EYEMOD_THREADS", "3", 1);
  CHECK(default_worker_count() == 3);
  ::unsetenv("EYEMOD_THREADS");
  CHECK(default_worker_count() >= 1);
}
