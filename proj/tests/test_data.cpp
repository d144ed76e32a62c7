#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dacl/data.hpp"

using namespace dacl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dacl_data_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  REQUIRE(bool(out));
}

}  // namespace

TEST_CASE("scene generation is deterministic and stays in its contracts") {
  for (int64_t id = 0; id < 50; ++id) {
    auto a = generate_scene(9, id);
    auto b = generate_scene(9, id);
    CHECK(a.horizon == b.horizon);
    CHECK(a.depth_k == b.depth_k);
    CHECK(a.road_center == b.road_center);
    CHECK(a.road_half == b.road_half);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); ++i) {
      CHECK(a.objects[i].cx == b.objects[i].cx);
      CHECK(a.objects[i].depth == b.objects[i].depth);
      CHECK(a.objects[i].cls == b.objects[i].cls);
    }

    CHECK(a.objects.size() >= 2);
    CHECK(a.objects.size() <= 6);
    CHECK(a.horizon > 0.2);
    CHECK(a.horizon < 0.5);
    for (const auto& o : a.objects) {
      CHECK(o.depth >= 1.0);
      CHECK(o.depth <= 75.0);
      CHECK(o.cls >= 3);
      CHECK(o.cls < 12);
    }
  }
  // different ids and different variants give different scenes
  auto a = generate_scene(9, 0);
  auto b = generate_scene(9, 1);
  auto c = generate_scene_variant(9, 0, 1);
  CHECK(a.horizon != b.horizon);
  CHECK(a.horizon != c.horizon);
}

TEST_CASE("rasterized labels respect depth and class ranges") {
  for (int64_t id = 0; id < 20; ++id) {
    auto g = generate_scene(3, id);
    auto s = render(g, Domain::source, 32, 64);
    const auto& d = s.depth();
    REQUIRE((d.shape == Shape{32, 64}));
    bool sky = false, road = false, terrain = false;
    for (int64_t i = 0; i < d.numel(); ++i) {
      CHECK(std::isfinite(d[i]));
      CHECK(d[i] >= 0.5f);
      CHECK(d[i] <= 80.0f);
      CHECK(s.classes()[size_t(i)] < 12);
      sky |= s.classes()[size_t(i)] == 0;
      road |= s.classes()[size_t(i)] == 1;
      terrain |= s.classes()[size_t(i)] == 2;
    }
    CHECK(sky);
    CHECK(road);
    CHECK(terrain);
    // top-left pixel sits above every admissible horizon
    CHECK(s.classes()[0] == 0);
    CHECK(d[0] == 80.0f);
  }
}

TEST_CASE("labels are identical across domains, styles are not") {
  double gap_total = 0.0;
  for (int64_t id = 0; id < 100; ++id) {
    auto g = generate_scene(21, id);
    auto src = render(g, Domain::source, 32, 64);
    auto tgt = render(g, Domain::target, 32, 64);
    CHECK(src.depth().data == tgt.depth().data);
    CHECK(src.classes() == tgt.classes());

    double diff = 0.0;
    for (int64_t i = 0; i < src.image.numel(); ++i) {
      CHECK(tgt.image[i] >= -1.0f);
      CHECK(tgt.image[i] <= 1.0f);
      diff += std::fabs(double(src.image[i]) - double(tgt.image[i]));
    }
    gap_total += diff / double(src.image.numel());
  }
  // a visible style gap is the whole point of the second domain
  CHECK(gap_total / 100.0 > 0.05);
}

TEST_CASE("source renders are flat palette colors; both domains rerender bitwise") {
  auto g = generate_scene(5, 7);
  auto s1 = render(g, Domain::source, 32, 64);
  auto s2 = render(g, Domain::source, 32, 64);
  auto t1 = render(g, Domain::target, 32, 64);
  auto t2 = render(g, Domain::target, 32, 64);
  CHECK(s1.image.data == s2.image.data);
  CHECK(t1.image.data == t2.image.data);

  const auto& pal = class_palette();
  const int64_t hw = 32 * 64;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(s1.image[c * hw + i] == pal[s1.classes()[size_t(i)]][size_t(c)]);

  CHECK_THROWS_AS(render(g, Domain::source, 30, 64), ContractError);
}

TEST_CASE("dataset round-trips bit-exactly and enforces the label protocol") {
  auto dir = fresh_dir("roundtrip");
  write_dataset(dir.string(), 42, 4, 2);

  auto m = read_manifest(dir.string());
  CHECK(m.seed == 42);
  CHECK(m.height == 32);
  CHECK(m.width == 64);
  CHECK(m.n_train == 4);
  CHECK(m.n_test == 2);
  CHECK(m.count_train_source == 4);
  CHECK(m.count_test_target == 2);

  auto train_src = load_split(dir.string(), "train", Domain::source);
  auto train_tgt = load_split(dir.string(), "train", Domain::target);
  auto test_src = load_split(dir.string(), "test", Domain::source);
  auto test_tgt = load_split(dir.string(), "test", Domain::target);
  REQUIRE(train_src.size() == 4);
  REQUIRE(train_tgt.size() == 4);
  REQUIRE(test_src.size() == 2);
  REQUIRE(test_tgt.size() == 2);

  for (int64_t i = 0; i < 4; ++i) {
    auto g = generate_scene(42, i);
    auto want_s = render(g, Domain::source, 32, 64);
    auto want_t = render(g, Domain::target, 32, 64);
    CHECK(train_src[size_t(i)].image.data == want_s.image.data);
    CHECK(train_src[size_t(i)].depth().data == want_s.depth().data);
    CHECK(train_src[size_t(i)].classes() == want_s.classes());
    CHECK(train_tgt[size_t(i)].image.data == want_t.image.data);
    CHECK(train_src[size_t(i)].scene_id == i);
  }
  for (int64_t i = 0; i < 2; ++i) {
    CHECK(test_src[size_t(i)].scene_id == 4 + i);
    CHECK(test_tgt[size_t(i)].has_labels());
    CHECK(test_tgt[size_t(i)].depth().data == test_src[size_t(i)].depth().data);
  }

  // target/train carries images only
  CHECK(!train_tgt[0].has_labels());
  CHECK_THROWS_AS(train_tgt[0].depth(), ContractError);
  CHECK_THROWS_AS(train_tgt[0].classes(), ContractError);
  CHECK(train_src[0].has_labels());

  CHECK_THROWS_AS(load_split(dir.string(), "val", Domain::source), ConfigError);
  CHECK_THROWS_AS(write_dataset((dir / "bad").string(), 1, 0, 1), ContractError);
  CHECK_THROWS_AS(write_dataset((dir / "bad").string(), 1, 2, 2, 30, 60), ContractError);
  fs::remove_all(dir);
}

TEST_CASE("identical seeds produce byte-identical dataset trees") {
  auto a = fresh_dir("tree_a");
  auto b = fresh_dir("tree_b");
  write_dataset(a.string(), 7, 3, 2);
  write_dataset(b.string(), 7, 3, 2);

  std::vector<std::string> rel_a, rel_b;
  for (auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
  for (auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  REQUIRE(rel_a == rel_b);
  CHECK(rel_a.size() == 11);  // 2 splits x 2 domains x counts + manifest
  for (const auto& rel : rel_a) CHECK(slurp(a / rel) == slurp(b / rel));

  // a different seed must not reproduce the same bytes
  auto c = fresh_dir("tree_c");
  write_dataset(c.string(), 8, 3, 2);
  CHECK(slurp(a / "train/source/0.rec") != slurp(c / "train/source/0.rec"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}

TEST_CASE("corrupt records and manifests fail with the offending path") {
  auto dir = fresh_dir("corrupt");
  write_dataset(dir.string(), 11, 2, 1);
  const auto rec = dir / "train/source/0.rec";
  const std::string good = slurp(rec);

  spit(rec, good.substr(0, good.size() / 2));
  try {
    load_split(dir.string(), "train", Domain::source);
    FAIL("truncated record should not load");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("0.rec") != std::string::npos);
  }

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  spit(rec, bad_magic);
  CHECK_THROWS_AS(load_split(dir.string(), "train", Domain::source), DataError);

  std::string bad_version = good;
  bad_version[4] = 9;
  spit(rec, bad_version);
  CHECK_THROWS_AS(load_split(dir.string(), "train", Domain::source), DataError);

  spit(rec, good + "x");
  CHECK_THROWS_AS(load_split(dir.string(), "train", Domain::source), DataError);
  spit(rec, good);
  CHECK_NOTHROW(load_split(dir.string(), "train", Domain::source));

  // a target/train record that smuggles labels in is rejected at load
  auto g = generate_scene(11, 0);
  spit(dir / "train/target/0.rec", encode_record(render(g, Domain::target, 32, 64), true));
  CHECK_THROWS_AS(load_split(dir.string(), "train", Domain::target), DataError);

  const auto manifest = dir / "manifest";
  const std::string mgood = slurp(manifest);
  spit(manifest, mgood + "bogus=1\n");
  CHECK_THROWS_AS(read_manifest(dir.string()), DataError);
  spit(manifest, mgood.substr(0, mgood.find("count_test_target")));
  CHECK_THROWS_AS(read_manifest(dir.string()), DataError);
  fs::remove(manifest);
  try {
    load_split(dir.string(), "train", Domain::source);
    FAIL("missing manifest should not load");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("manifest") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("large training sets cover every class id") {
  auto small = plan_train_variants(13, 10, 32, 64);
  CHECK(small == std::vector<int64_t>(10, 0));

  auto dir = fresh_dir("coverage");
  write_dataset(dir.string(), 13, 200, 1);
  auto train = load_split(dir.string(), "train", Domain::source);
  REQUIRE(train.size() == 200);
  std::set<int> seen;
  for (const auto& s : train)
    for (uint8_t c : s.classes()) seen.insert(int(c));
  CHECK(seen.size() == 12);
  fs::remove_all(dir);
}
