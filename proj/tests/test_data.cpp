#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "promptcam/data.hpp"
#include "promptcam/rng.hpp"

using namespace pcam;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / "promptcam_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthSpec small_spec() {
  SynthSpec s;
  s.classes = 4;
  s.train_per_class = 6;
  s.test_per_class = 3;
  s.image_size = 32;
  s.patch_size = 8;
  s.seed = 11;
  return s;
}

// Pixels of the patch at row-major index `pos`.
std::vector<std::uint8_t> patch_pixels(const Image& img, int pos, int ps) {
  const int per_side = img.width / ps;
  const int x0 = (pos % per_side) * ps, y0 = (pos / per_side) * ps;
  std::vector<std::uint8_t> out;
  for (int ly = 0; ly < ps; ++ly)
    for (int lx = 0; lx < ps; ++lx)
      for (int c = 0; c < img.channels; ++c) out.push_back(img.at(x0 + lx, y0 + ly, c));
  return out;
}

}  // namespace

TEST_CASE("ppm round-trips") {
  auto dir = temp_dir("ppm");
  Image white(1, 1, 3);
  white.pixels = {255, 255, 255};
  save_ppm(white, (dir / "w.ppm").string());
  auto loaded = load_ppm((dir / "w.ppm").string());
  CHECK(loaded == white);
  save_ppm(loaded, (dir / "w2.ppm").string());
  CHECK(slurp(dir / "w.ppm") == slurp(dir / "w2.ppm"));

  Rng rng(3);
  Image rand_img(13, 7, 3);
  for (auto& p : rand_img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  save_ppm(rand_img, (dir / "r.ppm").string());
  auto r1 = load_ppm((dir / "r.ppm").string());
  save_ppm(r1, (dir / "r2.ppm").string());
  CHECK(slurp(dir / "r.ppm") == slurp(dir / "r2.ppm"));
}

TEST_CASE("ppm header with single-space separators parses") {
  auto dir = temp_dir("ppm_header");
  std::ofstream out(dir / "s.ppm", std::ios::binary);
  out << "P6 2 2 255 ";
  for (int i = 0; i < 12; ++i) out.put(static_cast<char>(i * 20));
  out.close();
  auto img = load_ppm((dir / "s.ppm").string());
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.pixels[5] == 100);
}

TEST_CASE("malformed ppm header reports the byte offset") {
  auto dir = temp_dir("ppm_bad");
  std::ofstream out(dir / "bad.ppm", std::ios::binary);
  out << "P6\n2 x\n";
  out.close();
  try {
    load_ppm((dir / "bad.ppm").string());
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("at byte 5") != std::string::npos);
  }
}

TEST_CASE("pgm round-trips and load_image dispatches") {
  auto dir = temp_dir("pgm");
  Image mask(4, 4, 1);
  mask.at(2, 1, 0) = 255;
  save_pgm(mask, (dir / "m.pgm").string());
  CHECK(load_image((dir / "m.pgm").string()) == mask);
}

TEST_CASE("patchify ordering and reassembly") {
  Rng rng(9);
  Image img(32, 32, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));

  auto patches = patchify(img, 8);
  CHECK(patches.size() == 16);
  // Patch 0 is the top-left block.
  for (int ly = 0; ly < 8; ++ly)
    for (int lx = 0; lx < 8; ++lx)
      for (int c = 0; c < 3; ++c) CHECK(patches[0].at(lx, ly, c) == img.at(lx, ly, c));

  CHECK(unpatchify(patches, 32) == img);

  auto whole = patchify(img, 32);
  CHECK(whole.size() == 1);
  CHECK(whole[0] == img);

  CHECK_THROWS_AS(patchify(img, 5), std::invalid_argument);
}

TEST_CASE("generator is byte-deterministic per seed") {
  auto spec = small_spec();
  auto dir_a = temp_dir("gen_a");
  auto dir_b = temp_dir("gen_b");
  auto ma = generate_synth_traits(spec, dir_a.string());
  auto mb = generate_synth_traits(spec, dir_b.string());
  CHECK(ma.train.size() == mb.train.size());
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
  for (const auto& e : ma.train) {
    CHECK(slurp(dir_a / e.path) == slurp(dir_b / e.path));
    CHECK(slurp(dir_a / e.trait_mask_path) == slurp(dir_b / e.trait_mask_path));
  }
}

TEST_CASE("occlusion_rate zero sets no flags; twins differ only at the trait") {
  auto spec = small_spec();
  auto dir_clean = temp_dir("gen_clean");
  auto m_clean = generate_synth_traits(spec, dir_clean.string());
  for (const auto& e : m_clean.train) CHECK_FALSE(e.occluded);
  for (const auto& e : m_clean.test) CHECK_FALSE(e.occluded);

  auto spec_occ = spec;
  spec_occ.occlusion_rate = 0.5;
  auto dir_occ = temp_dir("gen_occ");
  auto m_occ = generate_synth_traits(spec_occ, dir_occ.string());
  int occluded_count = 0;
  for (std::size_t i = 0; i < m_occ.train.size(); ++i) {
    const auto& e = m_occ.train[i];
    if (!e.occluded) {
      CHECK(slurp(dir_clean / e.path) == slurp(dir_occ / e.path));
      continue;
    }
    ++occluded_count;
    // Occluded twin differs from the clean image only inside the trait patch.
    Image clean = load_ppm((dir_clean / e.path).string());
    Image occ = load_ppm((dir_occ / e.path).string());
    const auto& cls = m_occ.classes[e.label];
    for (int pos = 0; pos < 16; ++pos) {
      auto a = patch_pixels(clean, pos, 8);
      auto b = patch_pixels(occ, pos, 8);
      if (pos == cls.trait.patch_position)
        CHECK(a != b);
      else
        CHECK(a == b);
    }
  }
  CHECK(occluded_count > 0);
}

TEST_CASE("trait glyph audit: present in own unoccluded images, absent elsewhere") {
  SynthSpec spec;
  spec.classes = 8;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.seed = 29;
  auto dir = temp_dir("gen_audit");
  auto m = generate_synth_traits(spec, dir.string());

  // Distinct positions across all planted glyphs.
  std::set<int> positions;
  for (const auto& c : m.classes) positions.insert(c.trait.patch_position);
  CHECK(positions.size() == 8);

  // Reconstruct the expected noise-free glyph patch and compare; background
  // texture is nowhere near any glyph's two-tone pattern.
  auto glyph_present = [&](const Image& img, const GlyphDef& g) {
    auto px = patch_pixels(img, g.patch_position, 8);
    double mae = 0;
    for (int ly = 0; ly < 8; ++ly)
      for (int lx = 0; lx < 8; ++lx) {
        // Mirrors the generator's two-tone rendering rule.
        const bool primary = [&] {
          switch (g.pattern % 8) {
            case 0: return true;
            case 1: return (ly / 2) % 2 == 0;
            case 2: return (lx / 2) % 2 == 0;
            case 3: return ((lx / 2) + (ly / 2)) % 2 == 0;
            case 4: return ((lx + ly) / 2) % 2 == 0;
            case 5: return lx < 2 || ly < 2 || lx >= 6 || ly >= 6;
            case 6: return lx % 4 < 2 && ly % 4 < 2;
            default: return std::abs(lx - ly) < 2 || std::abs(lx + ly - 7) < 2;
          }
        }();
        for (int c = 0; c < 3; ++c) {
          const double want = primary ? g.color[c] : 0.35 * g.color[c];
          mae += std::abs(px[(ly * 8 + lx) * 3 + c] - want);
        }
      }
    return mae / (8 * 8 * 3) < 30.0;
  };

  for (const auto& e : m.train) {
    Image img = load_ppm((dir / e.path).string());
    Image mask = load_pgm((dir / e.trait_mask_path).string());
    int mask_px = 0;
    for (auto v : mask.pixels) mask_px += v == 255;
    CHECK(mask_px == 64);  // full trait patch
    for (const auto& c : m.classes) {
      if (c.class_id == e.label)
        CHECK(glyph_present(img, c.trait));
      else
        CHECK_FALSE(glyph_present(img, c.trait));
    }
  }
}

TEST_CASE("nearest-template classifier reaches 100% on unoccluded test images") {
  auto spec = small_spec();
  spec.train_per_class = 8;
  auto dir = temp_dir("gen_template");
  generate_synth_traits(spec, dir.string());
  auto ds = load_dataset((dir / "manifest.json").string());

  const int C = ds.num_classes();
  std::vector<std::vector<double>> templates(C, std::vector<double>(8 * 8 * 3, 0));
  std::vector<int> counts(C, 0);
  for (std::size_t i = 0; i < ds.train_images.size(); ++i) {
    const int label = ds.train_labels[i];
    auto px = patch_pixels(ds.train_images[i],
                           ds.manifest.classes[label].trait.patch_position, 8);
    for (std::size_t j = 0; j < px.size(); ++j) templates[label][j] += px[j];
    ++counts[label];
  }
  for (int c = 0; c < C; ++c)
    for (auto& v : templates[c]) v /= counts[c];

  int correct = 0, total = 0;
  for (std::size_t i = 0; i < ds.test_images.size(); ++i) {
    if (ds.test_occluded[i]) continue;
    double best = 1e300;
    int best_c = -1;
    for (int c = 0; c < C; ++c) {
      auto px = patch_pixels(ds.test_images[i],
                             ds.manifest.classes[c].trait.patch_position, 8);
      double d = 0;
      for (std::size_t j = 0; j < px.size(); ++j) {
        const double e = px[j] - templates[c][j];
        d += e * e;
      }
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    correct += best_c == ds.test_labels[i];
    ++total;
  }
  CHECK(total == 12);
  CHECK(correct == total);
}

TEST_CASE("dataset loads with balanced splits and valid references") {
  auto spec = small_spec();
  auto dir = temp_dir("gen_load");
  generate_synth_traits(spec, dir.string());
  auto ds = load_dataset((dir / "manifest.json").string());
  CHECK(ds.train_images.size() == 24);
  CHECK(ds.test_images.size() == 12);
  std::vector<int> per_class(4, 0);
  for (int l : ds.train_labels) ++per_class[l];
  for (int c = 0; c < 4; ++c) CHECK(per_class[c] == 6);
  CHECK(ds.train_patches[0].rows == 16);
  CHECK(ds.train_patches[0].cols == 8 * 8 * 3);
  // Train and test ids are disjoint.
  std::set<std::string> ids;
  for (const auto& e : ds.manifest.train) ids.insert(e.id);
  for (const auto& e : ds.manifest.test) CHECK_FALSE(ids.count(e.id));
}

TEST_CASE("corrupt manifest label is rejected") {
  auto spec = small_spec();
  auto dir = temp_dir("gen_corrupt");
  auto m = generate_synth_traits(spec, dir.string());
  m.train[0].label = 17;
  save_manifest(m, (dir / "manifest.json").string());
  CHECK_THROWS_AS(load_dataset((dir / "manifest.json").string()), std::runtime_error);
}

TEST_CASE("infeasible glyph layout is rejected") {
  SynthSpec spec;
  spec.classes = 12;  // 12 species + 6 genera + 1 > 16 patches
  spec.train_per_class = 1;
  spec.test_per_class = 1;
  auto dir = temp_dir("gen_infeasible");
  CHECK_THROWS_WITH_AS(generate_synth_traits(spec, dir.string()),
                       doctest::Contains("infeasible"), std::invalid_argument);
}

TEST_CASE("taxonomy relabeling") {
  SynthSpec spec;  // 8 species, 4 genera, 2 families
  spec.classes = 8;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.seed = 31;
  auto dir = temp_dir("gen_tax");
  generate_synth_traits(spec, dir.string());
  auto ds = load_dataset((dir / "manifest.json").string());
  const auto& tree = ds.manifest.taxonomy;

  // Two species under one genus map to the same label.
  const int genus0 = tree.find("genus-0");
  REQUIRE(genus0 >= 0);
  auto gview = relabel_taxonomy(ds, genus0);
  CHECK(gview.num_classes == 2);
  for (std::size_t i = 0; i < gview.train_idx.size(); ++i) {
    const int species = ds.train_labels[gview.train_idx[i]];
    CHECK((species == 0 || species == 1));
    CHECK(gview.train_labels[i] == species);  // child order == species order here
  }

  // Root with k children gives a derived C == k.
  auto rview = relabel_taxonomy(ds, tree.root);
  CHECK(rview.num_classes == static_cast<int>(tree.nodes[tree.root].children.size()));
  CHECK(rview.train_idx.size() == ds.train_images.size());

  // Species of one genus relabeled at family level, then filtered to that
  // genus's group, is exactly the genus subset.
  const int family0 = tree.find("family-0");
  auto fview = relabel_taxonomy(ds, family0);
  std::set<std::size_t> via_family;
  for (std::size_t i = 0; i < fview.train_idx.size(); ++i)
    if (fview.class_names[fview.train_labels[i]] == "genus-0")
      via_family.insert(fview.train_idx[i]);
  std::set<std::size_t> via_genus(gview.train_idx.begin(), gview.train_idx.end());
  CHECK(via_family == via_genus);

  // Leaves reject relabeling.
  const int leaf = tree.find("species-0");
  CHECK_THROWS_AS(relabel_taxonomy(ds, leaf), std::invalid_argument);
}

TEST_CASE("box blur and png writer smoke") {
  auto dir = temp_dir("misc");
  Rng rng(5);
  Image img(32, 32, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  auto blurred = box_blur(img, 8);
  CHECK(blurred.width == 32);
  // Blur contracts the value range.
  auto minmax = [](const Image& i) {
    int lo = 255, hi = 0;
    for (auto v : i.pixels) {
      lo = std::min(lo, int(v));
      hi = std::max(hi, int(v));
    }
    return std::pair{lo, hi};
  };
  CHECK(minmax(blurred).second - minmax(blurred).first <
        minmax(img).second - minmax(img).first);

  save_png(img, (dir / "x.png").string());
  auto bytes = slurp(dir / "x.png");
  CHECK(bytes.size() > 8);
  CHECK(bytes[1] == 'P');
}
