#include "promptcam/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "promptcam/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcam {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const void* data, std::size_t len) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw std::runtime_error(path + ": write failed");
}

struct PnmParser {
  const std::vector<std::uint8_t>& bytes;
  const std::string& path;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path + ": " + msg + " at byte " + std::to_string(pos));
  }
  void skip_space_and_comments() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  }
  int read_int() {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected integer");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 28) fail("integer overflow in header");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

Image load_pnm(const std::string& path, const char* magic, int channels) {
  auto bytes = read_file(path);
  PnmParser p{bytes, path};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != magic[1]) {
    p.pos = 0;
    p.fail(std::string("expected ") + magic + " magic");
  }
  p.pos = 2;
  const int w = p.read_int();
  const int h = p.read_int();
  const int maxval = p.read_int();
  if (w <= 0 || h <= 0) p.fail("non-positive dimensions");
  if (maxval != 255) p.fail("unsupported maxval " + std::to_string(maxval));
  if (p.pos >= bytes.size() || !std::isspace(bytes[p.pos]))
    p.fail("expected single whitespace before raster");
  ++p.pos;  // exactly one whitespace byte separates header and raster
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - p.pos < need)
    p.fail("raster truncated: need " + std::to_string(need) + " bytes, have " +
           std::to_string(bytes.size() - p.pos));
  Image img(w, h, channels);
  std::memcpy(img.pixels.data(), bytes.data() + p.pos, need);
  return img;
}

void save_pnm(const Image& img, const std::string& path, const char* magic,
              int channels) {
  if (img.channels != channels)
    throw std::invalid_argument(path + ": image has " + std::to_string(img.channels) +
                                " channels, format needs " + std::to_string(channels));
  std::string header = std::string(magic) + "\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  write_file(path, out.data(), out.size());
}

void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
  put_u32be(out, static_cast<std::uint32_t>(payload.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, static_cast<std::uint32_t>(
                     crc32(0, body.data(), static_cast<uInt>(body.size()))));
}

// ---- synthetic generator internals ----

// Two-tone full-patch glyph patterns; lx, ly are local pixel coordinates.
bool pattern_primary(int pattern, int lx, int ly, int ps) {
  switch (pattern % 8) {
    case 0: return true;                                   // solid
    case 1: return (ly / 2) % 2 == 0;                      // horizontal stripes
    case 2: return (lx / 2) % 2 == 0;                      // vertical stripes
    case 3: return ((lx / 2) + (ly / 2)) % 2 == 0;         // checker
    case 4: return ((lx + ly) / 2) % 2 == 0;               // diagonal stripes
    case 5: return lx < 2 || ly < 2 || lx >= ps - 2 || ly >= ps - 2;  // ring
    case 6: return lx % 4 < 2 && ly % 4 < 2;               // dot grid
    default:
      return std::abs(lx - ly) < 2 || std::abs(lx + ly - (ps - 1)) < 2;  // X
  }
}

const std::array<std::uint8_t, 3> kSpeciesColors[] = {
    {220, 45, 45},  {60, 200, 70},  {55, 95, 230},  {235, 215, 50},
    {225, 60, 220}, {60, 215, 215}, {240, 140, 30}, {150, 65, 225},
    {95, 170, 35},  {230, 95, 130}, {40, 150, 160}, {180, 120, 40},
};
const std::array<std::uint8_t, 3> kGenusColors[] = {
    {250, 250, 250}, {30, 30, 30}, {170, 170, 60}, {90, 50, 140},
    {200, 90, 40},   {50, 120, 90},
};

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

void draw_glyph(Image& img, const GlyphDef& g, int patch_size, Rng rng,
                double noise_level) {
  const int per_side = img.width / patch_size;
  const int px = (g.patch_position % per_side) * patch_size;
  const int py = (g.patch_position / per_side) * patch_size;
  for (int ly = 0; ly < patch_size; ++ly) {
    for (int lx = 0; lx < patch_size; ++lx) {
      const bool primary = pattern_primary(g.pattern, lx, ly, patch_size);
      for (int c = 0; c < 3; ++c) {
        const double base = primary ? g.color[c] : 0.35 * g.color[c];
        const double n = rng.uniform(-1.0, 1.0) * noise_level * 0.5 * 255.0;
        img.at(px + lx, py + ly, c) = clamp_byte(base + n);
      }
    }
  }
}

json glyph_to_json(const GlyphDef& g) {
  return json{{"glyph_id", g.glyph_id},
              {"color", {g.color[0], g.color[1], g.color[2]}},
              {"patch_position", g.patch_position},
              {"pattern", g.pattern}};
}

GlyphDef glyph_from_json(const json& j) {
  GlyphDef g;
  g.glyph_id = j.at("glyph_id").get<int>();
  auto c = j.at("color");
  g.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
             c.at(2).get<std::uint8_t>()};
  g.patch_position = j.at("patch_position").get<int>();
  g.pattern = j.at("pattern").get<int>();
  return g;
}

json taxonomy_to_json(const TaxonomyTree& tree, int node) {
  const auto& n = tree.nodes[node];
  json j{{"label", n.label}, {"level", n.level}};
  if (n.class_id >= 0) j["class_id"] = n.class_id;
  if (!n.children.empty()) {
    json kids = json::array();
    for (int c : n.children) kids.push_back(taxonomy_to_json(tree, c));
    j["children"] = kids;
  }
  return j;
}

int taxonomy_from_json(const json& j, TaxonomyTree& tree, int parent) {
  const int idx = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  tree.nodes[idx].label = j.at("label").get<std::string>();
  tree.nodes[idx].level = j.at("level").get<int>();
  tree.nodes[idx].parent = parent;
  tree.nodes[idx].class_id = j.value("class_id", -1);
  if (j.contains("children")) {
    // Recursion reallocates tree.nodes; collect indices before touching nodes[idx].
    std::vector<int> kids;
    for (const auto& child : j.at("children"))
      kids.push_back(taxonomy_from_json(child, tree, idx));
    tree.nodes[idx].children = std::move(kids);
  }
  return idx;
}

json entry_to_json(const ImageEntry& e) {
  return json{{"id", e.id},
              {"path", e.path},
              {"label", e.label},
              {"trait_mask_path", e.trait_mask_path},
              {"occlusion_flag", e.occluded}};
}

ImageEntry entry_from_json(const json& j) {
  ImageEntry e;
  e.id = j.at("id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.label = j.at("label").get<int>();
  e.trait_mask_path = j.at("trait_mask_path").get<std::string>();
  e.occluded = j.at("occlusion_flag").get<bool>();
  return e;
}

}  // namespace

Image load_ppm(const std::string& path) { return load_pnm(path, "P6", 3); }
void save_ppm(const Image& img, const std::string& path) { save_pnm(img, path, "P6", 3); }
Image load_pgm(const std::string& path) { return load_pnm(path, "P5", 1); }
void save_pgm(const Image& img, const std::string& path) { save_pnm(img, path, "P5", 1); }

Image load_image(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return load_ppm(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return load_pgm(path);
  throw std::runtime_error(path + ": unknown image magic at byte 0");
}

void save_png(const Image& img, const std::string& path) {
  const int bpp = img.channels;
  if (bpp != 1 && bpp != 3)
    throw std::invalid_argument(path + ": PNG writer supports 1 or 3 channels");
  // Raw scanlines with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (1 + img.width * bpp));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row =
        img.pixels.data() + static_cast<std::size_t>(y) * img.width * bpp;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * bpp);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error(path + ": zlib compression failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                              // bit depth
  ihdr.push_back(bpp == 3 ? 2 : 0);               // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", z);
  png_chunk(out, "IEND", {});
  write_file(path, out.data(), out.size());
}

std::vector<Image> patchify(const Image& img, int patch_size) {
  if (patch_size <= 0 || img.width != img.height || img.width % patch_size != 0)
    throw std::invalid_argument("patchify: image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) +
                                " not divisible into patches of " +
                                std::to_string(patch_size));
  const int per_side = img.width / patch_size;
  std::vector<Image> patches;
  patches.reserve(static_cast<std::size_t>(per_side) * per_side);
  for (int gy = 0; gy < per_side; ++gy)
    for (int gx = 0; gx < per_side; ++gx) {
      Image p(patch_size, patch_size, img.channels);
      for (int ly = 0; ly < patch_size; ++ly)
        for (int lx = 0; lx < patch_size; ++lx)
          for (int c = 0; c < img.channels; ++c)
            p.at(lx, ly, c) = img.at(gx * patch_size + lx, gy * patch_size + ly, c);
      patches.push_back(std::move(p));
    }
  return patches;
}

Image unpatchify(const std::vector<Image>& patches, int image_size) {
  if (patches.empty()) throw std::invalid_argument("unpatchify: no patches");
  const int ps = patches[0].width;
  const int per_side = image_size / ps;
  if (per_side * per_side != static_cast<int>(patches.size()))
    throw std::invalid_argument("unpatchify: patch count does not tile the image");
  Image img(image_size, image_size, patches[0].channels);
  for (int idx = 0; idx < static_cast<int>(patches.size()); ++idx) {
    const int gx = idx % per_side, gy = idx / per_side;
    for (int ly = 0; ly < ps; ++ly)
      for (int lx = 0; lx < ps; ++lx)
        for (int c = 0; c < img.channels; ++c)
          img.at(gx * ps + lx, gy * ps + ly, c) = patches[idx].at(lx, ly, c);
  }
  return img;
}

Mat patch_matrix(const Image& img, int patch_size) {
  auto patches = patchify(img, patch_size);
  const std::size_t k =
      static_cast<std::size_t>(patch_size) * patch_size * img.channels;
  Mat m(patches.size(), k);
  for (std::size_t i = 0; i < patches.size(); ++i)
    for (std::size_t j = 0; j < k; ++j)
      m(i, j) = patches[i].pixels[j] / 255.0 - 0.5;
  return m;
}

Image box_blur(const Image& img, int kernel) {
  if (kernel <= 0) throw std::invalid_argument("box_blur: kernel must be positive");
  const int half = kernel / 2;
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        int sum = 0, count = 0;
        for (int dy = -half; dy <= half; ++dy)
          for (int dx = -half; dx <= half; ++dx) {
            const int xx = std::clamp(x + dx, 0, img.width - 1);
            const int yy = std::clamp(y + dy, 0, img.height - 1);
            sum += img.at(xx, yy, c);
            ++count;
          }
        out.at(x, y, c) = static_cast<std::uint8_t>(sum / count);
      }
  return out;
}

int TaxonomyTree::find(const std::string& label) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].label == label) return static_cast<int>(i);
  return -1;
}

std::vector<int> TaxonomyTree::species_under(int node) const {
  std::vector<int> out;
  std::vector<int> stack{node};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    if (nodes[n].class_id >= 0) out.push_back(nodes[n].class_id);
    for (int c : nodes[n].children) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void fill_background(Image& img, double noise_level, std::uint64_t seed) {
  Rng rng = Rng(seed).stream("background");
  const double base = 118.0;
  // Gentle per-image gradient plus white noise; same recipe as the generator.
  const double gx = rng.uniform(-22.0, 22.0);
  const double gy = rng.uniform(-22.0, 22.0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double ramp = gx * (double(x) / img.width - 0.5) +
                          gy * (double(y) / img.height - 0.5);
      for (int c = 0; c < 3; ++c) {
        const double n = rng.uniform(-1.0, 1.0) * noise_level * 255.0;
        img.at(x, y, c) = clamp_byte(base + ramp + n);
      }
    }
}

SynthManifest generate_synth_traits(const SynthSpec& spec, const std::string& out_dir) {
  if (spec.classes < 2)
    throw std::invalid_argument("generate_synth_traits: need at least 2 classes");
  if (spec.image_size % spec.patch_size != 0)
    throw std::invalid_argument("generate_synth_traits: image_size " +
                                std::to_string(spec.image_size) +
                                " not divisible by patch_size " +
                                std::to_string(spec.patch_size));
  const int per_side = spec.image_size / spec.patch_size;
  const int num_patches = per_side * per_side;
  const int num_genera = (spec.classes + 1) / 2;
  // Randomized layouts only ever place three glyphs per image; class-consistent
  // layouts need a distinct patch per planted glyph.
  const int positions_needed =
      spec.randomize_positions ? 3 : spec.classes + num_genera + 1;
  if (positions_needed > num_patches)
    throw std::invalid_argument(
        "generate_synth_traits: infeasible layout: needs " +
        std::to_string(positions_needed) + " glyph positions but the image has " +
        std::to_string(num_patches) + " patches");

  Rng master(spec.seed);

  // Distinct patch positions for species glyphs, genus glyphs, distractor.
  std::vector<int> positions(num_patches);
  for (int i = 0; i < num_patches; ++i) positions[i] = i;
  {
    Rng layout = master.stream("layout");
    layout.shuffle(positions);
  }

  SynthManifest m;
  m.seed = spec.seed;
  m.image_size = spec.image_size;
  m.patch_size = spec.patch_size;
  m.noise_level = spec.noise_level;
  m.occlusion_rate = spec.occlusion_rate;
  m.randomized_positions = spec.randomize_positions;

  // With randomized layouts the per-class canonical positions are only
  // nominal (each image draws its own); wrap rather than demand M slots.
  auto canon_pos = [&](int i) { return positions[i % num_patches]; };

  GlyphDef distractor;
  distractor.glyph_id = 1000;
  distractor.color = {160, 160, 160};
  distractor.patch_position = canon_pos(spec.classes + num_genera);
  distractor.pattern = 3;

  std::vector<GlyphDef> genus_glyphs(num_genera);
  for (int g = 0; g < num_genera; ++g) {
    genus_glyphs[g].glyph_id = 100 + g;
    genus_glyphs[g].color = kGenusColors[g % std::size(kGenusColors)];
    genus_glyphs[g].patch_position = canon_pos(spec.classes + g);
    genus_glyphs[g].pattern = 5 + g % 3;
  }

  for (int c = 0; c < spec.classes; ++c) {
    ClassDef cd;
    cd.class_id = c;
    const int genus = c / 2;
    const int family = genus / 2;
    cd.name = "species-" + std::to_string(c);
    cd.genus = "genus-" + std::to_string(genus);
    cd.family = "family-" + std::to_string(family);
    cd.trait.glyph_id = c;
    cd.trait.color = kSpeciesColors[c % std::size(kSpeciesColors)];
    cd.trait.patch_position = positions[c];
    cd.trait.pattern = c % 5;  // patterns 0..4; ring/dots/X reserved for genus
    cd.shared = {genus_glyphs[genus], distractor};
    m.classes.push_back(std::move(cd));
  }

  // Taxonomy: root -> families -> genera -> species.
  TaxonomyTree& tree = m.taxonomy;
  tree.nodes.push_back({"root", 0, -1, {}, -1});
  const int num_families = (num_genera + 1) / 2;
  for (int f = 0; f < num_families; ++f) {
    const int fnode = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({"family-" + std::to_string(f), 1, 0, {}, -1});
    tree.nodes[0].children.push_back(fnode);
    for (int g = f * 2; g < std::min(num_genera, f * 2 + 2); ++g) {
      const int gnode = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({"genus-" + std::to_string(g), 2, fnode, {}, -1});
      tree.nodes[fnode].children.push_back(gnode);
      for (int s = g * 2; s < std::min(spec.classes, g * 2 + 2); ++s) {
        const int snode = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({"species-" + std::to_string(s), 3, gnode, {}, s});
        tree.nodes[gnode].children.push_back(snode);
      }
    }
  }

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  double mean_acc[3] = {0, 0, 0};
  std::size_t mean_count = 0;

  auto render_split = [&](const char* split, int count_per_class,
                          std::vector<ImageEntry>& entries, bool accumulate_mean) {
    for (int c = 0; c < spec.classes; ++c) {
      for (int i = 0; i < count_per_class; ++i) {
        char idbuf[64];
        std::snprintf(idbuf, sizeof(idbuf), "%s_c%02d_i%03d", split, c, i);
        const std::string id = idbuf;
        Rng img_rng = master.stream("image").stream(id);
        const bool occluded =
            master.stream("occlude").stream(id).uniform() < spec.occlusion_rate;

        Image img(spec.image_size, spec.image_size, 3);
        fill_background(img, spec.noise_level, img_rng.next_u64());
        const auto& cd = m.classes[c];
        GlyphDef trait = cd.trait;
        GlyphDef genus = cd.shared[0];
        GlyphDef distr = cd.shared[1];
        if (spec.randomize_positions) {
          Rng pos_rng = img_rng.stream("positions");
          int slots[3];
          for (int s = 0; s < 3; ++s) {
            for (;;) {
              const int p = static_cast<int>(pos_rng.uniform_int(num_patches));
              bool clash = false;
              for (int q = 0; q < s; ++q) clash |= slots[q] == p;
              if (!clash) {
                slots[s] = p;
                break;
              }
            }
          }
          trait.patch_position = slots[0];
          genus.patch_position = slots[1];
          distr.patch_position = slots[2];
        }
        draw_glyph(img, distr, spec.patch_size, img_rng.stream("glyph-distractor"),
                   spec.noise_level);
        draw_glyph(img, genus, spec.patch_size, img_rng.stream("glyph-genus"),
                   spec.noise_level);
        if (!occluded)
          draw_glyph(img, trait, spec.patch_size, img_rng.stream("glyph-trait"),
                     spec.noise_level);

        Image mask(spec.image_size, spec.image_size, 1);
        if (!occluded) {
          const int px = (trait.patch_position % per_side) * spec.patch_size;
          const int py = (trait.patch_position / per_side) * spec.patch_size;
          for (int ly = 0; ly < spec.patch_size; ++ly)
            for (int lx = 0; lx < spec.patch_size; ++lx)
              mask.at(px + lx, py + ly, 0) = 255;
        }

        ImageEntry e;
        e.id = id;
        e.path = "images/" + id + ".ppm";
        e.label = c;
        e.trait_mask_path = "masks/" + id + ".pgm";
        e.occluded = occluded;
        save_ppm(img, (fs::path(out_dir) / e.path).string());
        save_pgm(mask, (fs::path(out_dir) / e.trait_mask_path).string());
        entries.push_back(std::move(e));

        if (accumulate_mean) {
          for (std::size_t px = 0; px < img.pixels.size(); px += 3)
            for (int ch = 0; ch < 3; ++ch) mean_acc[ch] += img.pixels[px + ch];
          mean_count += img.pixels.size() / 3;
        }
      }
    }
  };

  render_split("train", spec.train_per_class, m.train, true);
  render_split("test", spec.test_per_class, m.test, false);

  for (int ch = 0; ch < 3; ++ch)
    m.mean_color[ch] = mean_acc[ch] / (255.0 * static_cast<double>(mean_count));

  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

void save_manifest(const SynthManifest& m, const std::string& path) {
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["noise_level"] = m.noise_level;
  j["occlusion_rate"] = m.occlusion_rate;
  j["randomized_positions"] = m.randomized_positions;
  j["mean_color"] = {m.mean_color[0], m.mean_color[1], m.mean_color[2]};
  json classes = json::array();
  for (const auto& c : m.classes) {
    json shared = json::array();
    for (const auto& g : c.shared) shared.push_back(glyph_to_json(g));
    classes.push_back(json{{"class_id", c.class_id},
                           {"name", c.name},
                           {"genus", c.genus},
                           {"family", c.family},
                           {"trait_glyphs", json::array({glyph_to_json(c.trait)})},
                           {"shared_glyphs", shared}});
  }
  j["classes"] = classes;
  json train = json::array(), test = json::array();
  for (const auto& e : m.train) train.push_back(entry_to_json(e));
  for (const auto& e : m.test) test.push_back(entry_to_json(e));
  j["splits"] = json{{"train", train}, {"test", test}};
  j["taxonomy"] = taxonomy_to_json(m.taxonomy, m.taxonomy.root);
  const std::string text = j.dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

SynthManifest load_manifest(const std::string& manifest_path) {
  auto bytes = read_file(manifest_path);
  json j = json::parse(bytes.begin(), bytes.end());
  SynthManifest m;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.image_size = j.at("image_size").get<int>();
  m.patch_size = j.at("patch_size").get<int>();
  m.noise_level = j.at("noise_level").get<double>();
  m.occlusion_rate = j.at("occlusion_rate").get<double>();
  m.randomized_positions = j.value("randomized_positions", false);
  auto mc = j.at("mean_color");
  m.mean_color = {mc.at(0).get<double>(), mc.at(1).get<double>(), mc.at(2).get<double>()};
  for (const auto& cj : j.at("classes")) {
    ClassDef c;
    c.class_id = cj.at("class_id").get<int>();
    c.name = cj.at("name").get<std::string>();
    c.genus = cj.at("genus").get<std::string>();
    c.family = cj.at("family").get<std::string>();
    c.trait = glyph_from_json(cj.at("trait_glyphs").at(0));
    for (const auto& g : cj.at("shared_glyphs")) c.shared.push_back(glyph_from_json(g));
    m.classes.push_back(std::move(c));
  }
  for (const auto& e : j.at("splits").at("train")) m.train.push_back(entry_from_json(e));
  for (const auto& e : j.at("splits").at("test")) m.test.push_back(entry_from_json(e));
  m.taxonomy.root = taxonomy_from_json(j.at("taxonomy"), m.taxonomy, -1);
  return m;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  LoadedDataset ds;
  ds.manifest = load_manifest(manifest_path);
  ds.dir = fs::path(manifest_path).parent_path().string();
  const int c_count = ds.num_classes();

  auto load_split = [&](const std::vector<ImageEntry>& entries,
                        std::vector<Image>& images, std::vector<int>& labels,
                        std::vector<std::uint8_t>& occluded, std::vector<Mat>& mats) {
    for (const auto& e : entries) {
      if (e.label < 0 || e.label >= c_count)
        throw std::runtime_error("manifest: image " + e.id + " has label " +
                                 std::to_string(e.label) + " outside 0.." +
                                 std::to_string(c_count - 1));
      Image img = load_ppm((fs::path(ds.dir) / e.path).string());
      if (img.width != ds.manifest.image_size || img.height != ds.manifest.image_size)
        throw std::runtime_error("manifest: image " + e.id + " is " +
                                 std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", expected " +
                                 std::to_string(ds.manifest.image_size));
      Image mask = load_pgm((fs::path(ds.dir) / e.trait_mask_path).string());
      if (mask.width != img.width || mask.height != img.height)
        throw std::runtime_error("manifest: mask for " + e.id +
                                 " does not match its image dimensions");
      mats.push_back(patch_matrix(img, ds.manifest.patch_size));
      images.push_back(std::move(img));
      labels.push_back(e.label);
      occluded.push_back(e.occluded ? 1 : 0);
    }
  };
  load_split(ds.manifest.train, ds.train_images, ds.train_labels, ds.train_occluded,
             ds.train_patches);
  load_split(ds.manifest.test, ds.test_images, ds.test_labels, ds.test_occluded,
             ds.test_patches);
  return ds;
}

Image load_trait_mask(const LoadedDataset& ds, const ImageEntry& entry) {
  return load_pgm((fs::path(ds.dir) / entry.trait_mask_path).string());
}

DatasetView full_view(const LoadedDataset& ds) {
  DatasetView v;
  v.base = &ds;
  v.num_classes = ds.num_classes();
  v.node_label = "all-species";
  for (const auto& c : ds.manifest.classes) v.class_names.push_back(c.name);
  v.train_idx.resize(ds.train_images.size());
  v.test_idx.resize(ds.test_images.size());
  for (std::size_t i = 0; i < v.train_idx.size(); ++i) v.train_idx[i] = i;
  for (std::size_t i = 0; i < v.test_idx.size(); ++i) v.test_idx[i] = i;
  v.train_labels = ds.train_labels;
  v.test_labels = ds.test_labels;
  return v;
}

DatasetView relabel_taxonomy(const LoadedDataset& ds, int node_index) {
  const auto& tree = ds.manifest.taxonomy;
  if (node_index < 0 || node_index >= static_cast<int>(tree.nodes.size()))
    throw std::out_of_range("relabel_taxonomy: node index out of range");
  const auto& node = tree.nodes[node_index];
  if (node.children.size() < 2)
    throw std::invalid_argument("relabel_taxonomy: node '" + node.label +
                                "' has fewer than 2 children");
  // species class id -> child index under this node
  std::vector<int> group_of(ds.num_classes(), -1);
  for (std::size_t child = 0; child < node.children.size(); ++child)
    for (int cid : tree.species_under(node.children[child]))
      group_of[cid] = static_cast<int>(child);

  DatasetView v;
  v.base = &ds;
  v.num_classes = static_cast<int>(node.children.size());
  v.node_label = node.label;
  for (int child : node.children) v.class_names.push_back(tree.nodes[child].label);
  auto relabel = [&](const std::vector<int>& labels, std::vector<std::size_t>& idx,
                     std::vector<int>& out_labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (group_of[labels[i]] < 0) continue;  // species outside this subtree
      idx.push_back(i);
      out_labels.push_back(group_of[labels[i]]);
    }
  };
  relabel(ds.train_labels, v.train_idx, v.train_labels);
  relabel(ds.test_labels, v.test_idx, v.test_labels);
  return v;
}

}  // namespace pcam
