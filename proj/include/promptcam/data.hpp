#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "promptcam/mat.hpp"

namespace pcam {

// Interleaved row-major 8-bit image; channels is 3 (color) or 1 (mask/gray).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, 0) {}
  std::uint8_t& at(int x, int y, int c0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c0];
  }
  std::uint8_t at(int x, int y, int c0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c0];
  }
  bool operator==(const Image&) const = default;
};

// ---- Image file I/O ---------------------------------------------------------
// Binary PPM (P6) and PGM (P5), maxval 255. Canonical writer output, liberal
// reader (whitespace and # comments per the netpbm spec). Parse errors name
// the byte offset. save/load round-trips are byte-exact.
Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);
// Dispatches on the P5/P6 magic.
Image load_image(const std::string& path);
// RGB or grayscale PNG via zlib; viewer convenience, never read back.
void save_png(const Image& img, const std::string& path);

// ---- Patching ---------------------------------------------------------------
// Row-major patch order; patch 0 is the top-left block. The positional
// encodings are tied to this order, so it is fixed project-wide.
std::vector<Image> patchify(const Image& img, int patch_size);
Image unpatchify(const std::vector<Image>& patches, int image_size);
// (M x patch_size^2*channels) matrix of normalized pixels (v/255 - 0.5),
// channels interleaved within each row-major patch. Model input layout.
Mat patch_matrix(const Image& img, int patch_size);

// Mean over a window of half-width kernel/2, borders clamped.
Image box_blur(const Image& img, int kernel);

// ---- Synthetic trait dataset ------------------------------------------------

struct SynthSpec {
  int classes = 8;
  int train_per_class = 100;
  int test_per_class = 30;
  int image_size = 32;
  int patch_size = 8;
  double noise_level = 0.08;   // background noise amplitude, fraction of 255
  double occlusion_rate = 0.0; // probability a drawn image hides its trait glyph
  // Draw glyph positions per image instead of per class. Backbone pretraining
  // uses this: with no fixed layout, background patches carry no class signal
  // and the learned patch features stay local.
  bool randomize_positions = false;
  std::uint64_t seed = 1;
};

struct GlyphDef {
  int glyph_id = 0;
  std::array<std::uint8_t, 3> color{};
  int patch_position = 0;  // row-major patch index
  int pattern = 0;
};

struct ClassDef {
  int class_id = 0;
  std::string name;
  std::string genus;
  std::string family;
  GlyphDef trait;                  // unique to this class
  std::vector<GlyphDef> shared;    // [0] genus glyph, [1] global distractor
};

struct ImageEntry {
  std::string id;
  std::string path;             // relative to the dataset directory
  int label = 0;
  std::string trait_mask_path;  // PGM, 255 inside the trait glyph
  bool occluded = false;
};

struct TaxonomyNode {
  std::string label;
  int level = 0;    // 0 root, 1 family, 2 genus, 3 species
  int parent = -1;
  std::vector<int> children;
  int class_id = -1;  // species leaves only
};

struct TaxonomyTree {
  std::vector<TaxonomyNode> nodes;
  int root = 0;
  int find(const std::string& label) const;  // -1 if absent
  // class ids of every species under the subtree.
  std::vector<int> species_under(int node) const;
};

struct SynthManifest {
  int version = 1;
  std::uint64_t seed = 0;
  int image_size = 0;
  int patch_size = 0;
  double noise_level = 0.0;
  double occlusion_rate = 0.0;
  bool randomized_positions = false;
  std::array<double, 3> mean_color{};  // train-split mean, [0,1] scale
  std::vector<ClassDef> classes;
  std::vector<ImageEntry> train;
  std::vector<ImageEntry> test;
  TaxonomyTree taxonomy;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
};

// Writes images/, masks/ and manifest.json under out_dir. Byte-deterministic
// per seed: every image draws from its own named substream, and the occlusion
// decision has a separate stream, so datasets generated with different
// occlusion rates agree byte-for-byte on every unoccluded image.
SynthManifest generate_synth_traits(const SynthSpec& spec, const std::string& out_dir);

SynthManifest load_manifest(const std::string& manifest_path);
void save_manifest(const SynthManifest& m, const std::string& path);

// Background texture identical in distribution to the generator's, for
// erase-style counterfactual edits.
void fill_background(Image& img, double noise_level, std::uint64_t seed);

// ---- In-memory dataset ------------------------------------------------------

struct LoadedDataset {
  SynthManifest manifest;
  std::string dir;  // directory containing manifest.json
  std::vector<Image> train_images, test_images;
  std::vector<int> train_labels, test_labels;
  std::vector<std::uint8_t> train_occluded, test_occluded;
  std::vector<Mat> train_patches, test_patches;  // normalized model inputs

  int num_classes() const { return manifest.num_classes(); }
};

// Loads every image, verifies referential integrity (paths exist, labels in
// range, mask dimensions match), and precomputes patch matrices.
LoadedDataset load_dataset(const std::string& manifest_path);

Image load_trait_mask(const LoadedDataset& ds, const ImageEntry& entry);

// A labeling of (a subset of) a dataset; the unit every trainer consumes.
struct DatasetView {
  const LoadedDataset* base = nullptr;
  std::vector<std::size_t> train_idx, test_idx;   // indices into base arrays
  std::vector<int> train_labels, test_labels;     // aligned with *_idx
  int num_classes = 0;
  std::string node_label;                 // "all-species" for the flat view
  std::vector<std::string> class_names;

  const Mat& train_patch(std::size_t i) const { return base->train_patches[train_idx[i]]; }
  const Mat& test_patch(std::size_t i) const { return base->test_patches[test_idx[i]]; }
  std::size_t train_size() const { return train_idx.size(); }
  std::size_t test_size() const { return test_idx.size(); }
};

DatasetView full_view(const LoadedDataset& ds);

// Group labels at an internal taxonomy node: images of all species under each
// child get that child's index as their label. The node must have >= 2
// children (relabeling at a leaf is meaningless).
DatasetView relabel_taxonomy(const LoadedDataset& ds, int node_index);

}  // namespace pcam
