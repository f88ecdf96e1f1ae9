#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "strokezs/lexicon.hpp"
#include "strokezs/tensor.hpp"

namespace strokezs {

// Rendered glyph: image_size x image_size x 3, values in [-1, 1].
using Image = nn::Tensor;

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

// One stroke as a polyline in unit-square coordinates (y grows downward).
// Turning strokes have three points, all others two.
struct Primitive {
  Stroke stroke = Stroke::kHorizontal;
  std::vector<Point> points;

  Point bbox_center() const;
  friend bool operator==(const Primitive&, const Primitive&) = default;
};

struct GlyphSpec {
  std::vector<Primitive> primitives;
  friend bool operator==(const GlyphSpec&, const GlyphSpec&) = default;
};

inline constexpr int kLayoutStyles = 4;

// Places strokes on a grid in reading order (row-major). Style 0 uses a
// ceil(sqrt(T)) column grid; the other styles vary the column count and
// margins so that characters sharing a stroke sequence can still look
// different. Throws UsageError on an empty or overlong sequence.
GlyphSpec plan_layout(const StrokeSequence& seq, int style = 0,
                      std::size_t max_strokes = kDefaultMaxStrokes);

// Layout style assigned to a character (stable hash of its char_id).
int layout_style_for(const CharacterEntry& entry);

struct RenderConfig {
  int image_size = 32;
  double jitter_translate = 0.04;  // fraction of the image
  double jitter_rotate = 0.06;     // radians
  double jitter_thickness = 0.35;  // pixels
  double jitter_point = 0.015;     // per-endpoint wobble, fraction of the image
  double noise_std = 0.05;         // in normalized intensity units
  double base_thickness = 1.6;     // pixels
  std::uint64_t seed = 0;

  // Throws UsageError when image_size < 16 or a magnitude is negative.
  void validate() const;
};

// Anti-aliased rasterization with per-sample jitter keyed by
// (config.seed, sample_seed).
Image render_glyph(const GlyphSpec& spec, const RenderConfig& config, std::uint64_t sample_seed);

// Jitter-free "printed" rendering. Variants 0 and 1 are two fixed styles
// (thin upright vs. heavier slanted).
Image render_support(const CharacterEntry& entry, int font_variant, const RenderConfig& config);

struct ManifestRecord {
  std::string sample_id;
  std::string char_id;
  std::string split_tag;
  std::uint64_t seed = 0;
  std::string path;  // relative to the manifest's directory
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

// Seed of the `index`-th sample of a character.
std::uint64_t sample_seed(std::uint64_t config_seed, const std::string& char_id, std::size_t index);

// Renders samples_per_char images per character into out_dir/images and
// returns their manifest rows. Sample indices start at first_index so that
// disjoint sample sets of the same class can be produced.
DatasetManifest generate_dataset(const Lexicon& lexicon, const std::vector<std::string>& chars,
                                 int samples_per_char, const RenderConfig& config,
                                 const std::string& out_dir, const std::string& split_tag = "train",
                                 std::size_t first_index = 0);

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& image);

// Parameters of a synthetic alphabet. Characters are compositions of 2-3
// "radicals" (short stroke sequences drawn with Zipf-like popularity), which
// gives realistic one-to-many collisions and radical frequency skew.
struct AlphabetConfig {
  int count = 300;
  int num_radicals = 90;
  int min_radical_strokes = 1;
  int max_radical_strokes = 3;
  int min_parts = 2;
  int max_parts = 3;
  double zipf_exponent = 0.9;
  std::string id_prefix = "S";
  std::uint64_t seed = 1;
  // Sequences that must not be produced (used to build disjoint alphabets).
  std::set<StrokeSequence> excluded;
};

Lexicon make_synthetic_alphabet(const AlphabetConfig& config);

}  // namespace strokezs
