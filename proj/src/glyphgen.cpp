#include "strokezs/glyphgen.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "strokezs/error.hpp"
#include "strokezs/record.hpp"
#include "strokezs/rng.hpp"

namespace strokezs {

Point Primitive::bbox_center() const {
  double x0 = points.front().x, x1 = x0, y0 = points.front().y, y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {(x0 + x1) / 2, (y0 + y1) / 2};
}

namespace {

Primitive make_primitive(std::uint8_t code, double cx, double cy, double hx, double hy) {
  // Falling strokes sit at 60 degrees from horizontal.
  const double l = std::min(hx / 0.5, hy / 0.866);
  const double fx = 0.5 * l, fy = 0.866 * l;
  Primitive p;
  p.stroke = static_cast<Stroke>(code);
  switch (p.stroke) {
    case Stroke::kHorizontal:
      p.points = {{cx - hx, cy}, {cx + hx, cy}};
      break;
    case Stroke::kVertical:
      p.points = {{cx, cy - hy}, {cx, cy + hy}};
      break;
    case Stroke::kLeftFalling:
      p.points = {{cx + fx, cy - fy}, {cx - fx, cy + fy}};
      break;
    case Stroke::kRightFalling:
      p.points = {{cx - fx, cy - fy}, {cx + fx, cy + fy}};
      break;
    case Stroke::kTurning:
      p.points = {{cx - hx, cy - hy}, {cx + hx, cy - hy}, {cx + hx, cy + hy}};
      break;
    case Stroke::kEnd:
      throw UsageError("end sentinel cannot be drawn");
  }
  return p;
}

}  // namespace

GlyphSpec plan_layout(const StrokeSequence& seq, int style, std::size_t max_strokes) {
  if (seq.empty()) throw UsageError("cannot lay out an empty stroke sequence");
  if (seq.size() > max_strokes) {
    throw UsageError("stroke sequence of length " + std::to_string(seq.size()) + " exceeds maximum " +
                     std::to_string(max_strokes));
  }
  if (style < 0 || style >= kLayoutStyles) throw UsageError("unknown layout style " + std::to_string(style));
  const int t = static_cast<int>(seq.size());
  const int base = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(t))));
  int cols = base;
  double margin = 0.08;
  switch (style) {
    case 1:
      cols = std::min(t, base + 1);
      break;
    case 2:
      cols = std::max(1, base - 1);
      break;
    case 3:
      margin = 0.16;
      break;
    default:
      break;
  }
  const int rows = (t + cols - 1) / cols;
  const double cw = (1.0 - 2 * margin) / cols;
  const double ch = (1.0 - 2 * margin) / rows;
  // Strokes reach slightly past their cell so neighbours touch.
  const double hx = 0.52 * cw * 0.9;
  const double hy = 0.52 * ch * 0.9;
  GlyphSpec spec;
  spec.primitives.reserve(seq.size());
  for (int i = 0; i < t; ++i) {
    const int r = i / cols, c = i % cols;
    const double cx = margin + (c + 0.5) * cw;
    const double cy = margin + (r + 0.5) * ch;
    spec.primitives.push_back(make_primitive(seq[static_cast<std::size_t>(i)], cx, cy, hx, hy));
  }
  return spec;
}

int layout_style_for(const CharacterEntry& entry) {
  return static_cast<int>(hash_string(entry.char_id) % kLayoutStyles);
}

void RenderConfig::validate() const {
  if (image_size < 16) throw UsageError("image_size must be >= 16, got " + std::to_string(image_size));
  if (jitter_translate < 0 || jitter_rotate < 0 || jitter_thickness < 0 || jitter_point < 0 ||
      noise_std < 0 || base_thickness <= 0) {
    throw UsageError("render jitter magnitudes must be non-negative and thickness positive");
  }
}

namespace {

double segment_distance(double px, double py, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Affine {
  double angle = 0.0, tx = 0.0, ty = 0.0, shear = 0.0;

  Point apply(Point p) const {
    double x = p.x - 0.5, y = p.y - 0.5;
    x -= shear * y;
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * x - s * y + 0.5 + tx, s * x + c * y + 0.5 + ty};
  }
};

// Ink coverage rasterization; `point_jitter` perturbs every polyline vertex.
Image rasterize(const GlyphSpec& spec, int size, double thickness, const Affine& xf, Rng* rng,
                double point_jitter, double noise_std) {
  std::vector<std::vector<Point>> polylines;
  polylines.reserve(spec.primitives.size());
  for (const auto& prim : spec.primitives) {
    std::vector<Point> pts;
    for (const auto& p : prim.points) {
      Point q = xf.apply(p);
      if (rng != nullptr && point_jitter > 0) {
        q.x += rng->normal() * point_jitter;
        q.y += rng->normal() * point_jitter;
      }
      pts.push_back({q.x * size, q.y * size});
    }
    polylines.push_back(std::move(pts));
  }
  const double half = thickness / 2.0;
  Image img({size, size, 3});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double ink = 0.0;
      for (const auto& pl : polylines) {
        for (std::size_t i = 0; i + 1 < pl.size(); ++i) {
          const double cov = std::clamp(half + 0.5 - segment_distance(px, py, pl[i], pl[i + 1]), 0.0, 1.0);
          ink = std::max(ink, cov);
        }
      }
      double v = -1.0 + 2.0 * ink;
      if (rng != nullptr && noise_std > 0) v += rng->normal() * noise_std;
      const float fv = static_cast<float>(std::clamp(v, -1.0, 1.0));
      float* px_out = img.ptr() + (static_cast<std::size_t>(y) * size + x) * 3;
      px_out[0] = px_out[1] = px_out[2] = fv;
    }
  }
  return img;
}

}  // namespace

Image render_glyph(const GlyphSpec& spec, const RenderConfig& config, std::uint64_t sample_seed) {
  config.validate();
  Rng rng(hash_combine(config.seed, sample_seed));
  Affine xf;
  xf.tx = rng.uniform(-1, 1) * config.jitter_translate;
  xf.ty = rng.uniform(-1, 1) * config.jitter_translate;
  xf.angle = rng.uniform(-1, 1) * config.jitter_rotate;
  const double thickness =
      std::max(0.6, config.base_thickness + rng.uniform(-1, 1) * config.jitter_thickness);
  return rasterize(spec, config.image_size, thickness, xf, &rng, config.jitter_point, config.noise_std);
}

Image render_support(const CharacterEntry& entry, int font_variant, const RenderConfig& config) {
  config.validate();
  if (font_variant != 0 && font_variant != 1) {
    throw UsageError("font variant must be 0 or 1, got " + std::to_string(font_variant));
  }
  const GlyphSpec spec = plan_layout(entry.strokes, layout_style_for(entry));
  Affine xf;
  double thickness = config.base_thickness;
  if (font_variant == 1) {
    thickness = config.base_thickness + 0.6;
    xf.shear = 0.12;
  }
  return rasterize(spec, config.image_size, thickness, xf, nullptr, 0.0, 0.0);
}

std::uint64_t sample_seed(std::uint64_t config_seed, const std::string& char_id, std::size_t index) {
  return hash_combine(hash_combine(config_seed, hash_string(char_id)), index);
}

Image load_image(const std::string& path) {
  auto records = read_records(path);
  for (auto& [name, t] : records)
    if (name == "image") return std::move(t);
  throw DataError(path + ": no tensor named 'image'");
}

void save_image(const std::string& path, const Image& image) { write_records(path, {{"image", image}}); }

namespace {

// Sample ids double as file names; keep them filesystem-safe.
std::string safe_name(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out.push_back(static_cast<char>(c));
    } else {
      static const char* hex = "0123456789abcdef";
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

}  // namespace

DatasetManifest generate_dataset(const Lexicon& lexicon, const std::vector<std::string>& chars,
                                 int samples_per_char, const RenderConfig& config,
                                 const std::string& out_dir, const std::string& split_tag,
                                 std::size_t first_index) {
  if (samples_per_char < 1) throw UsageError("samples_per_char must be >= 1");
  config.validate();
  for (const auto& id : chars) lexicon.entry(id);
  namespace fs = std::filesystem;
  const fs::path images = fs::path(out_dir) / "images";
  std::error_code ec;
  fs::create_directories(images, ec);
  if (ec) throw DataError("cannot create '" + images.string() + "': " + ec.message());

  DatasetManifest manifest;
  for (const auto& id : chars) {
    const CharacterEntry& entry = lexicon.entry(id);
    const GlyphSpec spec = plan_layout(entry.strokes, layout_style_for(entry));
    for (int k = 0; k < samples_per_char; ++k) {
      const std::size_t index = first_index + static_cast<std::size_t>(k);
      ManifestRecord rec;
      rec.sample_id = id + "#" + std::to_string(index);
      rec.char_id = id;
      rec.split_tag = split_tag;
      rec.seed = sample_seed(config.seed, id, index);
      rec.path = "images/" + safe_name(rec.sample_id) + ".rec";
      save_image((fs::path(out_dir) / rec.path).string(), render_glyph(spec, config, rec.seed));
      manifest.records.push_back(std::move(rec));
    }
  }
  return manifest;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& r : manifest.records)
    out << r.sample_id << '\t' << r.char_id << '\t' << r.split_tag << '\t' << r.seed << '\t' << r.path << '\n';
  if (!out) throw DataError("write failed for '" + path + "'");
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  DatasetManifest manifest;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) f.push_back(field);
    if (f.size() != 5) {
      throw DataError(path + ": " + ParseError(line_no, "expected 5 fields, got " + std::to_string(f.size())).what());
    }
    ManifestRecord r{f[0], f[1], f[2], 0, f[4]};
    try {
      r.seed = std::stoull(f[3]);
    } catch (const std::exception&) {
      throw DataError(path + ": " + ParseError(line_no, "bad seed '" + f[3] + "'").what());
    }
    if (!ids.insert(r.sample_id).second) {
      throw DataError(path + ": " + ParseError(line_no, "duplicate sample_id '" + r.sample_id + "'").what());
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

Lexicon make_synthetic_alphabet(const AlphabetConfig& config) {
  if (config.count < 1 || config.num_radicals < 1 || config.min_parts < 1 ||
      config.max_parts < config.min_parts || config.min_radical_strokes < 1 ||
      config.max_radical_strokes < config.min_radical_strokes) {
    throw UsageError("invalid synthetic alphabet parameters");
  }
  Rng rng(hash_combine(config.seed, hash_string(config.id_prefix)));

  std::vector<StrokeSequence> radicals;
  std::set<StrokeSequence> radical_seen;
  int guard = 0;
  while (static_cast<int>(radicals.size()) < config.num_radicals && guard++ < 100000) {
    const int len = config.min_radical_strokes +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(
                        config.max_radical_strokes - config.min_radical_strokes + 1)));
    std::vector<std::uint8_t> codes;
    for (int i = 0; i < len; ++i) codes.push_back(static_cast<std::uint8_t>(1 + rng.below(5)));
    StrokeSequence r(std::move(codes));
    if (radical_seen.insert(r).second) radicals.push_back(std::move(r));
  }
  // Popular radicals are the short ones, as with real scripts. This is also
  // what makes different compositions collide on the same stroke sequence.
  std::stable_sort(radicals.begin(), radicals.end(),
                   [](const StrokeSequence& a, const StrokeSequence& b) { return a.size() < b.size(); });
  std::vector<double> cumulative;
  double total = 0;
  for (std::size_t i = 0; i < radicals.size(); ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), config.zipf_exponent);
    cumulative.push_back(total);
  }
  auto draw_radical = [&] {
    const double u = rng.uniform() * total;
    return static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                                    cumulative.begin());
  };

  const int width = std::max(4, static_cast<int>(std::to_string(config.count).size()));
  std::vector<CharacterEntry> entries;
  std::set<std::vector<std::size_t>> compositions;
  guard = 0;
  while (static_cast<int>(entries.size()) < config.count) {
    if (guard++ > config.count * 1000) throw UsageError("synthetic alphabet parameters too restrictive");
    const int parts = config.min_parts + static_cast<int>(rng.below(
                                             static_cast<std::uint64_t>(config.max_parts - config.min_parts + 1)));
    std::vector<std::size_t> comp;
    std::vector<std::uint8_t> codes;
    for (int p = 0; p < parts; ++p) {
      const std::size_t r = draw_radical();
      comp.push_back(r);
      codes.insert(codes.end(), radicals[r].codes().begin(), radicals[r].codes().end());
    }
    StrokeSequence seq(std::move(codes));
    if (config.excluded.contains(seq) || !compositions.insert(comp).second) continue;
    std::string num = std::to_string(entries.size());
    num.insert(0, static_cast<std::size_t>(width) - std::min<std::size_t>(width, num.size()), '0');
    CharacterEntry e;
    e.char_id = config.id_prefix + num;
    e.label = config.id_prefix + "-" + num;
    e.strokes = std::move(seq);
    std::set<std::size_t> distinct(comp.begin(), comp.end());
    for (std::size_t r : distinct) e.radicals.push_back(config.id_prefix + "r" + std::to_string(r));
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(entries));
}

}  // namespace strokezs
