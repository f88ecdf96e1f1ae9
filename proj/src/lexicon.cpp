#include "strokezs/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "strokezs/error.hpp"

namespace strokezs {

StrokeSequence::StrokeSequence(std::vector<std::uint8_t> codes) : codes_(std::move(codes)) {
  for (auto c : codes_) {
    if (c < 1 || c > kNumStrokeClasses) {
      throw UsageError("stroke code " + std::to_string(c) + " outside 1..5");
    }
  }
}

StrokeSequence StrokeSequence::parse(std::string_view digits) {
  std::vector<std::uint8_t> codes;
  codes.reserve(digits.size());
  for (char ch : digits) {
    if (ch < '1' || ch > '5') {
      throw UsageError(std::string("stroke digit '") + ch + "' outside '1'..'5' in \"" +
                       std::string(digits) + "\"");
    }
    codes.push_back(static_cast<std::uint8_t>(ch - '0'));
  }
  return StrokeSequence(std::move(codes));
}

std::string StrokeSequence::str() const {
  std::string s;
  s.reserve(codes_.size());
  for (auto c : codes_) s.push_back(static_cast<char>('0' + c));
  return s;
}

Lexicon::Lexicon(std::vector<CharacterEntry> entries, std::size_t max_strokes)
    : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.strokes.empty()) throw DataError("character '" + e.char_id + "' has an empty stroke sequence");
    if (e.strokes.size() > max_strokes) {
      throw DataError("character '" + e.char_id + "' has " + std::to_string(e.strokes.size()) +
                      " strokes, more than the maximum " + std::to_string(max_strokes));
    }
    if (!by_id_.emplace(e.char_id, i).second) throw DataError("duplicate char_id '" + e.char_id + "'");
    index_[e.strokes].push_back(e.char_id);
  }
  for (auto& [seq, ids] : index_) std::sort(ids.begin(), ids.end());
}

bool Lexicon::contains(std::string_view char_id) const { return by_id_.find(char_id) != by_id_.end(); }

const CharacterEntry& Lexicon::entry(std::string_view char_id) const {
  auto it = by_id_.find(char_id);
  if (it == by_id_.end()) throw DataError("unknown char_id '" + std::string(char_id) + "'");
  return entries_[it->second];
}

Lexicon Lexicon::subset(std::span<const std::string> char_ids) const {
  std::set<std::string, std::less<>> wanted(char_ids.begin(), char_ids.end());
  for (const auto& id : wanted) entry(id);
  std::vector<CharacterEntry> kept;
  for (const auto& e : entries_)
    if (wanted.contains(e.char_id)) kept.push_back(e);
  return Lexicon(std::move(kept));
}

bool Lexicon::has_radicals() const {
  return std::any_of(entries_.begin(), entries_.end(), [](const auto& e) { return !e.radicals.empty(); });
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

Lexicon load_lexicon(std::istream& source, std::size_t max_strokes) {
  std::vector<CharacterEntry> entries;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError(line_no, "expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    CharacterEntry e;
    e.char_id = fields[0];
    e.label = fields[1];
    if (e.char_id.empty()) throw ParseError(line_no, "empty char_id");
    if (fields[2].empty()) throw ParseError(line_no, "empty stroke sequence");
    try {
      e.strokes = StrokeSequence::parse(fields[2]);
    } catch (const UsageError& err) {
      throw ParseError(line_no, err.what());
    }
    if (e.strokes.size() > max_strokes) {
      throw ParseError(line_no, "stroke sequence longer than " + std::to_string(max_strokes));
    }
    if (fields.size() == 4 && !fields[3].empty()) {
      for (auto& r : split(fields[3], ','))
        if (!r.empty()) e.radicals.push_back(r);
    }
    if (!seen.insert(e.char_id).second) throw ParseError(line_no, "duplicate char_id '" + e.char_id + "'");
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(entries), max_strokes);
}

Lexicon load_lexicon_file(const std::string& path, std::size_t max_strokes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open lexicon '" + path + "'");
  try {
    return load_lexicon(in, max_strokes);
  } catch (const ParseError& err) {
    throw DataError(path + ": " + err.what());
  }
}

void write_lexicon(std::ostream& out, const Lexicon& lexicon) {
  out << "# char_id\tlabel\tstrokes\tradicals\n";
  for (const auto& e : lexicon.entries()) {
    out << e.char_id << '\t' << e.label << '\t' << e.strokes.str() << '\t';
    for (std::size_t i = 0; i < e.radicals.size(); ++i) out << (i ? "," : "") << e.radicals[i];
    out << '\n';
  }
}

std::vector<std::string> exact_lookup(const Lexicon& lexicon, const StrokeSequence& seq) {
  auto it = lexicon.index().find(seq);
  if (it == lexicon.index().end()) return {};
  return it->second;
}

int edit_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<int> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

Rectified rectify(const Lexicon& lexicon, const StrokeSequence& prediction) {
  if (lexicon.empty()) throw UsageError("cannot rectify against an empty lexicon");
  if (lexicon.index().contains(prediction)) return {prediction, 0};
  const StrokeSequence* best = nullptr;
  int best_distance = 0;
  for (const auto& [key, ids] : lexicon.index()) {
    const int d = edit_distance(prediction, key);
    const bool better = best == nullptr || d < best_distance ||
                        (d == best_distance && (key.size() < best->size() ||
                                                (key.size() == best->size() && key < *best)));
    if (better) {
      best = &key;
      best_distance = d;
    }
  }
  return {*best, best_distance};
}

const std::vector<std::string>* ConfusableSet::candidates(const StrokeSequence& seq) const {
  auto it = sequences_.find(seq);
  return it == sequences_.end() ? nullptr : &it->second;
}

std::vector<std::string> ConfusableSet::all_candidates() const {
  std::vector<std::string> out;
  for (const auto& [seq, ids] : sequences_) out.insert(out.end(), ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ConfusableSet build_confusable_set(const Lexicon& lexicon) {
  std::map<StrokeSequence, std::vector<std::string>> out;
  for (const auto& [seq, ids] : lexicon.index())
    if (ids.size() >= 2) out.emplace(seq, ids);
  return ConfusableSet(std::move(out));
}

std::map<int, int> one_to_n_histogram(const Lexicon& lexicon) {
  std::map<int, int> hist;
  for (const auto& [seq, ids] : lexicon.index()) ++hist[static_cast<int>(ids.size())];
  return hist;
}

}  // namespace strokezs
