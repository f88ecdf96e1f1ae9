#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace strokezs {

// The five basic stroke classes. `kEnd` is the decoder's end-of-sequence
// sentinel and never appears inside a stored StrokeSequence.
enum class Stroke : std::uint8_t {
  kEnd = 0,
  kHorizontal = 1,
  kVertical = 2,
  kLeftFalling = 3,
  kRightFalling = 4,
  kTurning = 5,
};

inline constexpr int kNumStrokeClasses = 5;
inline constexpr std::size_t kDefaultMaxStrokes = 48;

// Ordered stroke classes, each in 1..5. Kept as a thin wrapper over a byte
// vector so it can be used as a map key and printed as a digit string.
class StrokeSequence {
 public:
  StrokeSequence() = default;
  explicit StrokeSequence(std::vector<std::uint8_t> codes);

  // Parses a digit string such as "12345". Throws UsageError on characters
  // outside '1'..'5'. An empty string gives an empty sequence.
  static StrokeSequence parse(std::string_view digits);

  const std::vector<std::uint8_t>& codes() const noexcept { return codes_; }
  std::size_t size() const noexcept { return codes_.size(); }
  bool empty() const noexcept { return codes_.empty(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return codes_[i]; }

  std::string str() const;

  friend auto operator<=>(const StrokeSequence&, const StrokeSequence&) = default;

 private:
  std::vector<std::uint8_t> codes_;
};

struct CharacterEntry {
  std::string char_id;
  std::string label;
  StrokeSequence strokes;
  std::vector<std::string> radicals;
};

// Stroke-sequence lexicon: entries plus an index from sequence to the set of
// char_ids written with it. Immutable after construction.
class Lexicon {
 public:
  Lexicon() = default;
  // Throws DataError on duplicate char_id, empty or overlong sequences.
  explicit Lexicon(std::vector<CharacterEntry> entries, std::size_t max_strokes = kDefaultMaxStrokes);

  const std::vector<CharacterEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Sorted char_ids per distinct sequence.
  const std::map<StrokeSequence, std::vector<std::string>>& index() const noexcept { return index_; }

  bool contains(std::string_view char_id) const;
  // Throws DataError naming the id when absent.
  const CharacterEntry& entry(std::string_view char_id) const;

  // Entries restricted to `char_ids` (order of this lexicon is kept).
  Lexicon subset(std::span<const std::string> char_ids) const;

  bool has_radicals() const;

 private:
  std::vector<CharacterEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::map<StrokeSequence, std::vector<std::string>> index_;
};

// Reads the TSV format
//   char_id <TAB> label <TAB> stroke_digits [<TAB> radical,radical,...]
// with '#' comment lines. Errors carry the 1-based line number.
Lexicon load_lexicon(std::istream& source, std::size_t max_strokes = kDefaultMaxStrokes);
Lexicon load_lexicon_file(const std::string& path, std::size_t max_strokes = kDefaultMaxStrokes);

void write_lexicon(std::ostream& out, const Lexicon& lexicon);

// char_ids whose sequence equals `seq` (sorted; empty when absent).
std::vector<std::string> exact_lookup(const Lexicon& lexicon, const StrokeSequence& seq);

// Levenshtein distance with unit costs.
int edit_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
inline int edit_distance(const StrokeSequence& a, const StrokeSequence& b) {
  return edit_distance(a.codes(), b.codes());
}

struct Rectified {
  StrokeSequence sequence;
  int distance = 0;
};

// Nearest index key under edit distance. Ties go to the shorter key, then the
// lexicographically smaller digit string. Throws UsageError on an empty lexicon.
Rectified rectify(const Lexicon& lexicon, const StrokeSequence& prediction);

// Sequences shared by two or more characters, with sorted candidate lists.
class ConfusableSet {
 public:
  ConfusableSet() = default;
  explicit ConfusableSet(std::map<StrokeSequence, std::vector<std::string>> sequences)
      : sequences_(std::move(sequences)) {}

  const std::map<StrokeSequence, std::vector<std::string>>& sequences() const noexcept {
    return sequences_;
  }
  bool contains(const StrokeSequence& seq) const { return sequences_.contains(seq); }
  // nullptr when `seq` is not confusable.
  const std::vector<std::string>* candidates(const StrokeSequence& seq) const;
  std::size_t size() const noexcept { return sequences_.size(); }
  bool empty() const noexcept { return sequences_.empty(); }

  // Every char_id appearing in some candidate list, sorted.
  std::vector<std::string> all_candidates() const;

 private:
  std::map<StrokeSequence, std::vector<std::string>> sequences_;
};

ConfusableSet build_confusable_set(const Lexicon& lexicon);

// n -> number of sequences shared by exactly n characters.
std::map<int, int> one_to_n_histogram(const Lexicon& lexicon);

}  // namespace strokezs
