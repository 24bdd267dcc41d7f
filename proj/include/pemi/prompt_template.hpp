#ifndef PEMI_PROMPT_TEMPLATE_HPP
#define PEMI_PROMPT_TEMPLATE_HPP

// Tokenizer, vocabulary, and the prompt layout that turns an argument pair
// into the encoder input: soft-prompt slots, the two arguments, one mask
// and one separator, in the order given by a layout string such as
//
//   "P:4 A1 P:4 MASK P:4 SEP P:4 A2 P:4"
//
// Prompt slots carry the pad id as a placeholder; the encoder substitutes
// the learned prompt rows at those positions.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pemi/errors.hpp"

namespace pemi {

inline constexpr std::string_view kDefaultLayout = "P:4 A1 P:4 MASK P:4 SEP P:4 A2 P:4";

// Lowercases and splits on whitespace; every ASCII punctuation character
// becomes a token of its own.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      flush();
    } else if (ch < 0x80 && std::ispunct(ch)) {
      flush();
      tokens.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return tokens;
}

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kMask = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kNumSpecial = 4;

  static const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> names{"<pad>", "<unk>", "<mask>", "<sep>"};
    return names;
  }

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Words are appended after the special tokens in the given order.
  explicit Vocab(const std::vector<std::string>& words) {
    for (const auto& s : special_tokens()) insert(s);
    for (const auto& w : words) {
      if (index_.count(w) != 0) throw DataError("duplicate vocabulary entry '" + w + "'");
      insert(w);
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::optional<std::size_t> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t id(const std::string& token) const { return find(token).value_or(kUnk); }

  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  // UTF-8 lines "token<TAB>id", ids ascending.
  void write(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  }

  static Vocab read(std::istream& in) {
    std::vector<std::string> words;
    std::string line;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw DataError("vocab line " + std::to_string(expected + 1) + " has no tab");
      const std::string token = line.substr(0, tab);
      std::size_t id = 0;
      const std::string id_text = line.substr(tab + 1);
      auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
      if (ec != std::errc() || ptr != id_text.data() + id_text.size() || id != expected) {
        throw DataError("vocab ids must be dense and ascending; line " + std::to_string(expected + 1));
      }
      if (expected < kNumSpecial) {
        if (token != special_tokens()[expected]) {
          throw DataError("vocab entry " + std::to_string(expected) + " must be " + special_tokens()[expected]);
        }
      } else {
        words.push_back(token);
      }
      ++expected;
    }
    if (expected < kNumSpecial) throw DataError("vocab is missing special tokens");
    return Vocab(words);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void insert(const std::string& token) {
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Tokens with count >= min_count, ordered by descending frequency and then
// lexicographically.
inline Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  bool any = false;
  for (const auto& text : corpus) {
    for (auto& t : tokenize(text)) {
      ++counts[t];
      any = true;
    }
  }
  if (!any) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [token, count] : counts) {
    if (count < min_count) continue;
    if (std::find(Vocab::special_tokens().begin(), Vocab::special_tokens().end(), token) !=
        Vocab::special_tokens().end()) {
      continue;
    }
    kept.emplace_back(token, count);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [token, count] : kept) words.push_back(std::move(token));
  return Vocab(words);
}

enum class SlotKind { kPrompt, kArg1, kArg2, kMask, kSep };

struct Slot {
  SlotKind kind;
  std::size_t count = 1;  // prompt run length; 1 for the other kinds

  friend bool operator==(const Slot&, const Slot&) = default;
};

class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::vector<Slot> slots) : slots_(std::move(slots)) {
    for (const auto& s : slots_)
      if (s.kind == SlotKind::kPrompt) prompt_count_ += s.count;
  }

  const std::vector<Slot>& slots() const noexcept { return slots_; }
  // K, the total number of soft-prompt positions.
  std::size_t prompt_count() const noexcept { return prompt_count_; }
  // Positions taken by everything except the arguments.
  std::size_t fixed_length() const noexcept { return prompt_count_ + 2; }

  std::string to_string() const {
    std::string out;
    for (const auto& s : slots_) {
      if (!out.empty()) out += ' ';
      switch (s.kind) {
        case SlotKind::kPrompt: out += "P:" + std::to_string(s.count); break;
        case SlotKind::kArg1: out += "A1"; break;
        case SlotKind::kArg2: out += "A2"; break;
        case SlotKind::kMask: out += "MASK"; break;
        case SlotKind::kSep: out += "SEP"; break;
      }
    }
    return out;
  }

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;

 private:
  std::vector<Slot> slots_;
  std::size_t prompt_count_ = 0;
};

// Parses whitespace-separated atoms from {P:<n>, A1, A2, MASK, SEP}.
// Positions in error messages are 1-based atom indices.
inline PromptTemplate parse_layout(std::string_view spec) {
  std::istringstream in{std::string(spec)};
  std::vector<Slot> slots;
  std::map<SlotKind, std::size_t> seen;
  std::string atom;
  std::size_t position = 0;
  auto single = [&](SlotKind kind, const std::string& name) {
    if (seen[kind]++ != 0) {
      throw LayoutError("layout atom " + std::to_string(position) + ": duplicate " + name);
    }
    slots.push_back(Slot{kind, 1});
  };
  while (in >> atom) {
    ++position;
    if (atom == "A1") {
      single(SlotKind::kArg1, "A1");
    } else if (atom == "A2") {
      single(SlotKind::kArg2, "A2");
    } else if (atom == "MASK") {
      single(SlotKind::kMask, "MASK");
    } else if (atom == "SEP") {
      single(SlotKind::kSep, "SEP");
    } else if (atom.rfind("P:", 0) == 0) {
      std::size_t count = 0;
      const char* first = atom.data() + 2;
      const char* last = atom.data() + atom.size();
      auto [ptr, ec] = std::from_chars(first, last, count);
      if (first == last || ec != std::errc() || ptr != last || count == 0) {
        throw LayoutError("layout atom " + std::to_string(position) + ": malformed prompt run '" + atom + "'");
      }
      slots.push_back(Slot{SlotKind::kPrompt, count});
    } else {
      throw LayoutError("layout atom " + std::to_string(position) + ": unknown atom '" + atom + "'");
    }
  }
  const std::pair<SlotKind, const char*> required[] = {
      {SlotKind::kArg1, "A1"}, {SlotKind::kArg2, "A2"}, {SlotKind::kMask, "MASK"}, {SlotKind::kSep, "SEP"}};
  for (const auto& [kind, name] : required) {
    if (seen[kind] == 0) {
      throw LayoutError("layout is missing " + std::string(name) + " (after atom " + std::to_string(position) + ")");
    }
  }
  return PromptTemplate(std::move(slots));
}

struct Span {
  std::size_t begin = 0;
  std::size_t length = 0;
};

// The templated encoder input.
struct ModifiedInput {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> prompt_positions;  // ascending; prompt row i goes to prompt_positions[i]
  std::size_t mask_position = 0;
  std::size_t sep_position = 0;
  Span arg1;
  Span arg2;
};

// Drops tokens from the end of the longer argument (arg1 on ties) until
// both fit into `budget` positions.
inline void truncate_pair(std::vector<std::size_t>& a1, std::vector<std::size_t>& a2, std::size_t budget) {
  while (a1.size() + a2.size() > budget) {
    if (a1.size() >= a2.size()) {
      a1.pop_back();
    } else {
      a2.pop_back();
    }
  }
}

inline ModifiedInput apply_template(const PromptTemplate& layout, std::string_view arg1, std::string_view arg2,
                                    const Vocab& vocab, std::size_t max_len) {
  std::vector<std::size_t> a1 = vocab.encode(arg1);
  std::vector<std::size_t> a2 = vocab.encode(arg2);
  if (a1.empty() || a2.empty()) throw DataError("argument is empty after tokenization");
  if (layout.fixed_length() + 2 > max_len) {
    throw LengthError("layout needs " + std::to_string(layout.fixed_length()) +
                      " positions plus one per argument; max length is " + std::to_string(max_len));
  }
  truncate_pair(a1, a2, max_len - layout.fixed_length());

  ModifiedInput out;
  for (const auto& slot : layout.slots()) {
    switch (slot.kind) {
      case SlotKind::kPrompt:
        for (std::size_t i = 0; i < slot.count; ++i) {
          out.prompt_positions.push_back(out.token_ids.size());
          out.token_ids.push_back(Vocab::kPad);
        }
        break;
      case SlotKind::kArg1:
        out.arg1 = Span{out.token_ids.size(), a1.size()};
        out.token_ids.insert(out.token_ids.end(), a1.begin(), a1.end());
        break;
      case SlotKind::kArg2:
        out.arg2 = Span{out.token_ids.size(), a2.size()};
        out.token_ids.insert(out.token_ids.end(), a2.begin(), a2.end());
        break;
      case SlotKind::kMask:
        out.mask_position = out.token_ids.size();
        out.token_ids.push_back(Vocab::kMask);
        break;
      case SlotKind::kSep:
        out.sep_position = out.token_ids.size();
        out.token_ids.push_back(Vocab::kSep);
        break;
    }
  }
  return out;
}

inline void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write vocabulary to " + path);
  vocab.write(out);
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read vocabulary from " + path);
  return Vocab::read(in);
}

}  // namespace pemi

#endif  // PEMI_PROMPT_TEMPLATE_HPP
