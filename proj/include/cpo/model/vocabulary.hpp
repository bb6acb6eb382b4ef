#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cpo::model {

/// Token ids plus the count of leading prompt tokens, which never contribute
/// to a loss or a sequence log-probability.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t prompt_len = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const int> target() const { return std::span<const int>(ids).subspan(prompt_len); }
};

/// Character-level vocabulary with four reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kReserved = 4;

  /// Symbols are single bytes; duplicates are rejected.
  explicit Vocabulary(std::string_view symbols);

  /// Letters, digits, space and the punctuation the prompt template uses.
  static Vocabulary default_charset();

  std::size_t size() const { return kReserved + symbols_.size(); }
  const std::string& symbols() const { return symbols_; }

  int id(char symbol) const;
  char symbol(int id) const;
  bool contains(char symbol) const;

  /// Symbol ids without framing.
  std::vector<int> encode(std::string_view text) const;
  /// [BOS, text..., EOS]
  TokenSequence tokenize(std::string_view text) const;
  /// [text..., EOS], the form a target takes after a prompt.
  std::vector<int> encode_target(std::string_view text) const;
  /// Maps symbol ids back to text. BOS/PAD are skipped, decoding stops at EOS,
  /// and SEP is rejected.
  std::string detokenize(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  std::string symbols_;
  std::array<int, 256> ids_{};
};

/// Renders (source language, target language, source text) into a prompt that
/// starts with BOS and ends with the single SEP token.
class PromptTemplate {
 public:
  /// `format` may use the placeholders {src}, {tgt} and {text}.
  explicit PromptTemplate(std::string format = "{src}>{tgt}: {text}");

  const std::string& format() const { return format_; }
  std::string render_text(std::string_view src_lang, std::string_view tgt_lang, std::string_view text) const;
  TokenSequence render(const Vocabulary& vocab, std::string_view src_lang, std::string_view tgt_lang,
                       std::string_view text) const;

 private:
  std::string format_;
};

/// Prompt followed by target ids; prompt_len marks the boundary.
TokenSequence join(const TokenSequence& prompt, std::span<const int> target_ids);

}  // namespace cpo::model
