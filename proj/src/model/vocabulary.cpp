#include "cpo/model/vocabulary.hpp"

#include <stdexcept>

namespace cpo::model {

namespace {

std::string describe(char c) {
  const auto byte = static_cast<unsigned char>(c);
  if (byte >= 0x20 && byte < 0x7f) return std::string("'") + c + "'";
  return "byte 0x" + std::string(1, "0123456789abcdef"[byte >> 4]) + std::string(1, "0123456789abcdef"[byte & 15]);
}

}  // namespace

Vocabulary::Vocabulary(std::string_view symbols) : symbols_(symbols) {
  ids_.fill(-1);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    auto& slot = ids_[static_cast<unsigned char>(symbols_[i])];
    if (slot != -1) throw std::invalid_argument("vocabulary: duplicate symbol " + describe(symbols_[i]));
    slot = kReserved + static_cast<int>(i);
  }
}

Vocabulary Vocabulary::default_charset() {
  return Vocabulary(" abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789>:-.,");
}

int Vocabulary::id(char symbol) const {
  const int v = ids_[static_cast<unsigned char>(symbol)];
  if (v < 0) throw std::invalid_argument("unknown symbol " + describe(symbol));
  return v;
}

bool Vocabulary::contains(char symbol) const { return ids_[static_cast<unsigned char>(symbol)] >= 0; }

char Vocabulary::symbol(int id) const {
  if (id < kReserved || static_cast<std::size_t>(id) >= size()) {
    throw std::invalid_argument("id " + std::to_string(id) + " is not a symbol id");
  }
  return symbols_[static_cast<std::size_t>(id - kReserved)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

TokenSequence Vocabulary::tokenize(std::string_view text) const {
  TokenSequence seq;
  seq.ids.reserve(text.size() + 2);
  seq.ids.push_back(kBos);
  for (char c : text) seq.ids.push_back(id(c));
  seq.ids.push_back(kEos);
  return seq;
}

std::vector<int> Vocabulary::encode_target(std::string_view text) const {
  std::vector<int> out = encode(text);
  out.push_back(kEos);
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    if (id == kSep) throw std::invalid_argument("detokenize: SEP inside text");
    out.push_back(symbol(id));
  }
  return out;
}

PromptTemplate::PromptTemplate(std::string format) : format_(std::move(format)) {
  if (format_.find("{text}") == std::string::npos) {
    throw std::invalid_argument("prompt template must contain {text}");
  }
}

std::string PromptTemplate::render_text(std::string_view src_lang, std::string_view tgt_lang,
                                        std::string_view text) const {
  std::string out;
  for (std::size_t i = 0; i < format_.size();) {
    auto substitute = [&](std::string_view key, std::string_view value) {
      if (format_.compare(i, key.size(), key) != 0) return false;
      out.append(value);
      i += key.size();
      return true;
    };
    if (substitute("{src}", src_lang) || substitute("{tgt}", tgt_lang) || substitute("{text}", text)) continue;
    out.push_back(format_[i++]);
  }
  return out;
}

TokenSequence PromptTemplate::render(const Vocabulary& vocab, std::string_view src_lang, std::string_view tgt_lang,
                                     std::string_view text) const {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (int id : vocab.encode(render_text(src_lang, tgt_lang, text))) seq.ids.push_back(id);
  seq.ids.push_back(Vocabulary::kSep);
  seq.prompt_len = seq.ids.size();
  return seq;
}

TokenSequence join(const TokenSequence& prompt, std::span<const int> target_ids) {
  TokenSequence seq;
  seq.ids.reserve(prompt.ids.size() + target_ids.size());
  seq.ids.insert(seq.ids.end(), prompt.ids.begin(), prompt.ids.end());
  seq.ids.insert(seq.ids.end(), target_ids.begin(), target_ids.end());
  seq.prompt_len = prompt.ids.size();
  return seq;
}

}  // namespace cpo::model
