#include "iun/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "iun/error.hpp"
#include "iun/util.hpp"

namespace iun::corpus {

namespace {

using json = nlohmann::json;

// Titles and month names that precede a name or a number and so almost never
// end a sentence. Single letters and dotted acronyms are handled separately.
constexpr std::array<std::string_view, 40> kAbbreviations = {
    "Mr",   "Mrs",  "Ms",   "Mx",   "Dr",   "Prof", "St",   "Mt",  "Gen",  "Gov",
    "Sen",  "Rep",  "Rev",  "Col",  "Lt",   "Sgt",  "Capt", "Cpt", "Cmdr", "Adm",
    "Maj",  "Brig", "Supt", "Insp", "Det",  "No",   "Fig",  "vs",  "Jan",  "Feb",
    "Mar",  "Apr",  "Jun",  "Jul",  "Aug",  "Sep",  "Sept", "Oct", "Nov", "Dec"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

bool starts_with_at(std::string_view text, std::size_t pos, std::string_view what) {
  return text.size() >= pos + what.size() && text.substr(pos, what.size()) == what;
}

// Closing quote or bracket that may trail a terminator; returns its byte length or 0.
std::size_t closer_length(std::string_view text, std::size_t pos) {
  const char c = text[pos];
  if (c == '"' || c == '\'' || c == ')' || c == ']') return 1;
  if (starts_with_at(text, pos, "\xE2\x80\x99") || starts_with_at(text, pos, "\xE2\x80\x9D")) return 3;
  return 0;
}

bool is_opener(std::string_view text, std::size_t pos) {
  const auto c = static_cast<unsigned char>(text[pos]);
  if ((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) return true;
  if (c == '"' || c == '\'' || c == '(' || c == '[') return true;
  if (starts_with_at(text, pos, "\xE2\x80\x9C") || starts_with_at(text, pos, "\xE2\x80\x98")) return true;
  // Latin-1 uppercase block U+00C0..U+00DE except the multiplication sign.
  if (c == 0xC3 && pos + 1 < text.size()) {
    const auto d = static_cast<unsigned char>(text[pos + 1]);
    return d >= 0x80 && d <= 0x9E && d != 0x97;
  }
  return false;
}

bool is_ascii_alpha(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }

// Token immediately before the period at `dot`, without leading quotes/brackets.
std::string_view token_before(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && !is_space(text[b - 1])) --b;
  std::string_view token = text.substr(b, dot - b);
  while (!token.empty() && (token.front() == '"' || token.front() == '\'' || token.front() == '(' ||
                            token.front() == '[')) {
    token.remove_prefix(1);
  }
  return token;
}

bool is_protected_abbreviation(std::string_view token) {
  if (token.empty()) return false;
  if (token.size() == 1 && is_ascii_alpha(token[0])) return true;
  // Dotted acronyms: "U.S", "e.g", "U.K" (final period is the one being tested).
  if (token.find('.') != std::string_view::npos) {
    std::size_t start = 0;
    while (start <= token.size()) {
      const auto dot = token.find('.', start);
      const auto seg = token.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
      if (seg.size() != 1 || !is_ascii_alpha(seg[0])) return false;
      if (dot == std::string_view::npos) break;
      start = dot + 1;
    }
    return true;
  }
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), token) != kAbbreviations.end();
}

Chunk make_chunk(const std::string& doc_id, std::string text) {
  Chunk c;
  c.doc_id = doc_id;
  c.char_len = utf8_length(text);
  c.sha256 = sha256_hex(text);
  c.text = std::move(text);
  return c;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::vector<Document> load_corpus(const CorpusSpec& spec) {
  if (spec.name.empty()) throw Error(ErrorCode::InvalidArgument, "corpus name is empty");
  if (spec.size < 1) throw Error(ErrorCode::InvalidArgument, "corpus size must be >= 1", spec.name);
  std::ifstream in(spec.path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileMissing, "cannot open corpus " + spec.path.string(), spec.path.string());

  std::vector<Document> docs;
  docs.reserve(spec.size);
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (docs.size() < spec.size && std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!is_valid_utf8(line)) throw MalformedLineError(ErrorCode::InvalidUtf8, line_no, "invalid UTF-8");
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MalformedLineError(ErrorCode::MalformedLine, line_no, e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") || !obj["id"].is_string() ||
        !obj["text"].is_string()) {
      throw MalformedLineError(ErrorCode::MalformedLine, line_no, "expected string fields \"id\" and \"text\"");
    }
    Document doc{obj["id"].get<std::string>(), obj["text"].get<std::string>()};
    if (doc.id.empty()) throw MalformedLineError(ErrorCode::InvalidDocument, line_no, "empty id");
    if (trim(doc.text).empty()) throw MalformedLineError(ErrorCode::InvalidDocument, line_no, "empty text");
    if (!seen.insert(doc.id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id " + doc.id, doc.id);
    }
    docs.push_back(std::move(doc));
  }
  if (docs.size() < spec.size) throw ShortCorpusError(spec.size, docs.size());
  return docs;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    const std::size_t first_term = i;
    std::size_t j = i;
    while (j < n && is_terminator(text[j])) ++j;
    const bool single_period = (j - first_term == 1) && text[first_term] == '.';
    for (std::size_t len; j < n && (len = closer_length(text, j)) > 0;) j += len;
    if (j >= n || !is_space(text[j])) {
      i = j;
      continue;
    }
    std::size_t k = j;
    while (k < n && is_space(text[k])) ++k;
    if (k >= n || !is_opener(text, k)) {
      i = k;
      continue;
    }
    if (single_period && is_protected_abbreviation(token_before(text, first_term))) {
      i = k;
      continue;
    }
    const auto sentence = trim(text.substr(start, j - start));
    if (!sentence.empty()) out.emplace_back(sentence);
    start = k;
    i = k;
  }
  const auto tail = trim(text.substr(std::min(start, n)));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

Chunk top_chunk(const Document& doc, std::size_t limit) {
  const auto sentences = split_sentences(doc.text);
  if (sentences.empty()) return make_chunk(doc.id, std::string(trim(doc.text)));
  std::string text = sentences.front();
  std::size_t len = utf8_length(text);
  for (std::size_t s = 1; s < sentences.size(); ++s) {
    const std::size_t add = 1 + utf8_length(sentences[s]);
    if (len + add > limit) break;
    text += ' ';
    text += sentences[s];
    len += add;
  }
  return make_chunk(doc.id, std::move(text));
}

std::vector<Chunk> top_chunks(std::span<const Document> docs, std::size_t limit) {
  std::vector<Chunk> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(top_chunk(d, limit));
  return out;
}

std::string chunks_to_jsonl(std::span<const Chunk> chunks) {
  std::string out;
  for (const auto& c : chunks) {
    json obj = {{"id", c.doc_id}, {"chunk", c.text}, {"sha256", c.sha256}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_chunks(std::span<const Chunk> chunks, const std::filesystem::path& path) {
  write_text_file_atomic(path, chunks_to_jsonl(chunks));
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Chunk> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
      Chunk c = make_chunk(obj.at("id").get<std::string>(), obj.at("chunk").get<std::string>());
      if (c.sha256 != obj.at("sha256").get<std::string>()) {
        throw MalformedLineError(ErrorCode::MalformedLine, line_no, "chunk digest mismatch");
      }
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw MalformedLineError(ErrorCode::MalformedLine, line_no, e.what());
    }
  }
  return out;
}

}  // namespace iun::corpus
