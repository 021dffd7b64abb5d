#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iun::corpus {

inline constexpr std::size_t kDefaultChunkLimit = 1000;

struct Document {
  std::string id;
  std::string text;
};

/// Leading whole-sentence prefix of a document. `char_len` counts Unicode
/// code points; `sha256` is the digest of the UTF-8 bytes of `text`.
struct Chunk {
  std::string doc_id;
  std::string text;
  std::size_t char_len = 0;
  std::string sha256;

  bool operator==(const Chunk&) const = default;
};

struct CorpusSpec {
  std::string name;
  std::filesystem::path path;
  std::size_t size = 0;
};

/// Reads the first `spec.size` documents of a JSONL corpus in file order.
/// Blank lines are skipped; lines after the requested prefix are not parsed.
/// Throws ShortCorpusError when the file holds fewer documents.
std::vector<Document> load_corpus(const CorpusSpec& spec);

bool is_valid_utf8(std::string_view s);
std::size_t utf8_length(std::string_view s);

/// Rule-based splitter. A boundary follows '.', '!' or '?' (plus any closing
/// quotes or brackets) when whitespace and then an uppercase letter, digit,
/// quote or opening bracket come next. Honorifics, single-letter initials and
/// dotted acronyms like "U.S." do not end a sentence. Sentences are returned
/// trimmed, with their internal whitespace untouched.
std::vector<std::string> split_sentences(std::string_view text);

/// Greedy whole-sentence prefix within `limit` code points, sentences joined
/// by a single space. The first sentence is always kept, whatever its length.
Chunk top_chunk(const Document& doc, std::size_t limit = kDefaultChunkLimit);

std::vector<Chunk> top_chunks(std::span<const Document> docs,
                              std::size_t limit = kDefaultChunkLimit);

/// JSONL export, one {"id","chunk","sha256"} object per line.
std::string chunks_to_jsonl(std::span<const Chunk> chunks);
void write_chunks(std::span<const Chunk> chunks, const std::filesystem::path& path);

/// Inverse of write_chunks; recomputes and verifies every digest.
std::vector<Chunk> read_chunks(const std::filesystem::path& path);

}  // namespace iun::corpus
