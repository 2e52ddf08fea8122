// UTF-8 helpers shared by the normalizer, tokenizer and noise channel.

#ifndef SPEECHEE_TEXT_H_
#define SPEECHEE_TEXT_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace speechee {

// Malformed bytes decode to U+FFFD, one per byte.
std::u32string DecodeUtf8(std::string_view s);
std::string EncodeUtf8(std::u32string_view cps);
void AppendUtf8(char32_t cp, std::string *out);

bool IsSpace(char32_t cp);
bool IsIdeograph(char32_t cp);
// Letters of cased alphabets plus ideographs and kana/hangul.
bool IsLetterOrIdeograph(char32_t cp);
bool IsPunctuation(char32_t cp);
char32_t ToLower(char32_t cp);

// Whitespace-delimited words; CJK ideographs become one token each.
std::vector<std::string> SplitWords(std::string_view s);

// Number of transcript tokens: words for space-delimited scripts, characters
// for ideographic runs.
std::size_t CountTokens(std::string_view s);

// Classic Levenshtein distance over code points.
std::size_t EditDistance(std::u32string_view a, std::u32string_view b);

// 64-bit FNV-1a, stable across platforms; used for seeding and content hashes.
std::uint64_t Fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string HexDigest(std::uint64_t h);

}  // namespace speechee

#endif  // SPEECHEE_TEXT_H_
