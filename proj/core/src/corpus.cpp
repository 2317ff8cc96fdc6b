// SPDX-License-Identifier: Apache-2.0
#include "est/corpus.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "est/errors.hpp"
#include "est/random.hpp"

EST_NAMESPACE_BEGIN

namespace {

template <class T>
T read_le(const std::string& bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

template <class T>
void write_le(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void require_windows(const Corpus& corpus, std::size_t seq_len) {
  if (corpus.size() < seq_len + 1) {
    throw RangeError("corpus has " + std::to_string(corpus.size()) + " tokens; need at least seq_len+1 = " +
                     std::to_string(seq_len + 1));
  }
}

Batch window_batch(const Corpus& corpus, std::span<const std::size_t> starts, std::size_t seq_len) {
  Batch b;
  b.layout = {starts.size(), seq_len};
  b.inputs.reserve(starts.size() * seq_len);
  b.targets.reserve(starts.size() * seq_len);
  for (std::size_t s : starts) {
    b.inputs.insert(b.inputs.end(), corpus.tokens.begin() + s, corpus.tokens.begin() + s + seq_len);
    b.targets.insert(b.targets.end(), corpus.tokens.begin() + s + 1, corpus.tokens.begin() + s + seq_len + 1);
  }
  return b;
}

}  // namespace

Corpus tokenize_bytes(std::string_view text) {
  Corpus c;
  c.tokens.reserve(text.size());
  for (char ch : text) c.tokens.push_back(static_cast<unsigned char>(ch));
  return c;
}

std::string detokenize_bytes(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= kByteVocab) throw IndexError("detokenize: id " + std::to_string(t) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError("corpus '" + path.string() + "' is empty");
  if (!bytes.starts_with(kTokenFileMagic)) return tokenize_bytes(bytes);

  const std::size_t header = kTokenFileMagic.size() + 4 + 8;
  if (bytes.size() < header) throw IoError("token file '" + path.string() + "' has a truncated header");
  Corpus c;
  c.vocab = read_le<std::uint32_t>(bytes, kTokenFileMagic.size());
  const auto count = read_le<std::uint64_t>(bytes, kTokenFileMagic.size() + 4);
  if (c.vocab == 0) throw IoError("token file '" + path.string() + "' declares vocab 0");
  if (bytes.size() != header + 2 * count) {
    throw IoError("token file '" + path.string() + "' declares " + std::to_string(count) + " tokens but holds " +
                  std::to_string((bytes.size() - header) / 2));
  }
  if (count == 0) throw IoError("corpus '" + path.string() + "' is empty");
  c.tokens.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const TokenId id = read_le<std::uint16_t>(bytes, header + 2 * i);
    if (id >= c.vocab) {
      throw IoError("token file '" + path.string() + "': id " + std::to_string(id) + " at position " +
                    std::to_string(i) + " >= vocab " + std::to_string(c.vocab));
    }
    c.tokens[i] = id;
  }
  return c;
}

void save_token_file(const Corpus& corpus, const std::filesystem::path& path) {
  if (corpus.vocab > 65536) throw IoError("token files hold u16 ids; vocab " + std::to_string(corpus.vocab) + " too large");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kTokenFileMagic.data(), static_cast<std::streamsize>(kTokenFileMagic.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.vocab));
  write_le<std::uint64_t>(out, corpus.tokens.size());
  for (TokenId t : corpus.tokens) write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("data.holdout_fraction must be in (0, 1)");
  const auto cut = corpus.size() - static_cast<std::size_t>(static_cast<double>(corpus.size()) * fraction);
  Corpus train{{corpus.tokens.begin(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(cut)}, corpus.vocab};
  Corpus held{{corpus.tokens.begin() + static_cast<std::ptrdiff_t>(cut), corpus.tokens.end()}, corpus.vocab};
  return {std::move(train), std::move(held)};
}

Batch next_batch(const Corpus& corpus, std::size_t batch_size, std::size_t seq_len, std::mt19937_64& rng) {
  require_windows(corpus, seq_len);
  const std::size_t n_starts = corpus.size() - seq_len;
  std::vector<std::size_t> starts(batch_size);
  for (auto& s : starts) s = static_cast<std::size_t>(uniform_below(rng, n_starts));
  return window_batch(corpus, starts, seq_len);
}

std::vector<Batch> fixed_batches(const Corpus& corpus, std::size_t n_batches, std::size_t batch_size,
                                 std::size_t seq_len) {
  require_windows(corpus, seq_len);
  const std::size_t count = n_batches * batch_size;
  const std::size_t last_start = corpus.size() - seq_len - 1;
  std::vector<Batch> out;
  out.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::size_t> starts(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t w = b * batch_size + i;
      starts[i] = count > 1 ? w * last_start / (count - 1) : 0;
    }
    out.push_back(window_batch(corpus, starts, seq_len));
  }
  return out;
}

std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed) {
  static constexpr std::string_view kOnsets[] = {"b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s",
                                                 "t", "v", "w", "st", "tr", "pl", "ch", "sh", "th", "gr"};
  static constexpr std::string_view kNuclei[] = {"a", "e", "i", "o", "u", "ea", "ou", "ai", "io"};
  static constexpr std::string_view kCodas[] = {"", "", "n", "r", "s", "t", "l", "nd", "ng", "st"};
  constexpr std::size_t kWords = 600;
  constexpr std::size_t kSuccessors = 12;

  // The lexicon is fixed; only the chain depends on the seed.
  auto lex_rng = keyed_rng(0x1e8, 0, 0);
  std::vector<std::string> words;
  for (std::size_t w = 0; w < kWords; ++w) {
    std::string word;
    const std::size_t syllables = 1 + uniform_below(lex_rng, w < 60 ? 1 : 3);
    for (std::size_t s = 0; s < syllables; ++s) {
      word += kOnsets[uniform_below(lex_rng, std::size(kOnsets))];
      word += kNuclei[uniform_below(lex_rng, std::size(kNuclei))];
      word += kCodas[uniform_below(lex_rng, std::size(kCodas))];
    }
    words.push_back(std::move(word));
  }

  // Each word has a short successor list; picks favour the head of the list
  // and low word ids, giving Zipf-like frequencies.
  auto rng = keyed_rng(seed, 0x7e47, 0);
  auto zipf_word = [&] {
    const double u = uniform01(rng);
    return static_cast<std::size_t>(static_cast<double>(kWords) * u * u);
  };
  std::vector<std::array<std::size_t, kSuccessors>> next(kWords);
  for (auto& succ : next) {
    for (auto& s : succ) s = zipf_word();
  }

  std::string out;
  out.reserve(n_bytes + 256);
  std::size_t word = zipf_word();
  while (out.size() < n_bytes) {
    const std::size_t sentences = 3 + uniform_below(rng, 5);
    for (std::size_t s = 0; s < sentences && out.size() < n_bytes; ++s) {
      const std::size_t length = 4 + uniform_below(rng, 12);
      for (std::size_t k = 0; k < length; ++k) {
        std::string w = words[word];
        if (k == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
        out += w;
        if (k + 1 == length) {
          out += uniform_below(rng, 8) == 0 ? "? " : ". ";
        } else {
          out += uniform_below(rng, 10) == 0 ? ", " : " ";
        }
        const double u = uniform01(rng);
        word = uniform_below(rng, 10) == 0 ? zipf_word() : next[word][static_cast<std::size_t>(kSuccessors * u * u)];
      }
    }
    out.back() = '\n';
    out += '\n';
  }
  out.resize(n_bytes);
  return out;
}

EST_NAMESPACE_END
