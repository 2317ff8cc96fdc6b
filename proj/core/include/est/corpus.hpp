// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "est/model.hpp"

EST_NAMESPACE_BEGIN

inline constexpr std::size_t kByteVocab = 256;
// Binary token file: magic, u32 LE vocab, u64 LE count, count x u16 LE ids.
inline constexpr std::string_view kTokenFileMagic = "ESTK1";

struct Corpus {
  std::vector<TokenId> tokens;
  std::size_t vocab = kByteVocab;
  std::size_t size() const { return tokens.size(); }
};

// Byte-level tokenisation: each byte becomes its value.
Corpus tokenize_bytes(std::string_view text);
std::string detokenize_bytes(std::span<const TokenId> tokens);

// Binary token files are recognised by their magic; anything else is read as
// raw bytes. IoError on unreadable, empty or malformed files and on ids >= vocab.
Corpus load_corpus(const std::filesystem::path& path);
void save_token_file(const Corpus& corpus, const std::filesystem::path& path);

// Splits off the trailing `fraction` of tokens as a held-out set.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction);

struct Batch {
  std::vector<TokenId> inputs;   // [batch x seq_len]
  std::vector<TokenId> targets;  // inputs shifted by one position
  SequenceLayout layout;
};

// Uniformly random windows of seq_len + 1 tokens.
Batch next_batch(const Corpus& corpus, std::size_t batch_size, std::size_t seq_len, std::mt19937_64& rng);

// Deterministic windows evenly spaced over the corpus, n_batches x batch_size
// of them.
std::vector<Batch> fixed_batches(const Corpus& corpus, std::size_t n_batches, std::size_t batch_size,
                                 std::size_t seq_len);

// English-like filler text for offline experiments: a fixed pseudo-word
// lexicon, a seeded first-order Markov chain over words, sentences and
// paragraphs. Same (n_bytes, seed) gives the same text on every platform.
std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed);

EST_NAMESPACE_END
