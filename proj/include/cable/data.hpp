#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cable/rng.hpp"

namespace cable {

// Char-level corpus: every distinct codepoint is a symbol, ids are assigned
// in ascending codepoint order. The eval split is the tail of the stream and
// never overlaps the training region.
struct Corpus {
    std::vector<int32_t> ids;
    std::vector<uint32_t> vocab;  // codepoint for each id, ascending
    std::unordered_map<uint32_t, int32_t> to_id;
    int64_t train_len = 0;  // ids[0, train_len) train, the rest eval

    int64_t vocab_size() const { return static_cast<int64_t>(vocab.size()); }
    int64_t size() const { return static_cast<int64_t>(ids.size()); }
    int64_t eval_len() const { return size() - train_len; }

    std::vector<int32_t> encode(const std::string& text) const;
    std::string decode(const std::vector<int32_t>& seq) const;
};

std::vector<uint32_t> utf8_decode(const std::string& text);
std::string utf8_encode(const std::vector<uint32_t>& codepoints);

Corpus corpus_from_text(const std::string& text, double eval_fraction);
Corpus load_corpus(const std::string& path, double eval_fraction);

// Sidecar vocabulary file: one "U+XXXX" line per id, in id order.
void write_vocab_sidecar(const Corpus& corpus, const std::string& path);
std::vector<uint32_t> read_vocab_sidecar(const std::string& path);

struct Batch {
    std::vector<int32_t> inputs;   // batch * t, row-major
    std::vector<int32_t> targets;  // same layout, shifted by one
    int64_t batch = 0;
    int64_t t = 0;
};

// Draws random training (or eval) windows with a private seeded generator,
// so iteration order depends only on the seed.
class BatchSampler {
  public:
    BatchSampler(const Corpus& corpus, bool eval_split, int64_t t,
                 int64_t batch, uint64_t seed);
    Batch next();
    Rng& rng() { return rng_; }

  private:
    const Corpus* corpus_;
    int64_t begin_;
    int64_t len_;
    int64_t t_;
    int64_t batch_;
    Rng rng_;
};

}  // namespace cable
