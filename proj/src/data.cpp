#include "cable/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cable/errors.hpp"

namespace cable {

std::vector<uint32_t> utf8_decode(const std::string& text) {
    std::vector<uint32_t> out;
    out.reserve(text.size());
    const auto* p = reinterpret_cast<const unsigned char*>(text.data());
    size_t n = text.size();
    size_t i = 0;
    while (i < n) {
        unsigned char b = p[i];
        uint32_t cp = 0;
        size_t extra = 0;
        if (b < 0x80) {
            cp = b;
        } else if ((b & 0xE0) == 0xC0) {
            cp = b & 0x1F;
            extra = 1;
        } else if ((b & 0xF0) == 0xE0) {
            cp = b & 0x0F;
            extra = 2;
        } else if ((b & 0xF8) == 0xF0) {
            cp = b & 0x07;
            extra = 3;
        } else {
            throw IngestionError("invalid utf-8 lead byte at offset " +
                                 std::to_string(i));
        }
        if (extra > 0 && i + extra >= n)
            throw IngestionError("truncated utf-8 sequence at offset " +
                                 std::to_string(i));
        for (size_t k = 1; k <= extra; ++k) {
            unsigned char c = p[i + k];
            if ((c & 0xC0) != 0x80)
                throw IngestionError("invalid utf-8 continuation at offset " +
                                     std::to_string(i + k));
            cp = (cp << 6) | (c & 0x3F);
        }
        // reject overlong encodings, surrogates, and out-of-range values
        static const uint32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
        if (extra > 0 && cp < kMin[extra])
            throw IngestionError("overlong utf-8 sequence at offset " +
                                 std::to_string(i));
        if (cp >= 0xD800 && cp <= 0xDFFF)
            throw IngestionError("utf-8 surrogate at offset " +
                                 std::to_string(i));
        if (cp > 0x10FFFF)
            throw IngestionError("codepoint out of range at offset " +
                                 std::to_string(i));
        out.push_back(cp);
        i += extra + 1;
    }
    return out;
}

std::string utf8_encode(const std::vector<uint32_t>& codepoints) {
    std::string out;
    out.reserve(codepoints.size());
    for (uint32_t cp : codepoints) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

std::vector<int32_t> Corpus::encode(const std::string& text) const {
    std::vector<int32_t> out;
    for (uint32_t cp : utf8_decode(text)) {
        auto it = to_id.find(cp);
        if (it == to_id.end()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "symbol U+%04X", cp);
            throw IngestionError(std::string(buf) + " not in vocabulary");
        }
        out.push_back(it->second);
    }
    return out;
}

std::string Corpus::decode(const std::vector<int32_t>& seq) const {
    std::vector<uint32_t> cps;
    cps.reserve(seq.size());
    for (int32_t id : seq) {
        if (id < 0 || id >= vocab_size())
            throw IndexError("decode: id " + std::to_string(id) +
                             " outside vocabulary");
        cps.push_back(vocab[static_cast<size_t>(id)]);
    }
    return utf8_encode(cps);
}

Corpus corpus_from_text(const std::string& text, double eval_fraction) {
    if (text.empty()) throw IngestionError("corpus is empty");
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
        throw ArgumentError("eval_fraction must be in [0, 1)");
    std::vector<uint32_t> cps = utf8_decode(text);

    std::set<uint32_t> uniq(cps.begin(), cps.end());
    Corpus c;
    c.vocab.assign(uniq.begin(), uniq.end());
    for (size_t i = 0; i < c.vocab.size(); ++i)
        c.to_id[c.vocab[i]] = static_cast<int32_t>(i);

    c.ids.reserve(cps.size());
    for (uint32_t cp : cps) c.ids.push_back(c.to_id[cp]);

    int64_t n = c.size();
    int64_t n_eval = std::llround(static_cast<double>(n) * eval_fraction);
    n_eval = std::min(n_eval, n);
    c.train_len = n - n_eval;
    return c;
}

Corpus load_corpus(const std::string& path, double eval_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return corpus_from_text(ss.str(), eval_fraction);
}

void write_vocab_sidecar(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocab file: " + path);
    char buf[16];
    for (uint32_t cp : corpus.vocab) {
        std::snprintf(buf, sizeof buf, "U+%04X\n", cp);
        out << buf;
    }
}

std::vector<uint32_t> read_vocab_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocab file: " + path);
    std::vector<uint32_t> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.size() < 3 || line[0] != 'U' || line[1] != '+')
            throw IoError("bad vocab line: " + line);
        out.push_back(static_cast<uint32_t>(
            std::stoul(line.substr(2), nullptr, 16)));
    }
    return out;
}

BatchSampler::BatchSampler(const Corpus& corpus, bool eval_split, int64_t t,
                           int64_t batch, uint64_t seed)
    : corpus_(&corpus),
      begin_(eval_split ? corpus.train_len : 0),
      len_(eval_split ? corpus.eval_len() : corpus.train_len),
      t_(t),
      batch_(batch),
      rng_(seed) {
    if (t <= 0 || batch <= 0)
        throw ArgumentError("sampler: t and batch must be positive");
    if (len_ < t + 1)
        throw ArgumentError("sampler: split of " + std::to_string(len_) +
                            " symbols cannot produce windows of " +
                            std::to_string(t) + "+1");
}

Batch BatchSampler::next() {
    Batch b;
    b.batch = batch_;
    b.t = t_;
    b.inputs.resize(static_cast<size_t>(batch_ * t_));
    b.targets.resize(static_cast<size_t>(batch_ * t_));
    const auto& ids = corpus_->ids;
    for (int64_t r = 0; r < batch_; ++r) {
        int64_t start = begin_ + rng_.below(len_ - t_);
        for (int64_t j = 0; j < t_; ++j) {
            b.inputs[static_cast<size_t>(r * t_ + j)] = ids[static_cast<size_t>(start + j)];
            b.targets[static_cast<size_t>(r * t_ + j)] = ids[static_cast<size_t>(start + j + 1)];
        }
    }
    return b;
}

}  // namespace cable
