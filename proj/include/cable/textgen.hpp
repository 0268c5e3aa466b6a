#pragma once

#include <cstdint>
#include <string>

namespace cable {

// Deterministic synthetic prose: plain-ASCII sentences with word-level
// regularities and paragraph-level topic reuse. Appends whole documents, so
// the result is the shortest document-aligned text of at least min_bytes.
// The same (min_bytes, seed) pair always yields the same string.
std::string synth_text(int64_t min_bytes, uint64_t seed);

// Writes synth_text to path; creates parent directories as needed.
void write_synth_corpus(const std::string& path, int64_t min_bytes,
                        uint64_t seed);

}  // namespace cable
