// Deterministic synthetic text generator. Produces plain-ASCII prose with
// word-level regularities (spelling, function-word grammar, punctuation) and
// paragraph-level topic reuse, which is enough structure for a char-level
// model to learn while staying fully reproducible from the seed.

#include "cable/textgen.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include "cable/errors.hpp"
#include "cable/rng.hpp"

namespace cable {
namespace {

const std::vector<std::string> kNouns = {
    "river",   "stone",   "market",  "garden",  "engine",  "letter",
    "harbor",  "signal",  "bridge",  "forest",  "window",  "copper",
    "meadow",  "anchor",  "lantern", "valley",  "machine", "pattern",
    "station", "morning", "winter",  "thread",  "bottle",  "circle",
    "mirror",  "needle",  "summer",  "island",  "timber",  "shadow",
    "record",  "cellar",  "ribbon",  "saddle",  "hammer",  "kettle",
    "tunnel",  "barrel",  "candle",  "carpet",  "basket",  "collar",
    "butter",  "copper",  "dinner",  "farmer",  "finger",  "ladder"};

const std::vector<std::string> kVerbs = {
    "carried", "watched",  "crossed", "opened",   "counted",  "followed",
    "painted", "gathered", "covered", "measured", "repaired", "traded",
    "planted", "lowered",  "lifted",  "folded",   "guarded",  "weighed",
    "turned",  "washed",   "mended",  "stacked",  "sorted",   "signed"};

const std::vector<std::string> kAdjectives = {
    "old",    "small",  "quiet",  "narrow", "heavy",  "bright",
    "pale",   "broken", "steady", "early",  "warm",   "plain",
    "smooth", "sharp",  "late",   "deep",   "long",   "clean",
    "cold",   "thin",   "wide",   "round",  "grey",   "still"};

const std::vector<std::string> kName1 = {"al", "ba", "co", "da", "el",
                                         "fa", "go", "ha", "is", "jo",
                                         "ka", "lu", "ma", "no", "or"};
const std::vector<std::string> kName2 = {"ran", "bel", "mir", "dan", "vin",
                                         "tor", "len", "sia", "mon", "der",
                                         "nor", "lia", "ven", "gar", "tan"};

template <typename V>
const std::string& pick(const V& v, Rng& rng) {
    return v[static_cast<size_t>(rng.below(static_cast<int64_t>(v.size())))];
}

std::string make_name(Rng& rng) {
    std::string n = pick(kName1, rng) + pick(kName2, rng);
    n[0] = static_cast<char>(n[0] - 'a' + 'A');
    return n;
}

std::string number_token(Rng& rng) {
    return std::to_string(1 + rng.below(99));
}

// One sentence built around the paragraph's topic nouns and cast of names.
std::string sentence(Rng& rng, const std::vector<std::string>& topics,
                     const std::vector<std::string>& names) {
    auto noun = [&]() -> std::string {
        // lean on the topic words so they repeat within the paragraph
        if (rng.below(100) < 65) return pick(topics, rng);
        return pick(kNouns, rng);
    };
    std::string s;
    switch (rng.below(6)) {
        case 0:
            s = "the " + pick(kAdjectives, rng) + " " + noun() + " " +
                pick(kVerbs, rng) + " the " + noun();
            break;
        case 1:
            s = pick(names, rng) + " " + pick(kVerbs, rng) + " the " + noun() +
                " near the " + noun();
            break;
        case 2:
            s = "in the " + noun() + ", " + pick(names, rng) + " " +
                pick(kVerbs, rng) + " " + number_token(rng) + " " + noun() +
                (rng.below(2) ? "s" : "");
            break;
        case 3:
            s = "a " + pick(kAdjectives, rng) + " " + noun() + " stood by the " +
                pick(kAdjectives, rng) + " " + noun();
            break;
        case 4:
            s = pick(names, rng) + " and " + pick(names, rng) + " " +
                pick(kVerbs, rng) + " the " + pick(kAdjectives, rng) + " " +
                noun();
            break;
        default:
            s = "when the " + noun() + " was " + pick(kAdjectives, rng) + ", " +
                "the " + noun() + " was " + pick(kAdjectives, rng);
            break;
    }
    s[0] = static_cast<char>(s[0] >= 'a' && s[0] <= 'z' ? s[0] - 'a' + 'A'
                                                        : s[0]);
    int64_t p = rng.below(100);
    s += p < 82 ? "." : (p < 92 ? "?" : "!");
    return s;
}

std::string paragraph(Rng& rng, const std::vector<std::string>& names) {
    std::vector<std::string> topics = {pick(kNouns, rng), pick(kNouns, rng)};
    int64_t n = 3 + rng.below(5);
    std::string out;
    for (int64_t i = 0; i < n; ++i) {
        if (i) out += " ";
        out += sentence(rng, topics, names);
    }
    return out;
}

}  // namespace

std::string synth_text(int64_t min_bytes, uint64_t seed) {
    if (min_bytes < 1) throw ArgumentError("synth_text: min_bytes must be >= 1");
    Rng rng(seed);
    std::string text;
    text.reserve(static_cast<size_t>(min_bytes) + 1024);
    while (static_cast<int64_t>(text.size()) < min_bytes) {
        // a document shares a cast of names across its paragraphs
        std::vector<std::string> names;
        for (int i = 0; i < 3; ++i) names.push_back(make_name(rng));
        int64_t paras = 2 + rng.below(4);
        for (int64_t i = 0; i < paras; ++i) {
            text += paragraph(rng, names);
            text += "\n";
        }
        text += "\n";
    }
    return text;
}

void write_synth_corpus(const std::string& path, int64_t min_bytes,
                        uint64_t seed) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << synth_text(min_bytes, seed);
    if (!out) throw IoError("writing " + path + " failed");
}

}  // namespace cable
