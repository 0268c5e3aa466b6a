// Writes a deterministic synthetic corpus for char-level training runs.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cable/errors.hpp"
#include "cable/textgen.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic corpus generator"};
    std::string out_path = "corpus.txt";
    int64_t target_bytes = 8 * 1024 * 1024;
    uint64_t seed = 20240601;
    app.add_option("--out", out_path, "output file");
    app.add_option("--bytes", target_bytes, "minimum output size");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        cable::write_synth_corpus(out_path, target_bytes, seed);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    std::cout << "wrote " << out_path << "\n";
    return 0;
}
