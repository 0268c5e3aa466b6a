#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "cable/blas.hpp"

int main(int argc, char** argv) {
    cable::blas::ensure_fast_kernels(argv);
    cable::blas::use_single_thread();
    return doctest::Context(argc, argv).run();
}
