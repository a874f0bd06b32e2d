#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "embedpipe/util.hpp"

int main(int argc, char** argv) {
  embedpipe::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
