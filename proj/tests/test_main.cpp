#include <gtest/gtest.h>

#include "glsweep/kernels.hpp"

int main(int argc, char** argv) {
  glsweep::kernels::restart_with_working_kernels(argv);
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
