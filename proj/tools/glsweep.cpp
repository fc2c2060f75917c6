#include "cli.hpp"

int main(int argc, char** argv) {
  glsweep::kernels::restart_with_working_kernels(argv);
  if (glsweep::kernels::optimized_built() && !glsweep::kernels::optimized_available()) {
    std::cerr << "warning: optimized kernels failed their self-test; using the reference backend\n";
  }
  return glsweep::cli::run(argc, argv);
}
