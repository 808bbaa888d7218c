#include <malloc.h>

#include <string>
#include <vector>

#include "loopsr/cli/app.hpp"

int main(int argc, char** argv) {
  // training allocates many short-lived mid-sized matrices; keep them off mmap
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  return loopsr::cli::run_app(std::vector<std::string>(argv, argv + argc));
}
