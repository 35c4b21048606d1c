#include <ctxseg/cli.hpp>

int main(int argc, char** argv) {
  return ctxseg::cli::run({argv + 1, argv + argc});
}
