#include <cstdio>

int main() {
  std::puts("h2o: subcommands not wired up yet");
  return 0;
}
