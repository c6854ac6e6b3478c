#include <cstdio>

int main() {
  std::puts("cantus: placeholder");
  return 0;
}
