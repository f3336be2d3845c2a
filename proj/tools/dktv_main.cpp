#include <cstdio>
int main() { std::puts("dktv"); return 0; }
