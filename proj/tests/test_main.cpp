// Copyright 2026 statetune authors. Apache 2.0 License.

#include "catch_amalgamated.hpp"

int main(int argc, char* argv[]) { return Catch::Session().run(argc, argv); }
