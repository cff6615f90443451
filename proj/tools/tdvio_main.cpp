#include <iostream>

#include "tdvio/commands.hpp"

int main(int argc, char** argv) { return tdvio::tdvio_main(argc, argv, std::cout, std::cerr); }
