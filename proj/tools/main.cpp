#include "lidar_sim/cli.hpp"

int main(int argc, char** argv) { return lidar_sim::run(argc, argv); }
