#include "segquant/cli.hpp"

int main(int argc, char** argv) {
    return segquant::run_cli(argc, argv);
}
