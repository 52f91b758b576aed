#include "finprompt/cli.hpp"

#include <csignal>
#include <iostream>

namespace {
extern "C" void on_signal(int) { finprompt::cli::request_interrupt(); }
}

int main(int argc, char** argv) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    return finprompt::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
